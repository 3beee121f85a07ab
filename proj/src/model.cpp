#include "ahm/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace ahm {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double Couplings::m_A() const { return mu * e0 / std::sqrt(8.0 * lambda); }
double Couplings::rho0() const { return mu / std::sqrt(8.0 * lambda); }
double Couplings::E() const {
  if (E_override) return *E_override;
  return mu * mu * mu * mu / (64.0 * lambda);
}

DerivedConstants Couplings::derived() const { return {m_A(), rho0(), E()}; }

bool Couplings::weak_coupling_regime() const {
  double ratio = e0 * e0 / lambda;
  return lambda < 0.1 && e0 * e0 < 0.1 && ratio > 0.01 && ratio < 100.0;
}

void Couplings::validate() const {
  if (e0 <= 0 || lambda <= 0 || mu <= 0 || alpha <= 0)
    throw std::invalid_argument("couplings must be positive");
}

DerivedConstants derived_constants(const Couplings& c) {
  c.validate();
  return c.derived();
}

void SourceField::validate() const {
  double sup = 0.0;
  for (const auto& j : J.values) sup = std::max(sup, std::abs(j));
  if (sup >= 1.0) throw std::invalid_argument("source bound violated: |J| must stay < 1");
}

bool config_valid(const LatticeGeometry& g, const Couplings& c, const GaugeHiggsConfig& cfg,
                  double tol) {
  double step = 2.0 * kPi / c.e0;
  if (cfg.compact) {
    for (double a : cfg.A.values)
      if (std::abs(a) > kPi / c.e0 + tol) return false;
  }
  for (double w : cfg.v.values) {
    double q = w / step;
    if (std::abs(q - std::round(q)) > tol) return false;
  }
  if (g.dim() >= 3) {
    auto dv = two_form_d_on_cubes(g, cfg.v);
    for (double w : dv)
      if (std::abs(w) > tol) return false;
  }
  return true;
}

double action_noncompact(const LatticeGeometry& g, const Form& A) {
  Form dA = exterior_derivative(g, A);
  double s = 0.0;
  for (double f : dA.values) s += f * f;
  return 0.5 * s;
}

double action_higgs(const LatticeGeometry& g, const Couplings& c, const ComplexForm& phi,
                    const Form& A) {
  double kinetic = 0.0;
  for (int b = 0; b < g.bond_count(); ++b) {
    Cell cl = g.cell(1, b);
    auto y = cl.x;
    y[cl.dirs[0]] += 1;
    std::complex<double> hop =
        std::polar(1.0, c.e0 * A[b]) * phi[g.site_index(y)] - phi[g.site_index(cl.x)];
    kinetic += std::norm(hop);
  }
  double potential = 0.0;
  const double E = c.E();
  for (const auto& p : phi.values) {
    double n2 = std::norm(p);
    potential += c.lambda * n2 * n2 - 0.25 * c.mu * c.mu * n2 + E;
  }
  return 0.5 * kinetic + potential;
}

double villain_weight(const LatticeGeometry& g, const Couplings& c, const Form& A, const Form& v) {
  double step = 2.0 * kPi / c.e0;
  for (double w : v.values) {
    double q = w / step;
    if (std::abs(q - std::round(q)) > 1e-9)
      throw std::invalid_argument("vortex field must take values in (2 pi / e0) Z");
  }
  if (g.dim() >= 3) {
    auto dv = two_form_d_on_cubes(g, v);
    for (double w : dv)
      if (std::abs(w) > 1e-9) throw std::invalid_argument("vortex constraint dv = 0 violated");
  }
  Form dA = exterior_derivative(g, A);
  double s = 0.0;
  for (int p = 0; p < g.plaquette_count(); ++p) {
    double f = dA[p] + v[p];
    s += f * f;
  }
  return 0.5 * s;
}

double action_shifted(const LatticeGeometry& g, const Couplings& c, const Form& rho, const Form& A,
                      const Form& v) {
  const double rho0 = c.rho0();
  for (double r : rho.values)
    if (r <= -rho0) throw std::domain_error("rho must stay above -rho0");

  Form dA = exterior_derivative(g, A);
  double s = 0.0;
  for (int p = 0; p < g.plaquette_count(); ++p) {
    double f = dA[p] + v[p];
    s += 0.5 * f * f;
  }
  const double mA2 = c.m_A() * c.m_A();
  const double e0 = c.e0;
  for (int b = 0; b < g.bond_count(); ++b) {
    Cell cl = g.cell(1, b);
    auto yc = cl.x;
    yc[cl.dirs[0]] += 1;
    double rx = rho[g.site_index(cl.x)];
    double ry = rho[g.site_index(yc)];
    double a = A[b];
    double one_minus_cos = 1.0 - std::cos(e0 * a);
    s += 0.5 * mA2 * a * a;
    s += 0.5 * (ry - rx) * (ry - rx);
    s += rho0 * rho0 * (one_minus_cos - 0.5 * e0 * e0 * a * a);
    s += rho0 * (ry + rx) * one_minus_cos;
    s += ry * rx * one_minus_cos;
  }
  const double mu2 = c.mu * c.mu;
  const double cubic = std::sqrt(2.0 * c.lambda) * c.mu;
  for (double r : rho.values) {
    s += 0.5 * mu2 * r * r;
    s += c.lambda * r * r * r * r + cubic * r * r * r - std::log1p(r / rho0);
  }
  return s;
}

namespace {

// Site Laplacian delta d from interior bonds (kernel = constants).
Eigen::MatrixXd site_laplacian_interior(const LatticeGeometry& g) {
  const int n = g.site_count();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int b = 0; b < g.bond_count(); ++b) {
    Cell c = g.cell(1, b);
    auto y = c.x;
    y[c.dirs[0]] += 1;
    int s1 = g.site_index(c.x);
    int s2 = g.site_index(y);
    M(s1, s1) += 1.0;
    M(s2, s2) += 1.0;
    M(s1, s2) -= 1.0;
    M(s2, s1) -= 1.0;
  }
  return M;
}

Eigen::MatrixXd restricted_squared_laplacian(const LatticeGeometry& g, int x0) {
  Eigen::MatrixXd M = site_laplacian_interior(g);
  Eigen::MatrixXd M2 = M * M;
  const int n = g.site_count();
  Eigen::MatrixXd Q(n - 1, n - 1);
  int ri = 0;
  for (int i = 0; i < n; ++i) {
    if (i == x0) continue;
    int rj = 0;
    for (int j = 0; j < n; ++j) {
      if (j == x0) continue;
      Q(ri, rj) = M2(i, j);
      ++rj;
    }
    ++ri;
  }
  return Q;
}

}  // namespace

double gauge_fix_constant(const LatticeGeometry& g, double alpha, int x0) {
  if (alpha <= 0) throw std::invalid_argument("alpha must be positive");
  if (x0 < 0 || x0 >= g.site_count()) throw std::invalid_argument("x0 outside lattice");
  const int n = g.site_count();
  Eigen::MatrixXd Q = restricted_squared_laplacian(g, x0);
  Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("restricted Laplacian^2 is not positive definite");
  double logdet = 0.0;
  Eigen::MatrixXd Lm = llt.matrixL();
  for (int i = 0; i < n - 1; ++i) logdet += 2.0 * std::log(Lm(i, i));
  return 0.5 * (n - 1) * std::log(2.0 * kPi / alpha) - 0.5 * logdet;
}

double gauge_fixing(const LatticeGeometry& g, const Couplings& c, const Form& A, int x0) {
  Form dA0 = codifferential(g, A);
  double s = 0.0;
  for (double v : dA0.values) s += v * v;
  return 0.5 * c.alpha * s + gauge_fix_constant(g, c.alpha, x0);
}

McEstimate gauge_average_ratio_mc(const LatticeGeometry& g, double alpha, int x0, const Form& A,
                                  int samples, std::uint64_t seed) {
  const int n = g.site_count();
  Eigen::MatrixXd M = site_laplacian_interior(g);
  Eigen::MatrixXd Q = restricted_squared_laplacian(g, x0);
  Eigen::LLT<Eigen::MatrixXd> llt((alpha * Q).eval());
  if (llt.info() != Eigen::Success) throw std::runtime_error("gauge sampler setup failed");

  Form dAv = codifferential(g, A);
  Eigen::VectorXd deltaA(n);
  for (int i = 0; i < n; ++i) deltaA(i) = dAv[i];

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd Lt = llt.matrixU();  // theta_res = Lt^{-1} z has covariance (alpha Q)^{-1}
  auto upper = Lt.triangularView<Eigen::Upper>();

  double sum = 0.0, sum2 = 0.0;
  Eigen::VectorXd z(n - 1), theta_res(n - 1), theta(n);
  const double quad = -0.5 * alpha * deltaA.squaredNorm();
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < n - 1; ++i) z(i) = gauss(rng);
    theta_res = upper.solve(z);
    int ri = 0;
    for (int i = 0; i < n; ++i) theta(i) = (i == x0) ? 0.0 : theta_res(ri++);
    Eigen::VectorXd omega = M * theta;
    // exp(-alpha/2 (||dA + omega||^2 - ||omega||^2)), antithetic in omega
    double cross = alpha * deltaA.dot(omega);
    double w = std::exp(quad) * 0.5 * (std::exp(-cross) + std::exp(cross));
    sum += w;
    sum2 += w * w;
  }
  McEstimate e;
  e.mean = sum / samples;
  double var = sum2 / samples - e.mean * e.mean;
  e.sigma = std::sqrt(std::max(0.0, var) / samples);
  return e;
}

std::complex<double> source_pairing(const LatticeGeometry& g, const Couplings& c, const Form& A,
                                    const Form& v, const SourceField& J) {
  J.validate();
  Form dA = exterior_derivative(g, A);
  std::complex<double> acc = 0.0;
  for (int p = 0; p < g.plaquette_count(); ++p) acc += (dA[p] + v[p]) * J.J[p];
  return c.e0 * acc;
}

NormalizationLedger normalization_ledger(const LatticeGeometry& g, const Couplings& c) {
  NormalizationLedger n;
  const double sites = g.site_count();
  n.theta_volume_log = sites * std::log(2.0 * kPi);
  n.polar_jacobian_log = sites * std::log(c.rho0());
  n.dropped_total_log = sites * std::log(2.0 * kPi * c.rho0());
  n.compact_prefactor_log = (-sites + 1.0) * std::log(2.0 * kPi / c.e0);
  return n;
}

}  // namespace ahm
