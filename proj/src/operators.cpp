#include "ahm/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "ahm/stats.hpp"

namespace ahm {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Gauss-Legendre nodes/weights on [0,1].
void gauss_legendre_01(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double p0, p1, dp;
    for (int iter = 0; iter < 100; ++iter) {
      p0 = 1.0;
      p1 = t;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-15) break;
    }
    x[i] = 0.5 * (1.0 - t);  // reversed; order is irrelevant
    w[i] = 1.0 / ((1.0 - t * t) * dp * dp);
  }
}

Eigen::MatrixXd site_adjacency(const LatticeGeometry& g) {
  const int n = g.site_count();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int b = 0; b < g.bond_count(); ++b) {
    Cell c = g.cell(1, b);
    auto y = c.x;
    y[c.dirs[0]] += 1;
    int s1 = g.site_index(c.x);
    int s2 = g.site_index(y);
    A(s1, s2) = 1.0;
    A(s2, s1) = 1.0;
  }
  return A;
}

}  // namespace

bool LatticeOperator::symmetric(double tol) const {
  return (mat - mat.transpose()).cwiseAbs().maxCoeff() <= tol;
}

double LatticeOperator::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

LatticeOperator build_T_sites(const LatticeGeometry& g, double mu2) {
  LatticeOperator op;
  op.geom = &g;
  op.tag = "T_sites";
  const int n = g.site_count();
  op.cells.reserve(n);
  for (int s = 0; s < n; ++s) op.cells.push_back({0, s});
  // Dirichlet Laplacian: diagonal 2d everywhere, -1 on interior bonds.
  op.mat = (2.0 * g.dim() + mu2) * Eigen::MatrixXd::Identity(n, n) - site_adjacency(g);
  return op;
}

LatticeOperator build_T_bonds(const LatticeGeometry& g, double mA2) {
  LatticeOperator op;
  op.geom = &g;
  op.tag = "T_bonds";
  const int nb = g.bond_count();
  op.cells.reserve(nb);
  for (int b = 0; b < nb; ++b) op.cells.push_back({1, b});
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(g.plaquette_count(), nb);
  for (int p = 0; p < g.plaquette_count(); ++p) {
    Cell c = g.cell(2, p);
    int mu = c.dirs[0], nu = c.dirs[1];
    auto xmu = c.x;
    xmu[mu] += 1;
    auto xnu = c.x;
    xnu[nu] += 1;
    D(p, g.bond_index(c.x.data(), mu)) += 1.0;
    D(p, g.bond_index(xmu.data(), nu)) += 1.0;
    D(p, g.bond_index(xnu.data(), mu)) -= 1.0;
    D(p, g.bond_index(c.x.data(), nu)) -= 1.0;
  }
  op.mat = D.transpose() * D + mA2 * Eigen::MatrixXd::Identity(nb, nb);
  return op;
}

LatticeOperator build_T(const LatticeGeometry& g, const Couplings& c) {
  LatticeOperator site = build_T_sites(g, c.mu * c.mu);
  LatticeOperator bond = build_T_bonds(g, c.m_A() * c.m_A());
  LatticeOperator op;
  op.geom = &g;
  op.tag = "T";
  const int ns = site.size(), nb = bond.size();
  op.cells = site.cells;
  op.cells.insert(op.cells.end(), bond.cells.begin(), bond.cells.end());
  op.mat = Eigen::MatrixXd::Zero(ns + nb, ns + nb);
  op.mat.topLeftCorner(ns, ns) = site.mat;
  op.mat.bottomRightCorner(nb, nb) = bond.mat;
  return op;
}

LatticeOperator inverse(const LatticeOperator& op) {
  LatticeOperator out;
  out.geom = op.geom;
  out.cells = op.cells;
  out.tag = op.tag + "^-1";
  out.mat = op.mat.inverse();
  return out;
}

LatticeOperator restrict_cells(const LatticeOperator& op, const std::vector<int>& keep) {
  LatticeOperator out;
  out.geom = op.geom;
  out.tag = op.tag + "|region";
  const int m = static_cast<int>(keep.size());
  out.cells.reserve(m);
  out.mat.resize(m, m);
  for (int i = 0; i < m; ++i) out.cells.push_back(op.cells[keep[i]]);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) out.mat(i, j) = op.mat(keep[i], keep[j]);
  return out;
}

KernelProfile kernel_decay(const LatticeOperator& op, double fit_min, double fit_max) {
  const int n = op.size();
  std::map<double, double> buckets;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double d = op.cell_distance(i, j);
      double a = std::abs(op.mat(i, j));
      auto it = buckets.find(d);
      if (it == buckets.end())
        buckets[d] = a;
      else
        it->second = std::max(it->second, a);
    }
  KernelProfile prof;
  for (const auto& [d, a] : buckets) {
    prof.distance.push_back(d);
    prof.max_abs.push_back(a);
  }
  if (fit_max < 0) fit_max = prof.distance.back();
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < prof.distance.size(); ++i) {
    if (prof.distance[i] < fit_min || prof.distance[i] > fit_max) continue;
    if (prof.max_abs[i] < 1e-300) continue;
    xs.push_back(prof.distance[i]);
    ys.push_back(std::log(prof.max_abs[i]));
  }
  if (xs.empty()) {
    // identity-like kernel: nothing off-diagonal to fit
    prof.gamma = std::numeric_limits<double>::infinity();
    prof.prefactor = 0.0;
    return prof;
  }
  if (xs.size() < 2) throw std::runtime_error("kernel_decay: profile too flat/degenerate to fit");
  LinearFit f = linear_fit(xs, ys);
  prof.gamma = -f.slope;
  prof.prefactor = std::exp(f.intercept);
  prof.fit_residual = f.relative_residual;
  return prof;
}

double sqrt_quadrature_scalar(const QuadratureSpec& q, double t) {
  double acc = 0.0;
  for (int k = 0; k < q.node_count; ++k) acc += q.weights[k] / (t + q.nodes_u[k] * q.nodes_u[k]);
  return acc;
}

QuadratureSpec make_sqrt_quadrature(double tol, int max_nodes) {
  const double probes[4] = {0.25, 1.0, 4.0, 25.0};
  for (int n = 32; n <= max_nodes; n = n * 3 / 2) {
    std::vector<double> s, w;
    gauss_legendre_01(n, s, w);
    QuadratureSpec q;
    q.node_count = n;
    q.nodes_u.resize(n);
    q.weights.resize(n);
    for (int k = 0; k < n; ++k) {
      double om = 1.0 - s[k];
      q.nodes_u[k] = s[k] / om;
      q.weights[k] = (2.0 / kPi) * w[k] / (om * om);
    }
    double err = 0.0;
    for (double t : probes)
      err = std::max(err, std::abs(sqrt_quadrature_scalar(q, t) * std::sqrt(t) - 1.0));
    q.self_test_error = err;
    if (err <= tol) return q;
    if (n * 3 / 2 > max_nodes) return q;  // caller checks self_test_error
  }
  throw std::runtime_error("sqrt quadrature failed to reach tolerance");
}

LatticeOperator sqrt_covariance(const LatticeOperator& T, const QuadratureSpec& q) {
  if (q.self_test_error > 1e-8)
    throw std::runtime_error("sqrt quadrature residual above tolerance");
  LatticeOperator out;
  out.geom = T.geom;
  out.cells = T.cells;
  out.tag = "C^1/2";
  const int n = T.size();
  out.mat = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd shifted(n, n);
  for (int k = 0; k < q.node_count; ++k) {
    shifted = T.mat;
    shifted.diagonal().array() += q.nodes_u[k] * q.nodes_u[k];
    out.mat += q.weights[k] * shifted.llt().solve(Eigen::MatrixXd::Identity(n, n));
  }
  // functions of a symmetric operator are symmetric; clean up round-off
  out.mat = 0.5 * (out.mat + out.mat.transpose()).eval();
  return out;
}

Localized localize(const LatticeOperator& op, int r_cut) {
  Localized out;
  out.loc = op;
  out.loc.tag = op.tag + ",loc";
  out.delta = op;
  out.delta.tag = "d" + op.tag;
  const int n = op.size();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (op.cell_distance(i, j) < r_cut)
        out.delta.mat(i, j) = 0.0;
      else
        out.loc.mat(i, j) = 0.0;
    }
  return out;
}

OperatorSuite build_suite(const LatticeGeometry& g, const Couplings& c, int r_cut,
                          const QuadratureSpec& q) {
  OperatorSuite s;
  s.quad = q;
  s.r_cut = r_cut;
  s.T = build_T(g, c);
  s.C = inverse(s.T);
  s.C.tag = "C";
  s.Chalf = sqrt_covariance(s.T, q);
  Localized l = localize(s.Chalf, r_cut);
  s.Chalf_loc = std::move(l.loc);
  s.dChalf = std::move(l.delta);
  s.Cinvhalf = s.Chalf;
  s.Cinvhalf.mat = s.T.mat * s.Chalf.mat;
  s.Cinvhalf.tag = "C^-1/2";
  return s;
}

OperatorSuite build_suite_on_cells(const LatticeGeometry& g, const Couplings& c, int r_cut,
                                   const QuadratureSpec& q, const std::vector<int>& keep) {
  OperatorSuite s;
  s.quad = q;
  s.r_cut = r_cut;
  s.T = restrict_cells(build_T(g, c), keep);
  s.T.tag = "T";
  s.C = inverse(s.T);
  s.C.tag = "C";
  s.Chalf = sqrt_covariance(s.T, q);
  Localized l = localize(s.Chalf, r_cut);
  s.Chalf_loc = std::move(l.loc);
  s.dChalf = std::move(l.delta);
  s.Cinvhalf = s.Chalf;
  s.Cinvhalf.mat = s.T.mat * s.Chalf.mat;
  s.Cinvhalf.tag = "C^-1/2";
  return s;
}

InverseSqrtReport inverse_sqrt_bounds(const OperatorSuite& s, int n_max, int probe_fields,
                                      std::uint64_t seed) {
  InverseSqrtReport rep;
  const int n = s.T.size();
  Eigen::MatrixXd B = s.Cinvhalf.mat * s.dChalf.mat;  // C^-1/2 dC^1/2
  Eigen::MatrixXd term = s.Cinvhalf.mat;
  Eigen::MatrixXd sum = term;
  double prev_norm = term.norm();
  rep.converged = true;
  for (int k = 1; k <= n_max; ++k) {
    term = B * term;
    sum += term;
    double tn = term.norm();
    rep.terms = k;
    rep.series_ratio = tn / prev_norm;
    if (tn < 1e-14 * sum.norm()) break;
    if (k >= 8 && rep.series_ratio >= 1.0) {
      rep.converged = false;  // r_cut too small: e^{-gamma' r} not small
      break;
    }
    prev_norm = tn;
  }
  if (rep.converged) {
    Eigen::MatrixXd dense = s.Chalf_loc.mat.partialPivLu().inverse();
    rep.dense_oracle_error = (sum - dense).norm() / dense.norm();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int p = 0; p < probe_fields; ++p) {
      Eigen::VectorXd phi(n);
      for (int i = 0; i < n; ++i) phi(i) = gauss(rng);
      double r = (sum * phi).cwiseAbs().maxCoeff() / phi.cwiseAbs().maxCoeff();
      rep.sup_ratio = std::max(rep.sup_ratio, r);
    }
  }
  return rep;
}

VEpsilonResult v_epsilon(const Eigen::VectorXd& phi_prime, const OperatorSuite& s,
                         const BlockPartition& part) {
  VEpsilonResult out;
  const int n = s.T.size();
  Eigen::VectorXd direct =
      s.Chalf_loc.mat * (s.T.mat * (s.Chalf_loc.mat * phi_prime)) - phi_prime;
  out.total = phi_prime.dot(direct);
  // block split of (C^{1/2} T C^{1/2} - I) - C^{1/2} T d - d T C^{1/2} + d T d;
  // the first piece is the square-root quadrature residue, kept so the block
  // values recompose the total exactly
  Eigen::VectorXd resid =
      s.Chalf.mat * (s.T.mat * (s.Chalf.mat * phi_prime)) - phi_prime;
  Eigen::VectorXd d_phi = s.dChalf.mat * phi_prime;
  Eigen::VectorXd td_phi = s.T.mat * d_phi;
  Eigen::VectorXd cinv_phi = s.Cinvhalf.mat * phi_prime;
  for (int i = 0; i < n; ++i) {
    int b = part.block_of_cell(s.T.cells[i].k, s.T.cells[i].index);
    out.per_block[b] +=
        phi_prime(i) * resid(i) + d_phi(i) * td_phi(i) - 2.0 * cinv_phi(i) * d_phi(i);
  }
  double sum = 0.0;
  for (const auto& [b, v] : out.per_block) sum += v;
  out.recomposition_error = std::abs(sum - out.total);
  return out;
}

namespace {

// Panel Gauss-Legendre with order doubling for the two resolvent integrals.
struct PanelQuad {
  std::vector<double> x8, w8, x16, w16;
  PanelQuad() {
    gauss_legendre_01(8, x8, w8);
    gauss_legendre_01(16, x16, w16);
  }
};

// integrand(x) must return a matrix; integrates over [a,b] adaptively.
void integrate_panel(const std::function<Eigen::MatrixXd(double)>& f, double a, double b,
                     double tol, const PanelQuad& pq, Eigen::MatrixXd& acc, double& err,
                     int depth) {
  Eigen::MatrixXd c8 = Eigen::MatrixXd::Zero(acc.rows(), acc.cols());
  Eigen::MatrixXd c16 = c8;
  for (std::size_t k = 0; k < pq.x8.size(); ++k)
    c8 += (b - a) * pq.w8[k] * f(a + (b - a) * pq.x8[k]);
  for (std::size_t k = 0; k < pq.x16.size(); ++k)
    c16 += (b - a) * pq.w16[k] * f(a + (b - a) * pq.x16[k]);
  double diff = (c16 - c8).cwiseAbs().maxCoeff();
  if (diff <= tol || depth >= 12) {
    acc += c16;
    err += diff;
    return;
  }
  double mid = 0.5 * (a + b);
  integrate_panel(f, a, mid, 0.5 * tol, pq, acc, err, depth + 1);
  integrate_panel(f, mid, b, 0.5 * tol, pq, acc, err, depth + 1);
}

}  // namespace

LogOperatorResult log_operator(const Eigen::MatrixXd& K, double R0, double tol) {
  if (R0 <= 0) throw std::invalid_argument("R0 must be positive");
  const int n = static_cast<int>(K.rows());
  PanelQuad pq;
  LogOperatorResult res;
  res.log_mat = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);

  auto resolvent = [&](double x) -> Eigen::MatrixXd {
    Eigen::MatrixXd s = K;
    s.diagonal().array() += x;
    return s.llt().solve(id);
  };

  // - int_0^{R0} (K+x)^{-1} dx
  Eigen::MatrixXd low = Eigen::MatrixXd::Zero(n, n);
  double err = 0.0;
  integrate_panel([&](double x) { return resolvent(x); }, 0.0, R0, tol, pq, low, err, 0);

  // K int_{R0}^{X} dx/x (K+x)^{-1} on geometric panels, analytic tail beyond.
  double knorm = K.cwiseAbs().rowwise().sum().maxCoeff();
  double xbig = std::max(1e6 * knorm, 1e6 * R0);
  Eigen::MatrixXd high = Eigen::MatrixXd::Zero(n, n);
  double a = R0;
  while (a < xbig) {
    double b = std::min(4.0 * a, xbig);
    integrate_panel([&](double x) { return (resolvent(x) / x).eval(); }, a, b, tol, pq, high, err,
                    0);
    a = b;
  }
  high = K * high;
  // tail: log(I + K/xbig) to second order
  Eigen::MatrixXd kx = K / xbig;
  Eigen::MatrixXd tail = kx - 0.5 * kx * kx;

  res.log_mat = high + tail - low + std::log(R0) * id;
  res.trace_log = res.log_mat.trace();
  res.quad_error = err;
  return res;
}

W1Result w1_series(const OperatorSuite& s, const BlockPartition& part, int n_max,
                   double term_tol) {
  W1Result out;
  const int n = s.T.size();
  Eigen::MatrixXd B = s.Cinvhalf.mat * s.dChalf.mat;
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n);
  out.converged = true;
  double prev = 0.0;
  for (int k = 1; k <= n_max; ++k) {
    P = B * P;
    double tr = P.trace();
    out.total -= tr / k;
    for (int i = 0; i < n; ++i) {
      int b = part.block_of_cell(s.T.cells[i].k, s.T.cells[i].index);
      out.per_block[b] -= P(i, i) / k;
    }
    out.terms = k;
    double mag = std::abs(tr) / k;
    if (mag < term_tol) {
      double ratio = prev > 0 ? mag / prev : 0.0;
      out.truncation_bound = ratio < 1.0 ? mag * ratio / (1.0 - ratio) : mag;
      break;
    }
    if (k >= 8 && prev > 0 && mag > prev) {
      out.converged = false;  // series divergent: r_cut too small
      break;
    }
    prev = mag;
  }
  return out;
}

W2Result w2_split(const LatticeOperator& T_full, const std::vector<int>& lambda1_cells,
                  const BlockPartition& part) {
  W2Result out;
  LatticeOperator T1 = restrict_cells(T_full, lambda1_cells);
  LogOperatorResult lg_full = log_operator(T_full.mat, 1.0);
  LogOperatorResult lg_sub = log_operator(T1.mat, 1.0);
  out.total = 0.5 * (lg_full.trace_log - lg_sub.trace_log);

  const int n = T_full.size();
  const int m = T1.size();
  std::vector<int> block_of(n);
  for (int i = 0; i < n; ++i)
    block_of[i] = part.block_of_cell(T_full.cells[i].k, T_full.cells[i].index);

  std::vector<double> xs, ws;
  gauss_legendre_01(48, xs, ws);
  Eigen::MatrixXd idn = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd idm = Eigen::MatrixXd::Identity(m, m);

  // int_0^1 dr of block-diagonals of (T_L1 + r)^{-1} - (T + r)^{-1}
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double r = xs[k];
    Eigen::MatrixXd rf = T_full.mat;
    rf.diagonal().array() += r;
    Eigen::MatrixXd invf = rf.llt().solve(idn);
    Eigen::MatrixXd rs = T1.mat;
    rs.diagonal().array() += r;
    Eigen::MatrixXd invs = rs.llt().solve(idm);
    for (int i = 0; i < n; ++i) out.per_block[block_of[i]] -= 0.5 * ws[k] * invf(i, i);
    for (int i = 0; i < m; ++i)
      out.per_block[block_of[lambda1_cells[i]]] += 0.5 * ws[k] * invs(i, i);
  }
  // int_1^inf dr/r of block-diagonals of T(T+r)^{-1} - T_L1 (T_L1+r)^{-1},
  // substituted r = 1/u: integrand T (u T + I)^{-1} du on [0,1].
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double u = xs[k];
    Eigen::MatrixXd mf = (u * T_full.mat + idn).partialPivLu().solve(T_full.mat);
    Eigen::MatrixXd ms = (u * T1.mat + idm).partialPivLu().solve(T1.mat);
    for (int i = 0; i < n; ++i) out.per_block[block_of[i]] += 0.5 * ws[k] * mf(i, i);
    for (int i = 0; i < m; ++i)
      out.per_block[block_of[lambda1_cells[i]]] -= 0.5 * ws[k] * ms(i, i);
  }
  for (const auto& [b, v] : out.per_block) out.total_from_blocks += v;
  return out;
}

RandomWalkResult random_walk_inverse(double mu2, double r, int n_max, const LatticeGeometry& g) {
  RandomWalkResult out;
  const int n = g.site_count();
  const double s = mu2 + r;
  const double beta = 1.0 / (2.0 * g.dim() + s);
  Eigen::MatrixXd adj = site_adjacency(g);
  Eigen::MatrixXd dense =
      ((2.0 * g.dim() + s) * Eigen::MatrixXd::Identity(n, n) - adj).inverse();
  Eigen::MatrixXd walk = beta * Eigen::MatrixXd::Identity(n, n);  // n = 0 term
  Eigen::MatrixXd partial = walk;
  out.partial_error.push_back((partial - dense).cwiseAbs().maxCoeff());
  for (int k = 1; k <= n_max; ++k) {
    walk = beta * (adj * walk);
    partial += walk;
    out.partial_error.push_back((partial - dense).cwiseAbs().maxCoeff());
  }
  out.last_partial = partial;
  // the walk expansion converges when mu^2 + r beats the hopping norm
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(adj, Eigen::EigenvaluesOnly);
  double hop_norm = es.eigenvalues().cwiseAbs().maxCoeff();
  out.converged = s > hop_norm && out.partial_error.back() < out.partial_error.front();
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < out.partial_error.size(); ++i) {
    if (out.partial_error[i] <= 1e-300) break;
    xs.push_back(static_cast<double>(i));
    ys.push_back(std::log(out.partial_error[i]));
  }
  if (xs.size() >= 2) out.fitted_ratio = std::exp(linear_fit(xs, ys).slope);
  return out;
}

}  // namespace ahm
