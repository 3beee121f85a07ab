#pragma once

// Dense verification operators on the site (+) bond space: the quadratic-form
// operator T, covariance C = T^{-1}, integral-representation square roots,
// kernel localization, trace-log and determinant identities, conditioning
// splits and random-walk expansions. Everything is dense and oracle-checkable;
// lattices are capped at a few thousand cells.

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "ahm/lattice.hpp"
#include "ahm/model.hpp"

namespace ahm {

// Dense symmetric operator carrying the list of cells its indices refer to,
// so kernel distances survive restriction to sub-regions.
struct LatticeOperator {
  Eigen::MatrixXd mat;
  std::vector<CellRef> cells;
  const LatticeGeometry* geom = nullptr;
  std::string tag;

  int size() const { return static_cast<int>(cells.size()); }
  double cell_distance(int i, int j, Metric m = Metric::Sup) const {
    return geom->cell_distance(cells[i], cells[j], m);
  }
  bool symmetric(double tol = 1e-12) const;
  double min_eigenvalue() const;
};

// T = (-Delta + mu^2) on sites (+) (delta d + m_A^2) on bonds, Dirichlet.
// The site Laplacian includes the frame bonds to the zero exterior
// (diagonal 2d + mu^2); the bond block sums over interior plaquettes.
LatticeOperator build_T(const LatticeGeometry& g, const Couplings& c);

// Site-only and bond-only variants used by 1D chains and sub-block tests.
LatticeOperator build_T_sites(const LatticeGeometry& g, double mu2);
LatticeOperator build_T_bonds(const LatticeGeometry& g, double mA2);

LatticeOperator inverse(const LatticeOperator& op);
LatticeOperator restrict_cells(const LatticeOperator& op, const std::vector<int>& keep);

// Bucketed kernel decay profile with a log-linear fit.
struct KernelProfile {
  std::vector<double> distance;
  std::vector<double> max_abs;  // max |K(x,y)| at that distance
  double gamma = 0.0;           // fitted decay rate (positive = decaying)
  double prefactor = 0.0;       // fitted c in c e^{-gamma d}
  double fit_residual = 0.0;    // relative RMS residual in log space
};
// Fits log max|K| over distances in [fit_min, fit_max] (defaults: 1..max).
KernelProfile kernel_decay(const LatticeOperator& op, double fit_min = 1.0, double fit_max = -1.0);

// Gauss-Legendre quadrature for C^{1/2} = (2/pi) int_0^inf (T + u^2)^{-1} du
// after u = s/(1-s); node count is grown until the scalar self-test
// (reproduction of t^{-1/2}) passes.
struct QuadratureSpec {
  std::vector<double> nodes_u;   // u_k
  std::vector<double> weights;   // includes the (2/pi) du/ds jacobian factor
  int node_count = 0;
  double self_test_error = 0.0;  // max relative error at t in {0.25, 1, 4, 25}
};
QuadratureSpec make_sqrt_quadrature(double tol = 1e-8, int max_nodes = 512);
double sqrt_quadrature_scalar(const QuadratureSpec& q, double t);  // ~ t^{-1/2}

// T^{-1/2} by resolvent quadrature; throws unless the scalar self-test passed.
LatticeOperator sqrt_covariance(const LatticeOperator& T, const QuadratureSpec& q);

// Kernel truncation: loc(x,y) = op(x,y) [dist(x,y) < r_cut], delta = op - loc.
struct Localized {
  LatticeOperator loc;
  LatticeOperator delta;
};
Localized localize(const LatticeOperator& op, int r_cut);

// Invertibility of the localized square root via the Neumann series
// C^{-1/2,loc} = sum_n (C^{-1/2} dC^{1/2})^n C^{-1/2}.
struct InverseSqrtReport {
  bool converged = false;
  int terms = 0;
  double series_ratio = 0.0;       // spectral-norm ratio of successive terms
  double sup_ratio = 0.0;          // max ||C^{-1/2,loc} Phi||_inf / ||Phi||_inf
  double dense_oracle_error = 0.0; // || series - dense inverse || / || dense ||
};

// Bundle of the operators used by the localization checks and the expansion.
struct OperatorSuite {
  LatticeOperator T;
  LatticeOperator C;
  LatticeOperator Chalf;
  LatticeOperator Chalf_loc;
  LatticeOperator dChalf;
  LatticeOperator Cinvhalf;  // T * C^{1/2}
  int r_cut = 0;
  QuadratureSpec quad;
};
OperatorSuite build_suite(const LatticeGeometry& g, const Couplings& c, int r_cut,
                          const QuadratureSpec& q);
// Same, restricted to a cell subset (indices into build_T ordering).
OperatorSuite build_suite_on_cells(const LatticeGeometry& g, const Couplings& c, int r_cut,
                                   const QuadratureSpec& q, const std::vector<int>& keep);

InverseSqrtReport inverse_sqrt_bounds(const OperatorSuite& s, int n_max = 64,
                                      int probe_fields = 16, std::uint64_t seed = 1);

// V_eps(Phi') = <Phi', (C^{1/2,loc} T C^{1/2,loc} - I) Phi'> and its
// per-block decomposition; the block values sum to the total.
struct VEpsilonResult {
  double total = 0.0;
  std::map<int, double> per_block;
  double recomposition_error = 0.0;
};
VEpsilonResult v_epsilon(const Eigen::VectorXd& phi_prime, const OperatorSuite& s,
                         const BlockPartition& part);

// log K by the resolvent representation
//   log K = K int_{R0}^inf dx/x (K+x)^{-1} - int_0^{R0} dx (K+x)^{-1} + log R0,
// evaluated with panel Gauss-Legendre quadrature and an analytic tail.
struct LogOperatorResult {
  Eigen::MatrixXd log_mat;
  double trace_log = 0.0;
  double quad_error = 0.0;  // node-doubling estimate of the quadrature error
};
LogOperatorResult log_operator(const Eigen::MatrixXd& K, double R0, double tol = 1e-10);

// W1 = -sum_n (1/n) Tr[(C^{-1/2} dC^{1/2})^n] with per-block restriction.
struct W1Result {
  bool converged = false;
  int terms = 0;
  double total = 0.0;
  std::map<int, double> per_block;
  double truncation_bound = 0.0;
};
W1Result w1_series(const OperatorSuite& s, const BlockPartition& part, int n_max = 64,
                   double term_tol = 1e-12);

// W2 = 1/2 Tr log T - 1/2 Tr log T_{Lambda1} with the per-block split of the
// two resolvent integrals. lambda1_cells indexes into T_full's cell list.
struct W2Result {
  double total = 0.0;                 // from log_operator on both operators
  double total_from_blocks = 0.0;     // sum of the per-block quadratures
  std::map<int, double> per_block;
};
W2Result w2_split(const LatticeOperator& T_full, const std::vector<int>& lambda1_cells,
                  const BlockPartition& part);

// Hopping (random-walk) expansion of (-Delta + mu^2 + r)^{-1} on sites.
struct RandomWalkResult {
  bool converged = false;
  std::vector<double> partial_error;  // sup-norm error vs dense inverse per order
  double fitted_ratio = 0.0;          // geometric decay ratio of the error
  Eigen::MatrixXd last_partial;
};
RandomWalkResult random_walk_inverse(double mu2, double r, int n_max, const LatticeGeometry& g);

}  // namespace ahm
