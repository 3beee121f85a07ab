#pragma once

// Cluster-expansion layer: large/small field region classification, power
// series coefficient extraction for the vertex families, weight-system norms,
// the shift transform, polymers from tuple supports, Mayer expansion,
// cross-coupling polymers sigma/f, two-stage component grouping, the cluster
// logarithm and numeric evaluators for the decay bounds.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ahm/lattice.hpp"
#include "ahm/model.hpp"
#include "ahm/operators.hpp"

namespace ahm {

struct Thresholds {
  double p_lambda = 0.0;    // |log lambda|^(2d+1)
  double p0_lambda = 0.0;   // |log lambda|^a, 2d < a < 2d+1
  int r_lambda = 1;         // [ |log lambda|^2 ]
};

// Asymptotic |log lambda|-power formulas; a defaults to the midpoint of
// (2d, 2d+1). Desk-scale runs override the members directly.
Thresholds asymptotic_thresholds(double lambda, int d, double a_exponent = -1.0);

// Block-granular region masks. Contractions peel one block layer per
// [r_lambda]; Omega1 peels two.
struct RegionDecomposition {
  std::vector<char> lambda0, lambda1, omega0, omega1;   // size = block count
  std::vector<char> p_region, q_tilde;                  // P = L1 - O1, Q~ = L1^c
  std::vector<Polymer> p_components, q_tilde_components, q_components;
  Thresholds thresholds;

  bool containment_ok() const;  // Omega1 < Omega0 < Lambda1 < Lambda0
};

RegionDecomposition classify_regions(const Form& rho, const Form& A,
                                     const Form& rho_prime, const Form& A_prime,
                                     const Thresholds& th, const BlockPartition& part);

// One block-layer contraction of a mask.
std::vector<char> contract_mask(const std::vector<char>& mask, const BlockPartition& part,
                                int layers);

enum class VertexFamily {
  Cosine,        // sum_b (cos[e0 K Phi'] - 1), n+m even
  Quartic,       // lambda sum_x (K Phi')^4, n+m = 4
  Log,           // sum_x log[1 + K Phi' / rho0]
  BilinearCos,   // sum_<xy> K Phi(x) K Phi(y) (1 - cos[e0 K Phi'(b)])
  LinearCos,     // sum_(x,b) K Phi(x) (1 - cos[e0 K Phi'(b)])
  VEpsQuadratic, // exact quadratic kernel of V_eps
  Source         // e0 < K Phi', delta J >
};

const char* family_name(VertexFamily f);

struct CoefficientEntry {
  std::vector<int> xi;   // Phi slots (suite cell indices)
  std::vector<int> eta;  // Psi slots; shifted slots are flagged, not moved,
                         // so slot positions stay stable under the shift
  std::uint32_t shift_mask = 0;  // bit j set: eta[j] couples to the shift field
  double value = 0.0;
  double tree_length = 0.0;  // MST over the tuple support, l1 metric

  int shift_count() const {
    std::uint32_t m = shift_mask;
    int c = 0;
    while (m) {
      c += m & 1u;
      m >>= 1;
    }
    return c;
  }
};

struct CoefficientSystem {
  VertexFamily family{};
  std::vector<CoefficientEntry> entries;
  // cells of the operator suite the indices refer to
  std::vector<CellRef> cells;
  const LatticeGeometry* geom = nullptr;
};

// Masks over suite cell indices.
struct RegionMasks {
  std::vector<char> omega0;   // per suite cell
  std::vector<char> lambda1;  // per suite cell
};

// Tuples to evaluate: each item is (xi cells, eta cells) by suite index.
using TupleList = std::vector<std::pair<std::vector<int>, std::vector<int>>>;

// Exact summation formulas of the vertex families over the given tuples with
// kernel K = C^{1/2,loc}. Enumeration is the caller's concern; see
// enumerate_tuples for dense low-order enumeration.
CoefficientSystem extract_coefficients(VertexFamily family, const OperatorSuite& suite,
                                       const RegionMasks& masks, const Couplings& c,
                                       const TupleList& tuples);

// All (n,m)-tuples over the cell subset, capped; above the cap a deterministic
// random sample is drawn. Throws if the raw tuple space exceeds hard_guard.
TupleList enumerate_tuples(const std::vector<int>& cells, int n, int m, std::size_t cap,
                           std::uint64_t seed, std::size_t hard_guard = 100000000);

struct WeightSystem {
  double mass = 0.0;     // must stay below the kernel decay gamma'
  double w_phi = 1.0;    // weight of the integrated field Phi
  double w_psi = 1.0;    // weight of Psi (kappa-hat)
  double w_shift = 0.0;  // weight of the shift field (kappa-hat-2)
};

// ||V||_w = sum_{n,m} max over pinned points of the weighted tuple sums
// (truncated to the stored entries).
double weight_norm(const CoefficientSystem& coeffs, const WeightSystem& w);

// H#(Psi, phi) = H(Psi + phi) by binomial redistribution of the eta slots.
CoefficientSystem shift_coefficients(const CoefficientSystem& coeffs,
                                     const std::vector<double>& phi);

// Pointwise evaluation: sum of value * prod Phi(xi) * prod Psi(eta) * prod phi(shift).
double evaluate_system(const CoefficientSystem& coeffs, const std::vector<double>& phi_field,
                       const std::vector<double>& psi_field,
                       const std::vector<double>& shift_field = {});

// Minimal block cover of a support; empty when it misses Omega1 (filtered).
std::optional<Polymer> polymer_of_support(const std::vector<CellRef>& points,
                                          const BlockPartition& part,
                                          const std::vector<char>& omega1_blocks);

// Mayer expansion: K(Y) = sum_{union X_i = Y} prod (e^{H(X_i)} - 1) over
// subsets of the given polymer family with connected union Y.
using PolymerWeights = std::map<std::vector<int>, double>;
PolymerWeights mayer_polymerize(const PolymerWeights& H, const BlockPartition& part,
                                std::size_t guard = 10000000);

// Single activity K(Y) by Moebius inversion over the blocks of Y
// (cost 2^|Y|, independent of the family size).
double mayer_activity(const PolymerWeights& H, const std::vector<int>& Y,
                      const BlockPartition& part);

// Cross-coupling quadratic form split over rectangular-path polymers, and its
// Mayer-clustered activity f.
struct SigmaFResult {
  PolymerWeights sigma;
  PolymerWeights f;
};
SigmaFResult sigma_and_f(const Eigen::VectorXd& phi, const LatticeOperator& T_full,
                         const std::vector<int>& lambda1_cells,
                         const RegionDecomposition& regions, const BlockPartition& part);

// Two-stage component grouping. Members of one family must be mutually
// non-touching; the union must be connected.
PolymerWeights group_components(const std::vector<PolymerWeights>& families,
                                const BlockPartition& part, std::size_t guard = 10000000);

// Cluster logarithm via truncated (Ursell) coefficients up to order n_max.
struct ClusterLogResult {
  PolymerWeights E;
  bool within_radius = true;  // sup |K#| <= 0.1
  int n_max = 4;
};
ClusterLogResult cluster_log(const PolymerWeights& k_sharp, const BlockPartition& part,
                             int n_max = 4);

// Sum over collections of mutually non-touching polymers of the product of
// weights (the polymer-gas partition function; exact small-instance oracle).
double polymer_partition_function(const PolymerWeights& K, const BlockPartition& part);

// Pointwise check of the large-field indicator bound
// zeta(box) <= exp(-p + ||Phi||_box^2 / p) over all blocks.
struct ZetaBoundReport {
  int blocks = 0;
  int exceeded = 0;    // blocks with zeta = 1
  int violations = 0;  // bound failures (none expected)
  double max_margin = 0.0;  // max zeta / rhs
};
ZetaBoundReport zeta_bound_check(const Form& rho, const Form& A, double threshold,
                                 const BlockPartition& part);

// Right-hand sides of the large-field suppression envelopes.
double large_field_suppression_rhs(double e0, double p_lambda, int q_blocks, double m_min, double gamma1,
                  double phi_norm2, double c);
double intermediate_suppression_rhs(double e0, double p0_lambda, int p_blocks, double phi_norm2);
double interaction_volume_rhs(double c_const, double c0, double e0, double eps, int p_blocks);

// Fitted exponential-decay bound |v| <= c e^{-rate s}.
struct BoundCheck {
  std::string name;
  double fitted_rate = 0.0;      // positive = decaying
  double fitted_prefactor = 0.0; // from the least-squares fit
  double envelope_prefactor = 0.0;  // max |v| e^{rate s}: all points lie under it
  double fit_residual = 0.0;
  int points = 0;
  bool pass = false;  // negative slope with finite data
};
BoundCheck fit_exponential_bound(const std::string& name, const std::vector<double>& sizes,
                                 const std::vector<double>& values);

// Interaction part of the shifted action evaluated on the cells of a block
// set, with the field mapped through C^{1/2,loc}.
double region_interaction(const OperatorSuite& suite, const Couplings& c,
                          const BlockPartition& part, const std::vector<int>& blocks,
                          const Eigen::VectorXd& phi_prime);

// ln of the small-field integral over the cells of a tiny region:
//   Xi = int dmu_I(Phi') chi-hat(Phi') exp(-V(C^{1/2,loc} Phi' + background))
// by Gauss-Legendre quadrature over [-p0, p0]^cells (<= 8 cells). The
// background (suite-sized, already kernel-mapped Psi contribution) models the
// boundary field of the localized integral; empty means zero.
double log_small_field_integral(const OperatorSuite& suite, const Couplings& c,
                                const std::vector<int>& region_cells, double p0_cut,
                                int gl_nodes = 12,
                                const Eigen::VectorXd& background = Eigen::VectorXd());

// Moebius polymer activities over the blocks of a tiny region:
// H(X) = sum_{B subset X} (-1)^{|X \ B|} ln Xi(B); sum_X H(X) = ln Xi(full).
PolymerWeights small_field_activities(const OperatorSuite& suite, const Couplings& c,
                                      const BlockPartition& part,
                                      const std::vector<int>& region_blocks, double p0_cut,
                                      int gl_nodes = 12);

}  // namespace ahm
