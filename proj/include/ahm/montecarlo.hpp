#pragma once

// Metropolis sampling of the compact Villain Abelian Higgs model, the pure
// Gaussian validation model, field-strength and Wilson-loop correlators,
// effective-mass extraction, large-field statistics and the desk-scale
// compact/non-compact equivalence estimate.

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include "ahm/lattice.hpp"
#include "ahm/model.hpp"
#include "ahm/stats.hpp"

namespace ahm {

struct MCConfig {
  std::int64_t sweeps = 100000;
  std::int64_t thermalization = 10000;
  int stride = 10;              // sweeps between measurements
  double width_phi = 0.6;
  double width_A = 0.6;
  int vortex_steps = 1;         // proposals step v by +-k (2pi/e0), k <= this
  bool vortex_updates = true;
  bool compact = true;          // restrict |A_b| <= pi/e0
  bool gaussian = false;        // pure quadratic action (validation mode)
  std::uint64_t seed = 1;
  int chains = 1;
  int bins = 25;                // jackknife bins (>= 20 for error bars)
  int frame = 0;                // boundary frame excluded from measurements
  int t_max = -1;               // max separation; default fits the region
  bool autotune = true;

  void validate() const;
};

// F = dA + v.
Form measure_F(const LatticeGeometry& g, const Form& A, const Form& v);

// Metropolis chain over (phi, A, v). In Gaussian mode the state is a real
// site field and a free real bond field with action
// 1/2<rho,(-D+mu^2)rho> + 1/2<A,(delta d + m_A^2)A> and no vortex updates.
class Sampler {
 public:
  Sampler(const LatticeGeometry& g, const Couplings& c, const MCConfig& cfg);

  void thermalize();
  void sweep();

  double action() const { return action_; }
  double action_recomputed() const;
  // resyncs the incremental action; returns the drift that was absorbed
  double resync_action();

  Form field_strength() const;
  const Form& gauge_field() const { return A_; }
  const Form& vortex_field() const { return v_; }
  const ComplexForm& higgs_field() const { return phi_; }
  const Form& radial_field() const { return rho_; }

  double acceptance_phi() const { return try_phi_ ? double(acc_phi_) / try_phi_ : 0.0; }
  double acceptance_A() const { return try_A_ ? double(acc_A_) / try_A_ : 0.0; }
  double acceptance_v() const { return try_v_ ? double(acc_v_) / try_v_ : 0.0; }
  double width_phi() const { return wphi_; }
  double width_A() const { return wA_; }

  // |Phi| per cell for large-field classification: | |phi| - rho0 | on sites
  // (rho itself in Gaussian mode) and |A| on bonds.
  void field_magnitudes(std::vector<double>& site_mag, std::vector<double>& bond_mag) const;

  const LatticeGeometry& geometry() const { return *g_; }
  const Couplings& couplings() const { return c_; }

 private:
  void tune_widths();
  void update_site(int s);
  void update_bond(int b);
  void update_vortex();
  double site_action_terms(int s, const std::complex<double>& val) const;
  double site_action_terms_gaussian(int s, double val) const;
  double bond_action_terms(int b, double val) const;

  const LatticeGeometry* g_;
  Couplings c_;
  MCConfig cfg_;
  ComplexForm phi_;
  Form rho_;
  Form A_;
  Form v_;
  Form F_;  // cached dA + v
  double action_ = 0.0;
  double wphi_, wA_;
  std::uint64_t acc_phi_ = 0, try_phi_ = 0, acc_A_ = 0, try_A_ = 0, acc_v_ = 0, try_v_ = 0;
  // site s: (bond, neighbor site, +1 if s is the bond tail)
  struct SiteBond {
    int bond;
    int neighbor;
  };
  std::vector<std::vector<SiteBond>> bonds_at_site_;
  struct BondPlaq {
    int plaq;
    double sign;
  };
  std::vector<std::vector<BondPlaq>> plaqs_at_bond_;
  std::vector<std::vector<int>> sites_at_site_;  // interior neighbors
  std::uint64_t sweeps_done_ = 0;
  std::mt19937_64 rng_;
};

// Oriented bond loop: (bond index, +-1) legs. Must be closed.
struct BondLoop {
  std::vector<std::pair<int, int>> legs;
};
BondLoop rectangle_loop(const LatticeGeometry& g, const std::array<int, kMaxDim>& corner, int mu,
                        int nu, int w, int h);
bool loop_closed(const LatticeGeometry& g, const BondLoop& loop);

struct MeasurementPlan {
  bool two_point = true;
  int axis = 0;
  std::vector<std::vector<int>> npoint_tuples;  // 2..4 plaquette indices each
  int npoint_translations = 32;
  std::vector<std::pair<BondLoop, BondLoop>> wilson_pairs;
  std::vector<double> large_field_thresholds;
  int large_field_block_side = 4;
};

// Accumulated per-bin sums of one or more chains.
struct ChainData {
  int bins = 0;
  std::int64_t measurements = 0;
  std::vector<std::int64_t> meas_per_bin;
  // translation-averaged two-point inputs
  std::vector<int> separations;
  std::vector<std::vector<int>> pair_base;   // [sep][pair]
  std::vector<std::vector<int>> pair_dest;
  std::vector<std::vector<double>> sum_FF;   // [bin][sep] summed over pairs
  std::vector<std::vector<double>> sum_F;    // [bin][plaquette]
  // n-point rows (tuple x translation): [row][bin][subset-bitmask]
  std::vector<std::vector<int>> npoint_tuples;
  std::vector<int> npoint_row_tuple;
  std::vector<std::vector<std::vector<double>>> npoint_sums;
  // wilson pairs: [pair][bin]
  std::vector<std::vector<std::complex<double>>> wilson_w1, wilson_w2, wilson_w12;
  // large-field: [threshold][bin] summed exceeded-block fraction
  std::vector<double> thresholds;
  std::vector<std::vector<double>> zeta_fraction;
  // diagnostics
  std::vector<double> action_series;
  double acc_phi = 0, acc_A = 0, acc_v = 0;
  double tau_int = 1.0;
  double max_incremental_drift = 0.0;
};

ChainData run_chain(const LatticeGeometry& g, const Couplings& c, const MCConfig& cfg,
                    const MeasurementPlan& plan);

// Independent chains with derived seeds, merged as extra bins.
ChainData run_chains(const LatticeGeometry& g, const Couplings& c, const MCConfig& cfg,
                     const MeasurementPlan& plan);

struct CorrelatorEstimate {
  std::vector<int> separations;
  std::vector<double> mean;
  std::vector<double> error;
  bool connected = true;
  int bins = 0;
};

// <F(p)F(p+t)> - <F(p)><F(p+t)>, translation averaged, jackknife errors.
CorrelatorEstimate truncated_two_point(const ChainData& data);

struct NPointEstimate {
  int n = 0;
  double value = 0.0;
  double error = 0.0;
};
// Truncated (connected) n-point moment of tuple `which` via the partition sum
// over sample moments; n <= 4.
NPointEstimate n_point_truncated(const ChainData& data, int which);

struct MassFit {
  double m = 0.0;
  double m_err = 0.0;
  int t_min = 0, t_max = 0;
  double chi2_dof = 0.0;
  std::vector<double> m_eff;
  std::vector<double> m_eff_err;
  bool valid = false;
};
// m_eff(t) = log(C(t)/C(t+1)) and a plateau-averaged fit on the window where
// the correlator stays positive and significant.
MassFit effective_mass(const CorrelatorEstimate& corr, double min_significance = 3.0);
// Same, with the whole pipeline re-run under a bin jackknife.
MassFit mass_fit_jackknife(const ChainData& data, double min_significance = 3.0);

struct WilsonEstimate {
  std::complex<double> w1, w2, w12;
  double connected_real = 0.0;
  double error = 0.0;
};
WilsonEstimate wilson_loop_correlation(const ChainData& data, int pair);

struct LargeFieldRow {
  double threshold = 0.0;
  double fraction = 0.0;
  double error = 0.0;
};
std::vector<LargeFieldRow> large_field_statistics(const ChainData& data);

// Shared-stream importance-sampling check of the compact/non-compact
// equivalence on a tiny 2D lattice, with and without a plaquette source.
struct EquivalenceResult {
  double ratio = 0.0;        // Z^NC / ((2pi/e0)^{-|L|+1} Z^C)
  double ratio_sigma = 0.0;
  double obs_ratio = 0.0;    // <e^{-e0<dA,J>}>^NC / <e^{-e0<dA+v,J>}>^C
  double obs_ratio_sigma = 0.0;
  std::int64_t samples = 0;
};
EquivalenceResult equivalence_check(const LatticeGeometry& g, const Couplings& c,
                                    int vortex_range, std::int64_t samples, std::uint64_t seed,
                                    double source_amplitude);

}  // namespace ahm
