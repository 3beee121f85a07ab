#include <doctest.h>

#include <cmath>
#include <random>

#include "ahm/montecarlo.hpp"
#include "ahm/operators.hpp"

using namespace ahm;

namespace {

constexpr double kPi = 3.14159265358979323846;

Couplings benchmark_point() {
  Couplings c;
  c.mu = 2.0;
  c.e0 = 0.2;
  c.lambda = 0.005;  // m_A = 2, rho0 = 10
  return c;
}

}  // namespace

TEST_CASE("mc config validation") {
  MCConfig cfg;
  cfg.sweeps = 10;
  cfg.thermalization = 20;
  CHECK_THROWS(cfg.validate());
  cfg = MCConfig{};
  cfg.width_A = -1.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("measure_F: v = 0, vortex shift invariance, constant gauge field") {
  LatticeGeometry g(2, 4);
  Couplings c = benchmark_point();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Form A = make_form(g, 1);
  for (auto& v : A.values) v = gauss(rng);
  Form v0 = make_form(g, 2);
  Form F = measure_F(g, A, v0);
  Form dA = exterior_derivative(g, A);
  for (std::size_t p = 0; p < F.size(); ++p) CHECK(F[p] == dA[p]);

  // F(A + n, v) = F(A, v + dn) for integer shifts
  std::uniform_int_distribution<int> pick(-2, 2);
  Form n = make_form(g, 1);
  for (auto& w : n.values) w = pick(rng) * 2.0 * kPi / c.e0;
  Form dn = exterior_derivative(g, n);
  Form A2 = A;
  Form v2 = v0;
  for (std::size_t i = 0; i < A2.size(); ++i) A2[i] += n[i];
  for (std::size_t i = 0; i < v2.size(); ++i) v2[i] += dn[i];
  Form F_lhs = measure_F(g, A2, v0);
  Form F_rhs = measure_F(g, A, v2);
  for (std::size_t p = 0; p < F.size(); ++p)
    CHECK(F_lhs[p] == doctest::Approx(F_rhs[p]).epsilon(1e-10));

  // constant A along one axis: aligned plaquettes carry zero field strength
  Form Ac = make_form(g, 1);
  for (int b = 0; b < g.bond_count(); ++b) {
    Cell cl = g.cell(1, b);
    if (cl.dirs[0] == 0) Ac[b] = 0.7;
  }
  Form Fc = measure_F(g, Ac, v0);
  for (double f : Fc.values) CHECK(f == doctest::Approx(0.0));
}

TEST_CASE("sampler determinism and frozen zero-width limit") {
  LatticeGeometry g(2, 6);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.sweeps = 300;
  cfg.thermalization = 100;
  cfg.stride = 2;
  cfg.bins = 20;
  cfg.seed = 42;
  MeasurementPlan plan;
  ChainData d1 = run_chain(g, c, cfg, plan);
  ChainData d2 = run_chain(g, c, cfg, plan);
  REQUIRE(d1.action_series.size() == d2.action_series.size());
  for (std::size_t i = 0; i < d1.action_series.size(); ++i)
    CHECK(d1.action_series[i] == d2.action_series[i]);  // bit-identical stream

  MCConfig frozen = cfg;
  frozen.width_phi = 1e-14;
  frozen.width_A = 1e-14;
  frozen.autotune = false;
  frozen.vortex_updates = false;
  ChainData df = run_chain(g, c, frozen, plan);
  for (double a : df.action_series)
    CHECK(a == doctest::Approx(df.action_series[0]).epsilon(1e-12));
}

TEST_CASE("incremental action agrees with recomputation") {
  LatticeGeometry g(2, 6);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.sweeps = 600;
  cfg.thermalization = 200;
  cfg.stride = 4;
  cfg.bins = 20;
  MeasurementPlan plan;
  ChainData d = run_chain(g, c, cfg, plan);
  CHECK(d.max_incremental_drift <= 1e-8);
  CHECK(d.acc_phi > 0.0);
  CHECK(d.acc_A > 0.0);
}

TEST_CASE("acceptance rates land in the tuned window") {
  LatticeGeometry g(2, 8);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.sweeps = 3000;
  cfg.thermalization = 1500;
  cfg.stride = 5;
  cfg.bins = 20;
  MeasurementPlan plan;
  ChainData d = run_chain(g, c, cfg, plan);
  CHECK(d.acc_phi >= 0.2);
  CHECK(d.acc_phi <= 0.7);
  CHECK(d.acc_A >= 0.2);
  CHECK(d.acc_A <= 0.7);
}

TEST_CASE("gaussian sampler reproduces the dense kernel at short separations") {
  LatticeGeometry g(2, 8);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.gaussian = true;
  cfg.compact = false;
  cfg.vortex_updates = false;
  cfg.sweeps = 42000;
  cfg.thermalization = 2000;
  cfg.stride = 4;
  cfg.bins = 25;
  cfg.seed = 7;
  MeasurementPlan plan;
  ChainData d = run_chain(g, c, cfg, plan);
  CorrelatorEstimate corr = truncated_two_point(d);

  // oracle: [d (delta d + m_A^2)^{-1} d*](p1, p2)
  LatticeOperator Tb = build_T_bonds(g, c.m_A() * c.m_A());
  Eigen::MatrixXd Cb = Tb.mat.inverse();
  Eigen::MatrixXd D(g.plaquette_count(), g.bond_count());
  D.setZero();
  for (int b = 0; b < g.bond_count(); ++b) {
    Form e = make_form(g, 1);
    e[b] = 1.0;
    Form de = exterior_derivative(g, e);
    for (int p = 0; p < g.plaquette_count(); ++p) D(p, b) = de[p];
  }
  Eigen::MatrixXd Kpp = D * Cb * D.transpose();
  for (std::size_t si = 0; si < corr.separations.size() && si < 4; ++si) {
    double oracle = 0.0;
    for (std::size_t k = 0; k < d.pair_base[si].size(); ++k)
      oracle += Kpp(d.pair_base[si][k], d.pair_dest[si][k]);
    oracle /= d.pair_base[si].size();
    CHECK(std::abs(corr.mean[si] - oracle) <= 3.0 * corr.error[si]);
  }
}

TEST_CASE("n-point truncation: constant data vanishes exactly, variance positive") {
  LatticeGeometry g(2, 6);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.gaussian = true;
  cfg.compact = false;
  cfg.sweeps = 6000;
  cfg.thermalization = 1000;
  cfg.stride = 5;
  cfg.bins = 20;
  MeasurementPlan plan;
  plan.two_point = false;
  plan.npoint_tuples = {{0, 0}, {0, 1, 2}, {0, 1, 2, 3}};
  plan.npoint_translations = 4;
  ChainData d = run_chain(g, c, cfg, plan);

  NPointEstimate var = n_point_truncated(d, 0);
  CHECK(var.n == 2);
  CHECK(var.value > 0.0);  // variance of F at a plaquette

  // synthetic constant data F = 2: moments are 2^{|S|}, so all connected
  // moments with n >= 2 vanish identically
  ChainData synth = d;
  for (auto& rows : synth.npoint_sums)
    for (int b = 0; b < synth.bins; ++b) {
      auto& sums = rows[b];
      double meas = static_cast<double>(synth.meas_per_bin[b]);
      for (std::size_t mask = 1; mask < sums.size(); ++mask)
        sums[mask] = meas * std::pow(2.0, __builtin_popcount(static_cast<unsigned>(mask)));
    }
  for (int which = 0; which < 3; ++which) {
    NPointEstimate e = n_point_truncated(synth, which);
    if (e.n >= 2) CHECK(std::abs(e.value) <= 1e-12);
  }
  CHECK_THROWS(n_point_truncated(d, 99));
}

TEST_CASE("effective mass on exact exponentials") {
  CorrelatorEstimate corr;
  for (int t = 0; t <= 6; ++t) {
    corr.separations.push_back(t);
    corr.mean.push_back(std::exp(-0.5 * t));
    corr.error.push_back(1e-6 * std::exp(-0.5 * t));
  }
  corr.bins = 20;
  MassFit fit = effective_mass(corr);
  CHECK(fit.valid);
  CHECK(fit.m == doctest::Approx(0.5).epsilon(1e-9));

  CorrelatorEstimate corr2;
  for (int t = 0; t <= 6; ++t) {
    corr2.separations.push_back(t);
    corr2.mean.push_back(3.0 * std::exp(-0.7 * t));
    corr2.error.push_back(1e-6);
  }
  corr2.bins = 20;
  MassFit fit2 = effective_mass(corr2);
  CHECK(fit2.m == doctest::Approx(0.7).epsilon(1e-6));  // prefactor independent
}

TEST_CASE("wilson loops: closure validation and the frozen ensemble") {
  LatticeGeometry g(2, 6);
  Couplings c = benchmark_point();
  BondLoop loop = rectangle_loop(g, {1, 1, 0, 0}, 0, 1, 1, 1);
  CHECK(loop_closed(g, loop));
  BondLoop open = loop;
  open.legs.pop_back();
  CHECK_FALSE(loop_closed(g, open));

  MCConfig cfg;
  cfg.sweeps = 400;
  cfg.thermalization = 150;
  cfg.stride = 2;
  cfg.bins = 20;
  cfg.width_phi = 1e-14;  // freeze: A stays 0, W = 1 exactly
  cfg.width_A = 1e-14;
  cfg.autotune = false;
  cfg.vortex_updates = false;
  MeasurementPlan plan;
  plan.two_point = false;
  plan.wilson_pairs.push_back({rectangle_loop(g, {1, 1, 0, 0}, 0, 1, 1, 1),
                               rectangle_loop(g, {3, 3, 0, 0}, 0, 1, 1, 1)});
  ChainData d = run_chain(g, c, cfg, plan);
  WilsonEstimate w = wilson_loop_correlation(d, 0);
  CHECK(std::abs(w.w1 - std::complex<double>(1.0, 0.0)) <= 1e-12);
  CHECK(std::abs(w.connected_real) <= 1e-12);

  MeasurementPlan bad;
  bad.wilson_pairs.push_back({open, loop});
  CHECK_THROWS(run_chain(g, c, cfg, bad));
}

TEST_CASE("wilson loop against its reverse gives a nonnegative variance") {
  LatticeGeometry g(2, 6);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.sweeps = 4000;
  cfg.thermalization = 1000;
  cfg.stride = 3;
  cfg.bins = 20;
  MeasurementPlan plan;
  plan.two_point = false;
  BondLoop l = rectangle_loop(g, {2, 2, 0, 0}, 0, 1, 1, 1);
  BondLoop lrev = l;
  for (auto& [b, s] : lrev.legs) s = -s;  // W_rev = conj(W)
  plan.wilson_pairs.push_back({l, lrev});
  ChainData d = run_chain(g, c, cfg, plan);
  WilsonEstimate w = wilson_loop_correlation(d, 0);
  // <|W|^2> - <W><conj W> is the plug-in variance, nonnegative by construction
  CHECK(w.connected_real >= -1e-12);
}

TEST_CASE("large-field fractions are monotone in the threshold") {
  LatticeGeometry g(2, 8);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.sweeps = 4000;
  cfg.thermalization = 1000;
  cfg.stride = 3;
  cfg.bins = 20;
  MeasurementPlan plan;
  plan.two_point = false;
  plan.large_field_thresholds = {0.05, 0.3, 0.6, 1.0, 1e9};
  plan.large_field_block_side = 2;
  ChainData d = run_chain(g, c, cfg, plan);
  auto rows = large_field_statistics(d);
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(rows[i].fraction <= rows[i - 1].fraction + 1e-12);
  CHECK(rows.back().fraction == doctest::Approx(0.0));  // threshold -> infinity
  CHECK(rows.front().fraction > 0.5);                   // tiny threshold
}

TEST_CASE("chains merge deterministically") {
  LatticeGeometry g(2, 5);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.sweeps = 400;
  cfg.thermalization = 100;
  cfg.stride = 3;
  cfg.bins = 10;
  cfg.chains = 2;
  MeasurementPlan plan;
  ChainData a = run_chains(g, c, cfg, plan);
  ChainData b = run_chains(g, c, cfg, plan);
  CHECK(a.bins == 20);
  REQUIRE(a.sum_FF.size() == b.sum_FF.size());
  for (std::size_t i = 0; i < a.sum_FF.size(); ++i)
    for (std::size_t j = 0; j < a.sum_FF[i].size(); ++j)
      CHECK(a.sum_FF[i][j] == b.sum_FF[i][j]);
}

TEST_CASE("correlator is invariant under the choice of base plaquette") {
  LatticeGeometry g(2, 10);
  Couplings c = benchmark_point();
  MCConfig cfg;
  cfg.gaussian = true;
  cfg.compact = false;
  cfg.sweeps = 30000;
  cfg.thermalization = 3000;
  cfg.stride = 4;
  cfg.bins = 25;
  cfg.seed = 77;
  auto pidx = [&](int x, int y) {
    std::array<int, kMaxDim> xc{x, y, 0, 0};
    return g.plaquette_index(xc.data(), 0, 1);
  };
  // the same separation measured from two different base plaquettes
  MeasurementPlan plan;
  plan.two_point = false;
  plan.npoint_tuples = {{pidx(2, 4), pidx(4, 4)}, {pidx(5, 4), pidx(7, 4)}};
  plan.npoint_translations = 1;
  ChainData d = run_chain(g, c, cfg, plan);
  NPointEstimate a = n_point_truncated(d, 0);
  NPointEstimate b = n_point_truncated(d, 1);
  double sigma = std::sqrt(a.error * a.error + b.error * b.error);
  CHECK(std::abs(a.value - b.value) <= 3.0 * sigma);
}

TEST_CASE("d=3 vortex moves preserve dv = 0 on every cube") {
  LatticeGeometry g(3, 3);
  Couplings c;
  c.mu = 2.0;
  c.e0 = 0.5;
  c.lambda = 0.05;
  MCConfig cfg;
  cfg.sweeps = 220;
  cfg.thermalization = 100;
  cfg.stride = 2;
  cfg.bins = 20;
  cfg.vortex_steps = 1;
  Sampler sampler(g, c, cfg);
  sampler.thermalize();
  for (int sw = 0; sw < 50; ++sw) sampler.sweep();
  auto dv = two_form_d_on_cubes(g, sampler.vortex_field());
  for (double w : dv) CHECK(std::abs(w) <= 1e-9);
  // the vortex field is quantized in 2 pi / e0
  for (double w : sampler.vortex_field().values) {
    double q = w / (2.0 * kPi / c.e0);
    CHECK(std::abs(q - std::round(q)) <= 1e-9);
  }
  CHECK(std::abs(sampler.action_recomputed() - sampler.action()) <=
        1e-8 * std::max(1.0, std::abs(sampler.action())));
}

TEST_CASE("compact/non-compact equivalence on the 2x2 lattice") {
  LatticeGeometry g(2, 2);
  Couplings c;
  c.e0 = 0.5;
  c.mu = 1.0;
  c.lambda = 0.125;  // rho0 = 1: importance sampling covers the higgs ring
  c.alpha = 1.0;
  // quick unit-level run; the acceptance suite pushes sigma below 2%
  EquivalenceResult res = equivalence_check(g, c, 3, 1000000, 11, 0.1);
  CHECK(res.ratio_sigma < 0.06);
  CHECK(std::abs(res.ratio - 1.0) <= 3.0 * res.ratio_sigma);
  CHECK(std::abs(res.obs_ratio - 1.0) <= 3.0 * res.obs_ratio_sigma);
}
