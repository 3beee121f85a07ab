#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "ahm/expansion.hpp"

using namespace ahm;

namespace {

Couplings bench() {
  Couplings c;
  c.mu = 2.0;
  c.e0 = 0.2;
  c.lambda = 0.005;
  return c;
}

OperatorSuite small_suite(const LatticeGeometry& g, const Couplings& c, int r_cut) {
  QuadratureSpec q = make_sqrt_quadrature(1e-8);
  return build_suite(g, c, r_cut, q);
}

RegionMasks all_masks(const OperatorSuite& s) {
  RegionMasks m;
  m.omega0.assign(s.T.size(), 1);
  m.lambda1.assign(s.T.size(), 1);
  return m;
}

// independent brute-force oracle for the grouped-component weights: direct
// bitmask enumeration over all member selections
PolymerWeights brute_group(const std::vector<PolymerWeights>& families,
                           const BlockPartition& part) {
  struct M {
    int fam;
    std::vector<int> blocks;
    double w;
  };
  std::vector<M> ms;
  for (std::size_t f = 0; f < families.size(); ++f)
    for (const auto& [p, w] : families[f]) ms.push_back({static_cast<int>(f), p, w});
  PolymerWeights out;
  const int n = static_cast<int>(ms.size());
  auto touching = [&](const std::vector<int>& a, const std::vector<int>& b) {
    for (int x : a)
      for (int y : b)
        if (x == y || part.adjacent(x, y)) return true;
    return false;
  };
  for (int mask = 1; mask < (1 << n); ++mask) {
    bool valid = true;
    double prod = 1.0;
    std::set<int> blocks;
    for (int i = 0; i < n && valid; ++i) {
      if (!(mask & (1 << i))) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!(mask & (1 << j))) continue;
        if (ms[i].fam == ms[j].fam && touching(ms[i].blocks, ms[j].blocks)) valid = false;
      }
      prod *= ms[i].w;
      blocks.insert(ms[i].blocks.begin(), ms[i].blocks.end());
    }
    if (!valid) continue;
    std::vector<int> u(blocks.begin(), blocks.end());
    if (!blocks_connected(u, part)) continue;
    out[u] += prod;
  }
  return out;
}

}  // namespace

TEST_CASE("asymptotic threshold formulas") {
  Thresholds t = asymptotic_thresholds(0.005, 2);
  double l = std::abs(std::log(0.005));
  CHECK(t.p_lambda == doctest::Approx(std::pow(l, 5.0)));
  CHECK(t.p0_lambda == doctest::Approx(std::pow(l, 4.5)));  // midpoint of (4, 5)
  CHECK(t.r_lambda == static_cast<int>(l * l));
}

TEST_CASE("region classification: all-small, single spike, random oracle") {
  LatticeGeometry g(2, 8);
  BlockPartition part(g, 2);  // 4x4 blocks
  Thresholds th;
  th.p_lambda = 2.0;
  th.p0_lambda = 1.0;
  th.r_lambda = 2;

  Form rho = make_form(g, 0), A = make_form(g, 1);
  Form rhop = make_form(g, 0), Ap = make_form(g, 1);
  RegionDecomposition r0 = classify_regions(rho, A, rhop, Ap, th, part);
  for (int b = 0; b < part.block_count(); ++b) CHECK(r0.lambda0[b] == 1);
  CHECK(r0.containment_ok());
  CHECK(r0.q_components.empty());

  // single spike in one block: that block leaves Lambda0, and Lambda1
  // excludes its one-block collar
  Form rho_spike = rho;
  rho_spike[g.site_index(std::array<int, kMaxDim>{4, 4, 0, 0})] = 2.0 * th.p_lambda;
  RegionDecomposition r1 = classify_regions(rho_spike, A, rhop, Ap, th, part);
  int spike_block = part.block_of_site(g.site_index(std::array<int, kMaxDim>{4, 4, 0, 0}));
  CHECK(r1.lambda0[spike_block] == 0);
  CHECK(r1.q_components.size() == 1);
  for (int b = 0; b < part.block_count(); ++b) {
    if (part.block_grid_distance(b, spike_block) <= 1)
      CHECK(r1.lambda1[b] == 0);
    else
      CHECK(r1.lambda1[b] == 1);
  }
  CHECK(r1.containment_ok());

  // random fields vs a direct scan oracle
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 1.5);
  for (auto& v : rho.values) v = gauss(rng);
  for (auto& v : A.values) v = gauss(rng);
  for (auto& v : rhop.values) v = gauss(rng);
  for (auto& v : Ap.values) v = gauss(rng);
  RegionDecomposition r2 = classify_regions(rho, A, rhop, Ap, th, part);
  for (int b = 0; b < part.block_count(); ++b) {
    double sup = 0.0;
    for (int s = 0; s < g.site_count(); ++s)
      if (part.block_of_site(s) == b) sup = std::max(sup, std::abs(rho[s]));
    for (int bo = 0; bo < g.bond_count(); ++bo)
      if (part.block_of_cell(1, bo) == b) sup = std::max(sup, std::abs(A[bo]));
    CHECK(r2.lambda0[b] == (sup < th.p_lambda ? 1 : 0));
  }
  CHECK(r2.containment_ok());
}

TEST_CASE("coefficient spot values with the identity kernel") {
  LatticeGeometry g(2, 4);
  Couplings c = bench();
  OperatorSuite s = small_suite(g, c, 2);
  s.Chalf_loc.mat = Eigen::MatrixXd::Identity(s.T.size(), s.T.size());
  RegionMasks masks = all_masks(s);

  // quartic: a(x,x,x,x) = lambda
  int site = 0;  // suite cells start with sites
  TupleList t4 = {{{site, site, site, site}, {}}};
  CoefficientSystem quartic = extract_coefficients(VertexFamily::Quartic, s, masks, c, t4);
  CHECK(quartic.entries[0].value == doctest::Approx(c.lambda).epsilon(1e-12));

  // cosine: a(b,b) = -e0^2/2 at each bond
  int bond = g.site_count();  // first bond cell
  TupleList t2 = {{{bond, bond}, {}}};
  CoefficientSystem cosine = extract_coefficients(VertexFamily::Cosine, s, masks, c, t2);
  CHECK(cosine.entries[0].value == doctest::Approx(-c.e0 * c.e0 / 2.0).epsilon(1e-12));

  // source: a = e0 at coincident bonds
  TupleList ts = {{{bond}, {bond}}};
  CoefficientSystem source = extract_coefficients(VertexFamily::Source, s, masks, c, ts);
  CHECK(source.entries[0].value == doctest::Approx(c.e0).epsilon(1e-12));

  // log vertex first order: +1/rho0 at n+m=1 (the printed series of +log)
  TupleList t1 = {{{site}, {}}};
  CoefficientSystem logv = extract_coefficients(VertexFamily::Log, s, masks, c, t1);
  CHECK(logv.entries[0].value == doctest::Approx(1.0 / c.rho0()).epsilon(1e-12));
}

TEST_CASE("coefficients with the true kernel: symmetry, support, tree decay") {
  LatticeGeometry g(2, 8);
  Couplings c = bench();
  OperatorSuite s = small_suite(g, c, 3);
  RegionMasks masks = all_masks(s);
  // only cells in the left half belong to Omega0: support indicator test
  for (int i = 0; i < s.T.size(); ++i) {
    Cell cl = g.cell(s.T.cells[i].k, s.T.cells[i].index);
    if (cl.x[0] >= 4) masks.omega0[i] = 0;
  }

  std::vector<int> sites;
  for (int i = 0; i < s.T.size(); ++i)
    if (s.T.cells[i].k == 0) sites.push_back(i);

  TupleList tuples = enumerate_tuples(std::vector<int>(sites.begin(), sites.begin() + 12), 4, 0,
                                      200, 11);
  CoefficientSystem sys = extract_coefficients(VertexFamily::Quartic, s, masks, c, tuples);
  std::map<std::vector<int>, double> by_sorted;
  for (const auto& e : sys.entries) {
    auto key = e.xi;
    std::sort(key.begin(), key.end());
    auto it = by_sorted.find(key);
    if (it == by_sorted.end())
      by_sorted[key] = e.value;
    else
      CHECK(e.value == doctest::Approx(it->second).epsilon(1e-10));
  }

  std::vector<double> lens, vals;
  for (const auto& e : sys.entries) {
    if (std::abs(e.value) < 1e-300) continue;
    lens.push_back(e.tree_length);
    vals.push_back(e.value);
  }
  BoundCheck bc = fit_exponential_bound("quartic-decay", lens, vals);
  CHECK(bc.pass);

  // source-family coefficients vanish when the J slot leaves Omega0;
  // choose an in/out bond pair within the localization range
  int bond_out = -1, bond_in = -1;
  for (int i = 0; i < s.T.size() && bond_in < 0; ++i) {
    if (s.T.cells[i].k != 1 || !masks.omega0[i]) continue;
    for (int j = 0; j < s.T.size(); ++j) {
      if (s.T.cells[j].k != 1 || masks.omega0[j]) continue;
      if (s.T.cell_distance(i, j) < s.r_cut) {
        bond_in = i;
        bond_out = j;
        break;
      }
    }
  }
  REQUIRE(bond_in >= 0);
  TupleList tsrc = {{{bond_in}, {bond_out}}, {{bond_out}, {bond_in}}};
  CoefficientSystem src = extract_coefficients(VertexFamily::Source, s, masks, c, tsrc);
  CHECK(src.entries[0].value == 0.0);  // eta slot outside Omega0
  CHECK(src.entries[1].value != 0.0);  // eta slot inside
}

TEST_CASE("weight norm: empty, single entry, coupling scaling") {
  LatticeGeometry g(2, 6);
  Couplings c = bench();
  OperatorSuite s = small_suite(g, c, 2);

  CoefficientSystem empty;
  empty.geom = &g;
  WeightSystem w{0.1, 3.0, 1.0, 0.0};
  CHECK(weight_norm(empty, w) == 0.0);

  CoefficientSystem single;
  single.geom = &g;
  single.cells = s.T.cells;
  CoefficientEntry e;
  e.xi = {0, 0};
  e.value = 0.7;
  e.tree_length = 0.0;
  single.entries.push_back(e);
  CHECK(weight_norm(single, w) == doctest::Approx(3.0 * 3.0 * 0.7));

  // cosine-family norm shrinks at least as fast as the e0^{1-2eps} envelope;
  // masses held fixed, lambda = mu^2 e0^2 / (8 m_A^2) follows the coupling
  double eps = 0.1;
  std::vector<double> e0s = {0.1, 0.2, 0.4};
  std::vector<double> norms;
  for (double e0 : e0s) {
    Couplings cc = c;
    cc.e0 = e0;
    cc.lambda = cc.mu * cc.mu * e0 * e0 / (8.0 * 2.0 * 2.0);  // m_A = 2 fixed
    OperatorSuite ss = small_suite(g, cc, 2);
    RegionMasks masks = all_masks(ss);
    std::vector<int> bonds;
    for (int i = 0; i < ss.T.size(); ++i)
      if (ss.T.cells[i].k == 1) bonds.push_back(i);
    bonds.resize(10);
    TupleList tl = enumerate_tuples(bonds, 2, 0, 100, 3);
    CoefficientSystem sys = extract_coefficients(VertexFamily::Cosine, ss, masks, cc, tl);
    WeightSystem ws{0.05, std::pow(e0, -eps), 1.0, 0.0};  // 4r = p_{0,lambda} ~ e0^{-eps}
    norms.push_back(weight_norm(sys, ws));
  }
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < e0s.size(); ++i) {
    lx.push_back(std::log(e0s[i]));
    ly.push_back(std::log(norms[i]));
  }
  double p = (ly.back() - ly.front()) / (lx.back() - lx.front());
  CHECK(p >= (1.0 - 2.0 * eps) * 0.8);
}

TEST_CASE("shift transform: identity, linear case, pointwise and norm relations") {
  LatticeGeometry g(2, 4);
  Couplings c = bench();
  OperatorSuite s = small_suite(g, c, 2);
  const int n = s.T.size();

  CoefficientSystem sys;
  sys.geom = &g;
  sys.cells = s.T.cells;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int k = 0; k < 10; ++k) {
    CoefficientEntry e;
    e.eta = {pick(rng), pick(rng)};
    e.value = gauss(rng);
    std::vector<CellRef> pts{s.T.cells[e.eta[0]], s.T.cells[e.eta[1]]};
    e.tree_length = minimal_tree_length(g, pts, Metric::L1);
    sys.entries.push_back(e);
  }

  std::vector<double> zero(n, 0.0), phi(n), psi(n);
  for (auto& v : phi) v = gauss(rng);
  for (auto& v : psi) v = gauss(rng);

  CoefficientSystem ident = shift_coefficients(sys, zero);
  CHECK(evaluate_system(ident, {}, psi, zero) ==
        doctest::Approx(evaluate_system(sys, {}, psi)).epsilon(1e-12));

  // degree-1 system: shifted constant term = v phi(eta)
  CoefficientSystem lin;
  lin.geom = &g;
  lin.cells = s.T.cells;
  CoefficientEntry le;
  le.eta = {3};
  le.value = 2.5;
  lin.entries.push_back(le);
  CoefficientSystem lsh = shift_coefficients(lin, phi);
  // evaluating at Psi = 0 isolates the shifted constant term
  double constant = evaluate_system(lsh, {}, zero, phi);
  CHECK(constant == doctest::Approx(2.5 * phi[3]).epsilon(1e-12));

  // H#(Psi, phi) = H(Psi + phi) pointwise
  CoefficientSystem shifted = shift_coefficients(sys, phi);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& v : psi) v = gauss(rng);
    std::vector<double> sum(n);
    for (int i = 0; i < n; ++i) sum[i] = psi[i] + phi[i];
    double direct = evaluate_system(sys, {}, sum);
    double via_shift = evaluate_system(shifted, {}, psi, phi);
    CHECK(std::abs(direct - via_shift) <= 1e-10 * std::max(1.0, std::abs(direct)));
  }

  // norm relation ||H#||_{k,k2} = ||H||_{k+k2}
  std::vector<double> ones(n, 1.0);
  CoefficientSystem sh1 = shift_coefficients(sys, ones);
  WeightSystem w_shift{0.07, 1.0, 1.0, 2.0};  // kappa = 1, kappa2 = 2
  WeightSystem w_plain{0.07, 1.0, 3.0, 0.0};  // kappa + kappa2 = 3
  CHECK(weight_norm(sh1, w_shift) == doctest::Approx(weight_norm(sys, w_plain)).epsilon(1e-10));
}

TEST_CASE("polymer of support: single block, adjacency, cover oracle, filter") {
  LatticeGeometry g(2, 8);
  BlockPartition part(g, 2);
  std::vector<char> omega1(part.block_count(), 1);

  auto site = [&](int x, int y) {
    return CellRef{0, g.site_index(std::array<int, kMaxDim>{x, y, 0, 0})};
  };
  auto p1 = polymer_of_support({site(1, 1)}, part, omega1);
  REQUIRE(p1.has_value());
  CHECK(p1->size() == 1);
  CHECK(p1->connected);

  auto p2 = polymer_of_support({site(1, 1), site(2, 1)}, part, omega1);
  REQUIRE(p2.has_value());
  CHECK(p2->size() == 2);
  CHECK(p2->connected);

  auto p3 = polymer_of_support({site(0, 0), site(7, 7)}, part, omega1);
  REQUIRE(p3.has_value());
  CHECK_FALSE(p3->connected);
  std::set<int> expect{part.block_of_site(site(0, 0).index),
                       part.block_of_site(site(7, 7).index)};
  CHECK(std::set<int>(p3->blocks.begin(), p3->blocks.end()) == expect);

  std::vector<char> omega1_none(part.block_count(), 0);
  CHECK_FALSE(polymer_of_support({site(1, 1)}, part, omega1_none).has_value());
}

TEST_CASE("mayer expansion: single polymer, zero H, partition identity") {
  LatticeGeometry g(2, 12);
  BlockPartition part(g, 2);  // 6x6 block grid

  PolymerWeights H;
  H[{0}] = 0.03;
  PolymerWeights K = mayer_polymerize(H, part);
  CHECK(K[{0}] == doctest::Approx(std::expm1(0.03)).epsilon(1e-14));

  PolymerWeights H0;
  H0[{0}] = 0.0;
  H0[{1}] = 0.0;
  for (const auto& [p, v] : mayer_polymerize(H0, part)) CHECK(v == 0.0);

  // 6-block line (bottom row of the grid): polymers = intervals
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  PolymerWeights Hline;
  double Hsum = 0.0;
  for (int a = 0; a < 6; ++a)
    for (int b = a; b < 6; ++b) {
      std::vector<int> blocks;
      for (int k = a; k <= b; ++k) blocks.push_back(k);
      double h = u(rng);
      Hline[blocks] = h;
      Hsum += h;
    }
  PolymerWeights Kline = mayer_polymerize(Hline, part);
  double lhs = polymer_partition_function(Kline, part);
  CHECK(lhs == doctest::Approx(std::exp(Hsum)).epsilon(1e-10));
}

TEST_CASE("sigma and f: zero field, single component, total and decay") {
  LatticeGeometry g(2, 12);
  Couplings c = bench();
  BlockPartition part(g, 2);
  LatticeOperator T = build_T(g, c);

  Thresholds th;
  th.p_lambda = 10.0;
  th.p0_lambda = 5.0;
  th.r_lambda = 2;
  RegionDecomposition regions;
  regions.thresholds = th;
  const int nb = part.block_count();
  regions.lambda0.assign(nb, 1);
  regions.lambda1.assign(nb, 1);
  regions.omega0.assign(nb, 1);
  regions.omega1.assign(nb, 1);
  regions.p_region.assign(nb, 0);
  regions.q_tilde.assign(nb, 0);
  std::vector<int> qblocks;
  for (int b = 0; b < nb; ++b) {
    auto bc = part.block_coords(b);
    if (bc[0] == 0 || bc[0] == part.blocks_per_axis(0) - 1) {
      regions.lambda1[b] = 0;
      regions.q_tilde[b] = 1;
      qblocks.push_back(b);
    }
  }
  regions.q_tilde_components = connect_blocks(qblocks, part);
  REQUIRE(regions.q_tilde_components.size() == 2);

  std::vector<int> l1cells;
  for (int i = 0; i < T.size(); ++i) {
    int b = part.block_of_cell(T.cells[i].k, T.cells[i].index);
    if (regions.lambda1[b]) l1cells.push_back(i);
  }

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(T.size());
  SigmaFResult r0 = sigma_and_f(zero, T, l1cells, regions, part);
  CHECK(r0.sigma.empty());

  Eigen::VectorXd phi(T.size());
  std::mt19937_64 rng(19);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < T.size(); ++i) phi(i) = gauss(rng);
  SigmaFResult r = sigma_and_f(phi, T, l1cells, regions, part);
  CHECK(!r.sigma.empty());
  double sigma_sum = 0.0;
  for (const auto& [p, v] : r.sigma) sigma_sum += v;
  {
    // oracle: (1/2) sum over cells in different components of phi M phi
    std::vector<char> in_l1(T.size(), 0);
    for (int i : l1cells) in_l1[i] = 1;
    std::vector<int> out_cells;
    for (int i = 0; i < T.size(); ++i)
      if (!in_l1[i]) out_cells.push_back(i);
    Eigen::MatrixXd Tin(l1cells.size(), l1cells.size());
    for (std::size_t a = 0; a < l1cells.size(); ++a)
      for (std::size_t b = 0; b < l1cells.size(); ++b)
        Tin(a, b) = T.mat(l1cells[a], l1cells[b]);
    Eigen::MatrixXd B(out_cells.size(), l1cells.size());
    for (std::size_t a = 0; a < out_cells.size(); ++a)
      for (std::size_t b = 0; b < l1cells.size(); ++b)
        B(a, b) = T.mat(out_cells[a], l1cells[b]);
    Eigen::MatrixXd M = B * Tin.llt().solve(B.transpose());
    std::vector<int> comp_of_block(part.block_count(), -1);
    for (std::size_t k = 0; k < regions.q_tilde_components.size(); ++k)
      for (int b : regions.q_tilde_components[k].blocks) comp_of_block[b] = static_cast<int>(k);
    double oracle = 0.0;
    for (std::size_t a = 0; a < out_cells.size(); ++a)
      for (std::size_t b = 0; b < out_cells.size(); ++b) {
        int ca = comp_of_block[part.block_of_cell(T.cells[out_cells[a]].k,
                                                  T.cells[out_cells[a]].index)];
        int cb = comp_of_block[part.block_of_cell(T.cells[out_cells[b]].k,
                                                  T.cells[out_cells[b]].index)];
        if (ca != cb) oracle += 0.5 * phi(out_cells[a]) * M(a, b) * phi(out_cells[b]);
      }
    CHECK(sigma_sum == doctest::Approx(oracle).epsilon(1e-9));
  }
  std::vector<double> sizes, vals;
  for (const auto& [p, v] : r.f) {
    if (std::abs(v) < 1e-300) continue;
    sizes.push_back(static_cast<double>(p.size()));
    vals.push_back(v);
  }
  BoundCheck bc = fit_exponential_bound("f-decay", sizes, vals);
  CHECK(bc.pass);

  RegionDecomposition one = regions;
  one.q_tilde_components = {regions.q_tilde_components[0]};
  SigmaFResult r1 = sigma_and_f(phi, T, l1cells, one, part);
  CHECK(r1.sigma.empty());
}

TEST_CASE("component grouping: trivial, single assembly, oracle, permutation") {
  LatticeGeometry g(2, 16);
  BlockPartition part(g, 2);  // 8x8 block grid

  PolymerWeights f1, f2;
  f1[{0}] = 0.2;
  f2[{20}] = 0.5;
  PolymerWeights grouped = group_components({f1, f2}, part);
  CHECK(grouped[{0}] == doctest::Approx(0.2));
  CHECK(grouped[{20}] == doctest::Approx(0.5));

  PolymerWeights y, p;
  y[{0, 1}] = 0.3;
  p[{1, 2}] = 0.4;
  PolymerWeights kp = group_components({y, p}, part);
  CHECK(kp[{0, 1, 2}] == doctest::Approx(0.3 * 0.4).epsilon(1e-12));
  CHECK(kp[{0, 1}] == doctest::Approx(0.3));
  CHECK(kp[{1, 2}] == doctest::Approx(0.4));

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_int_distribution<int> pickb(0, 7);
  std::vector<PolymerWeights> fams(3);
  for (int f = 0; f < 3; ++f)
    for (int k = 0; k < 3; ++k) {
      int a = pickb(rng);
      int b = std::min(7, a + 1);
      std::vector<int> blocks{a};
      if (b != a) blocks.push_back(b);
      fams[f][blocks] = u(rng);
    }
  PolymerWeights mine = group_components(fams, part);
  PolymerWeights oracle = brute_group(fams, part);
  CHECK(mine.size() == oracle.size());
  for (const auto& [pb, v] : oracle)
    CHECK(mine.at(pb) == doctest::Approx(v).epsilon(1e-10));

  PolymerWeights again = group_components({fams[2], fams[0], fams[1]}, part);
  for (const auto& [pb, v] : mine) CHECK(again.at(pb) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("cluster logarithm: log(1+k), disjoint additivity, exp identity") {
  LatticeGeometry g(2, 12);
  BlockPartition part(g, 2);

  PolymerWeights single;
  single[{0}] = 0.05;
  ClusterLogResult cl = cluster_log(single, part, 4);
  double expect = 0.05 - 0.05 * 0.05 / 2 + std::pow(0.05, 3) / 3 - std::pow(0.05, 4) / 4;
  CHECK(cl.E[{0}] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::abs(cl.E[{0}] - std::log(1.05)) < std::pow(0.05, 5));

  PolymerWeights two;
  two[{0}] = 0.04;
  two[{24}] = 0.03;
  ClusterLogResult cl2 = cluster_log(two, part, 4);
  CHECK(cl2.E.size() == 2);
  CHECK(cl2.E[{0}] == doctest::Approx(std::log(1.04)).epsilon(1e-6));
  CHECK(cl2.E[{24}] == doctest::Approx(std::log(1.03)).epsilon(1e-6));

  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  PolymerWeights K;
  for (int a = 0; a < 5; ++a) {
    K[{a}] = u(rng);
    if (a + 1 < 5) K[{a, a + 1}] = u(rng);
  }
  ClusterLogResult cl3 = cluster_log(K, part, 6);
  CHECK(cl3.within_radius);
  double esum = 0.0;
  for (const auto& [pb, v] : cl3.E) esum += v;
  double oracle = polymer_partition_function(K, part);
  CHECK(std::exp(esum) == doctest::Approx(oracle).epsilon(1e-8));
}

TEST_CASE("small-field activities recompose ln Xi and decay with size") {
  // 1D chain with unit blocks keeps the quadrature dimensions tiny
  // (one site plus one bond per block)
  LatticeGeometry g(1, 6);
  Couplings c = bench();
  OperatorSuite s = small_suite(g, c, 2);
  BlockPartition part(g, 1);
  std::vector<int> region{1, 2, 3};
  double p0 = 0.8;
  PolymerWeights H = small_field_activities(s, c, part, region, p0, 8);
  std::vector<int> all_cells;
  for (int i = 0; i < s.T.size(); ++i) {
    int b = part.block_of_cell(s.T.cells[i].k, s.T.cells[i].index);
    for (int rb : region)
      if (b == rb) all_cells.push_back(i);
  }
  double full = log_small_field_integral(s, c, all_cells, p0, 8);
  double hsum = 0.0;
  for (const auto& [pb, v] : H) hsum += v;
  CHECK(hsum == doctest::Approx(full).epsilon(1e-9));
  double h1 = std::abs(H[{region[0]}]);
  auto it3 = H.find({region[0], region[1], region[2]});
  double h3 = it3 == H.end() ? 0.0 : std::abs(it3->second);
  CHECK(h3 < h1);
}

TEST_CASE("tuple enumeration: dense below cap, sampled above, guarded") {
  std::vector<int> cells{0, 1, 2, 3};
  TupleList full = enumerate_tuples(cells, 2, 0, 100, 1);
  CHECK(full.size() == 16);
  TupleList sampled = enumerate_tuples(cells, 3, 2, 50, 1);
  CHECK(sampled.size() == 50);
  std::vector<int> many(100);
  for (int i = 0; i < 100; ++i) many[i] = i;
  CHECK_THROWS(enumerate_tuples(many, 3, 2, std::size_t{200000000}, 1, 100000000));
}
