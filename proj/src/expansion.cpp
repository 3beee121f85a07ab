#include "ahm/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "ahm/stats.hpp"

namespace ahm {

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

std::vector<int> mask_to_blocks(std::uint64_t mask, const std::vector<int>& universe) {
  std::vector<int> out;
  for (std::size_t i = 0; i < universe.size(); ++i)
    if (mask & (1ull << i)) out.push_back(universe[i]);
  return out;
}

bool blocks_touch(const std::vector<int>& a, const std::vector<int>& b,
                  const BlockPartition& part) {
  for (int x : a)
    for (int y : b)
      if (x == y || part.adjacent(x, y)) return true;
  return false;
}

bool mask_connected(std::uint64_t mask, const std::vector<int>& universe,
                    const BlockPartition& part) {
  std::vector<int> blocks = mask_to_blocks(mask, universe);
  if (blocks.empty()) return false;
  return blocks_connected(blocks, part);
}

}  // namespace

Thresholds asymptotic_thresholds(double lambda, int d, double a_exponent) {
  if (lambda <= 0 || lambda >= 1) throw std::invalid_argument("need 0 < lambda < 1");
  Thresholds t;
  double l = std::abs(std::log(lambda));
  if (a_exponent < 0) a_exponent = 2.0 * d + 0.5;  // midpoint of (2d, 2d+1)
  t.p_lambda = std::pow(l, 2.0 * d + 1.0);
  t.p0_lambda = std::pow(l, a_exponent);
  t.r_lambda = std::max(1, static_cast<int>(l * l));
  return t;
}

std::vector<char> contract_mask(const std::vector<char>& mask, const BlockPartition& part,
                                int layers) {
  std::vector<char> cur = mask;
  for (int it = 0; it < layers; ++it) {
    std::vector<char> next = cur;
    for (int b = 0; b < part.block_count(); ++b) {
      if (!cur[b]) continue;
      for (int nb : part.neighbors(b))
        if (!cur[nb]) {
          next[b] = 0;
          break;
        }
      // blocks on the lattice edge keep their status: contraction peels
      // towards the large-field set, not towards the Dirichlet boundary
    }
    cur = std::move(next);
  }
  return cur;
}

bool RegionDecomposition::containment_ok() const {
  for (std::size_t b = 0; b < lambda0.size(); ++b) {
    if (omega1[b] && !omega0[b]) return false;
    if (omega0[b] && !lambda1[b]) return false;
    if (lambda1[b] && !lambda0[b]) return false;
  }
  return true;
}

RegionDecomposition classify_regions(const Form& rho, const Form& A, const Form& rho_prime,
                                     const Form& A_prime, const Thresholds& th,
                                     const BlockPartition& part) {
  const LatticeGeometry& g = part.geometry();
  const int nb = part.block_count();
  RegionDecomposition r;
  r.thresholds = th;
  std::vector<double> sup_phi(nb, 0.0), sup_phi_prime(nb, 0.0);
  for (int s = 0; s < g.site_count(); ++s) {
    int b = part.block_of_site(s);
    sup_phi[b] = std::max(sup_phi[b], std::abs(rho[s]));
    sup_phi_prime[b] = std::max(sup_phi_prime[b], std::abs(rho_prime[s]));
  }
  for (int i = 0; i < g.bond_count(); ++i) {
    int b = part.block_of_cell(1, i);
    sup_phi[b] = std::max(sup_phi[b], std::abs(A[i]));
    sup_phi_prime[b] = std::max(sup_phi_prime[b], std::abs(A_prime[i]));
  }
  r.lambda0.assign(nb, 0);
  for (int b = 0; b < nb; ++b) r.lambda0[b] = sup_phi[b] < th.p_lambda ? 1 : 0;
  r.lambda1 = contract_mask(r.lambda0, part, 1);
  r.omega0.assign(nb, 0);
  for (int b = 0; b < nb; ++b)
    r.omega0[b] = (r.lambda1[b] && sup_phi_prime[b] < th.p0_lambda) ? 1 : 0;
  r.omega1 = contract_mask(r.omega0, part, 2);
  r.p_region.assign(nb, 0);
  r.q_tilde.assign(nb, 0);
  std::vector<int> p_blocks, q_blocks, qc_blocks;
  for (int b = 0; b < nb; ++b) {
    r.p_region[b] = (r.lambda1[b] && !r.omega1[b]) ? 1 : 0;
    r.q_tilde[b] = r.lambda1[b] ? 0 : 1;
    if (r.p_region[b]) p_blocks.push_back(b);
    if (r.q_tilde[b]) q_blocks.push_back(b);
    if (!r.lambda0[b]) qc_blocks.push_back(b);
  }
  r.p_components = connect_blocks(p_blocks, part);
  r.q_tilde_components = connect_blocks(q_blocks, part);
  r.q_components = connect_blocks(qc_blocks, part);
  return r;
}

const char* family_name(VertexFamily f) {
  switch (f) {
    case VertexFamily::Cosine: return "cosine";
    case VertexFamily::Quartic: return "quartic";
    case VertexFamily::Log: return "log";
    case VertexFamily::BilinearCos: return "bilinear-cos";
    case VertexFamily::LinearCos: return "linear-cos";
    case VertexFamily::VEpsQuadratic: return "veps-quadratic";
    case VertexFamily::Source: return "source";
  }
  return "unknown";
}

TupleList enumerate_tuples(const std::vector<int>& cells, int n, int m, std::size_t cap,
                           std::uint64_t seed, std::size_t hard_guard) {
  const std::size_t nc = cells.size();
  const int slots = n + m;
  double total = std::pow(static_cast<double>(nc), slots);
  TupleList out;
  if (total <= static_cast<double>(cap)) {
    std::vector<int> idx(slots, 0);
    while (true) {
      std::vector<int> xi(n), eta(m);
      for (int i = 0; i < n; ++i) xi[i] = cells[idx[i]];
      for (int j = 0; j < m; ++j) eta[j] = cells[idx[n + j]];
      out.emplace_back(std::move(xi), std::move(eta));
      int s = slots - 1;
      while (s >= 0 && idx[s] == static_cast<int>(nc) - 1) idx[s--] = 0;
      if (s < 0) break;
      ++idx[s];
    }
    return out;
  }
  if (cap > hard_guard) throw std::runtime_error("tuple-space overflow guard tripped");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
  out.reserve(cap);
  for (std::size_t k = 0; k < cap; ++k) {
    std::vector<int> xi(n), eta(m);
    for (int i = 0; i < n; ++i) xi[i] = cells[pick(rng)];
    for (int j = 0; j < m; ++j) eta[j] = cells[pick(rng)];
    out.emplace_back(std::move(xi), std::move(eta));
  }
  return out;
}

namespace {

double tuple_tree_length(const LatticeGeometry& g, const std::vector<CellRef>& suite_cells,
                         const std::vector<int>& xi, const std::vector<int>& eta,
                         const std::vector<int>& shift = {}) {
  std::vector<CellRef> pts;
  for (int i : xi) pts.push_back(suite_cells[i]);
  for (int i : eta) pts.push_back(suite_cells[i]);
  for (int i : shift) pts.push_back(suite_cells[i]);
  if (pts.empty()) return 0.0;
  return minimal_tree_length(g, pts, Metric::L1);
}

}  // namespace

CoefficientSystem extract_coefficients(VertexFamily family, const OperatorSuite& suite,
                                       const RegionMasks& masks, const Couplings& c,
                                       const TupleList& tuples) {
  CoefficientSystem sys;
  sys.family = family;
  sys.cells = suite.T.cells;
  sys.geom = suite.T.geom;
  const int nc = suite.T.size();
  if (static_cast<int>(masks.omega0.size()) != nc)
    throw std::invalid_argument("omega0 mask size mismatch");
  const Eigen::MatrixXd& K = suite.Chalf_loc.mat;

  std::vector<int> omega0_sites, omega0_bonds;
  for (int i = 0; i < nc; ++i) {
    if (!masks.omega0[i]) continue;
    if (sys.cells[i].k == 0) omega0_sites.push_back(i);
    if (sys.cells[i].k == 1) omega0_bonds.push_back(i);
  }

  // nearest-neighbor triples (site, site, joining bond) inside Omega0
  std::vector<std::array<int, 3>> nn_triples;
  if (family == VertexFamily::BilinearCos || family == VertexFamily::LinearCos) {
    std::map<std::pair<int, int>, int> cell_to_idx;
    for (int i = 0; i < nc; ++i) cell_to_idx[{sys.cells[i].k, sys.cells[i].index}] = i;
    const LatticeGeometry& g = *sys.geom;
    for (int bi : omega0_bonds) {
      Cell bc = g.cell(1, sys.cells[bi].index);
      auto y = bc.x;
      y[bc.dirs[0]] += 1;
      auto it1 = cell_to_idx.find({0, g.site_index(bc.x)});
      auto it2 = cell_to_idx.find({0, g.site_index(y)});
      if (it1 == cell_to_idx.end() || it2 == cell_to_idx.end()) continue;
      int s1 = it1->second, s2 = it2->second;
      if (!masks.omega0[s1] || !masks.omega0[s2]) continue;
      nn_triples.push_back({s1, s2, bi});
      nn_triples.push_back({s2, s1, bi});
    }
  }

  const double e0 = c.e0;
  const double rho0 = c.rho0();

  for (const auto& [xi, eta] : tuples) {
    const int n = static_cast<int>(xi.size());
    const int m = static_cast<int>(eta.size());
    CoefficientEntry entry;
    entry.xi = xi;
    entry.eta = eta;
    double val = 0.0;
    switch (family) {
      case VertexFamily::Cosine: {
        // (cos[e0 K Phi'] - 1) over Omega0 bonds, printed-form coefficients
        if ((n + m) == 0 || (n + m) % 2 != 0) break;
        double pref = std::pow(e0, n + m) * ((((n + m) / 2) % 2) ? -1.0 : 1.0) /
                      (factorial(n) * factorial(m));
        double s = 0.0;
        for (int b : omega0_bonds) {
          double prod = 1.0;
          for (int i : xi) prod *= K(b, i);
          for (int j : eta) prod *= K(b, j);
          s += prod;
        }
        val = pref * s;
        break;
      }
      case VertexFamily::Quartic: {
        if (n + m != 4) break;
        double pref = c.lambda * factorial(n + m) / (factorial(n) * factorial(m));
        double s = 0.0;
        for (int x : omega0_sites) {
          double prod = 1.0;
          for (int i : xi) prod *= K(x, i);
          for (int j : eta) prod *= K(x, j);
          s += prod;
        }
        val = pref * s;
        break;
      }
      case VertexFamily::Log: {
        if (n + m == 0) break;
        double sgn = ((n + m + 1) % 2) ? -1.0 : 1.0;  // (-1)^{n+m+1}
        double pref = sgn * factorial(n + m) /
                      ((n + m) * std::pow(rho0, n + m) * factorial(n) * factorial(m));
        double s = 0.0;
        for (int x : omega0_sites) {
          double prod = 1.0;
          for (int i : xi) prod *= K(x, i);
          for (int j : eta) prod *= K(x, j);
          s += prod;
        }
        val = pref * s;
        break;
      }
      case VertexFamily::BilinearCos: {
        // K Phi(xi_a) K Phi(xi_b) (1 - cos[e0 K Phi'(b)]): xi = [a, b, cos...]
        if (n < 2) break;
        int ncos = n - 2;
        if ((ncos + m) == 0 || (ncos + m) % 2 != 0) break;
        double sgn = (((ncos + m) / 2 + 1) % 2) ? -1.0 : 1.0;  // 1 - cos series
        double pref =
            std::pow(e0, ncos + m) * sgn / (factorial(ncos) * factorial(m));
        double s = 0.0;
        for (const auto& t : nn_triples) {
          double prod = K(t[0], xi[0]) * K(t[1], xi[1]);
          for (int i = 2; i < n; ++i) prod *= K(t[2], xi[i]);
          for (int j : eta) prod *= K(t[2], j);
          s += prod;
        }
        val = 0.5 * pref * s;  // ordered triples double-count <xy>
        break;
      }
      case VertexFamily::LinearCos: {
        if (n < 1) break;
        int ncos = n - 1;
        if ((ncos + m) == 0 || (ncos + m) % 2 != 0) break;
        double sgn = (((ncos + m) / 2 + 1) % 2) ? -1.0 : 1.0;
        double pref =
            std::pow(e0, ncos + m) * sgn / (factorial(ncos) * factorial(m));
        double s = 0.0;
        for (const auto& t : nn_triples) {
          double prod = K(t[0], xi[0]);
          for (int i = 1; i < n; ++i) prod *= K(t[2], xi[i]);
          for (int j : eta) prod *= K(t[2], j);
          s += prod;
        }
        val = pref * s;
        break;
      }
      case VertexFamily::VEpsQuadratic: {
        if (n + m != 2) break;
        // exact quadratic kernel C^{1/2,loc} T C^{1/2,loc} - I
        static thread_local Eigen::MatrixXd cached;
        static thread_local const OperatorSuite* cached_for = nullptr;
        if (cached_for != &suite) {
          cached = suite.Chalf_loc.mat * suite.T.mat * suite.Chalf_loc.mat -
                   Eigen::MatrixXd::Identity(nc, nc);
          cached_for = &suite;
        }
        int a = n >= 1 ? xi[0] : eta[0];
        int b = n == 2 ? xi[1] : eta[m - 1];
        val = cached(a, b);
        break;
      }
      case VertexFamily::Source: {
        if (n != 1 || m != 1) break;
        if (masks.omega0[eta[0]] && sys.cells[eta[0]].k == 1) val = e0 * K(eta[0], xi[0]);
        break;
      }
    }
    entry.value = val;
    entry.tree_length = tuple_tree_length(*sys.geom, sys.cells, xi, eta);
    sys.entries.push_back(std::move(entry));
  }
  return sys;
}

double weight_norm(const CoefficientSystem& coeffs, const WeightSystem& w) {
  // per (n,m) sector: max over pinned (slot, cell) of the weighted sums;
  // shifted eta slots carry w_shift instead of w_psi at stable positions
  std::map<std::array<int, 2>, std::map<std::pair<int, int>, double>> acc;
  for (const auto& e : coeffs.entries) {
    if (e.value == 0.0) continue;
    int n = static_cast<int>(e.xi.size());
    int m = static_cast<int>(e.eta.size());
    int s = e.shift_count();
    double weight = std::exp(w.mass * e.tree_length) * std::pow(w.w_phi, n) *
                    std::pow(w.w_psi, m - s) * std::pow(w.w_shift, s) * std::abs(e.value);
    auto& sector = acc[{n, m}];
    int slot = 0;
    for (int cell : e.xi) sector[{slot++, cell}] += weight;
    for (int cell : e.eta) sector[{slot++, cell}] += weight;
  }
  double norm = 0.0;
  for (const auto& [nm, sector] : acc) {
    double best = 0.0;
    for (const auto& [key, v] : sector) best = std::max(best, v);
    norm += best;
  }
  return norm;
}

CoefficientSystem shift_coefficients(const CoefficientSystem& coeffs,
                                     const std::vector<double>& phi) {
  // Binomial re-slotting of the eta slots into kept-Psi and shift-phi slots.
  // Coefficient values are untouched: the shift field enters evaluation (and
  // the kappa2 weight enters the norm) through the recorded slots, which is
  // what makes ||H#||_{k,k2} = ||H||_{k+k2} exact.
  if (!phi.empty() && phi.size() != coeffs.cells.size())
    throw std::invalid_argument("shift field size mismatch");
  CoefficientSystem out;
  out.family = coeffs.family;
  out.cells = coeffs.cells;
  out.geom = coeffs.geom;
  for (const auto& e : coeffs.entries) {
    const int m = static_cast<int>(e.eta.size());
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      CoefficientEntry ne = e;
      ne.shift_mask = mask;
      out.entries.push_back(std::move(ne));
    }
  }
  return out;
}

double evaluate_system(const CoefficientSystem& coeffs, const std::vector<double>& phi_field,
                       const std::vector<double>& psi_field,
                       const std::vector<double>& shift_field) {
  double acc = 0.0;
  for (const auto& e : coeffs.entries) {
    double term = e.value;
    for (int i : e.xi) term *= phi_field[i];
    for (std::size_t j = 0; j < e.eta.size(); ++j)
      term *= (e.shift_mask & (1u << j)) ? shift_field[e.eta[j]] : psi_field[e.eta[j]];
    acc += term;
  }
  return acc;
}

std::optional<Polymer> polymer_of_support(const std::vector<CellRef>& points,
                                          const BlockPartition& part,
                                          const std::vector<char>& omega1_blocks) {
  if (points.empty()) return std::nullopt;
  std::set<int> blocks;
  for (const auto& p : points) blocks.insert(part.block_of_cell(p.k, p.index));
  bool touches_omega1 = false;
  for (int b : blocks)
    if (omega1_blocks[b]) touches_omega1 = true;
  if (!touches_omega1) return std::nullopt;  // filtered: X_Z must meet Omega1
  Polymer poly;
  poly.blocks.assign(blocks.begin(), blocks.end());
  poly.connected = blocks_connected(poly.blocks, part);
  return poly;
}

PolymerWeights mayer_polymerize(const PolymerWeights& H, const BlockPartition& part,
                                std::size_t guard) {
  const std::size_t nf = H.size();
  if (nf == 0) return {};
  if (nf >= 63 || (std::size_t{1} << nf) > guard)
    throw std::runtime_error("mayer_polymerize: cover enumeration guard tripped");
  std::vector<int> universe;
  std::vector<std::uint64_t> member_mask(nf);
  std::vector<double> member_w(nf);
  {
    std::set<int> blocks;
    for (const auto& [poly, h] : H) blocks.insert(poly.begin(), poly.end());
    universe.assign(blocks.begin(), blocks.end());
    if (universe.size() > 63) throw std::runtime_error("mayer_polymerize: too many blocks");
    std::size_t i = 0;
    for (const auto& [poly, h] : H) {
      std::uint64_t m = 0;
      for (int b : poly)
        m |= 1ull << (std::lower_bound(universe.begin(), universe.end(), b) - universe.begin());
      member_mask[i] = m;
      member_w[i] = std::expm1(h);
      ++i;
    }
  }
  std::map<std::uint64_t, double> acc;
  const std::uint64_t subsets = 1ull << nf;
  for (std::uint64_t s = 1; s < subsets; ++s) {
    std::uint64_t u = 0;
    double prod = 1.0;
    for (std::size_t i = 0; i < nf; ++i)
      if (s & (1ull << i)) {
        u |= member_mask[i];
        prod *= member_w[i];
      }
    acc[u] += prod;
  }
  PolymerWeights out;
  for (const auto& [mask, v] : acc)
    if (mask_connected(mask, universe, part)) out[mask_to_blocks(mask, universe)] = v;
  return out;
}

double mayer_activity(const PolymerWeights& H, const std::vector<int>& Y,
                      const BlockPartition& part) {
  if (Y.size() > 24) throw std::invalid_argument("mayer_activity: polymer too large");
  if (!blocks_connected(Y, part)) return 0.0;
  std::vector<int> sorted(Y);
  std::sort(sorted.begin(), sorted.end());
  // members contained in Y, with block bitmasks relative to Y
  std::vector<std::uint32_t> member_mask;
  std::vector<double> member_w;
  for (const auto& [poly, h] : H) {
    std::uint32_t m = 0;
    bool inside = true;
    for (int b : poly) {
      auto it = std::lower_bound(sorted.begin(), sorted.end(), b);
      if (it == sorted.end() || *it != b) {
        inside = false;
        break;
      }
      m |= 1u << (it - sorted.begin());
    }
    if (inside) {
      member_mask.push_back(m);
      member_w.push_back(std::expm1(h));
    }
  }
  // Moebius over B subset Y of prod_{X in B} (1 + w(X)); exact-cover inversion
  const std::uint32_t full = (Y.size() == 32) ? 0xffffffffu : ((1u << Y.size()) - 1u);
  double acc = 0.0;
  for (std::uint32_t B = 0;; ++B) {
    double G = 1.0;
    for (std::size_t i = 0; i < member_mask.size(); ++i)
      if ((member_mask[i] & ~B) == 0) G *= 1.0 + member_w[i];
    int missing = __builtin_popcount(full & ~B);
    acc += (missing % 2 ? -1.0 : 1.0) * G;
    if (B == full) break;
  }
  // the empty selection cancels in the alternating sum for nonempty Y
  return acc;
}

double polymer_partition_function(const PolymerWeights& K, const BlockPartition& part) {
  std::vector<std::vector<int>> polys;
  std::vector<double> w;
  for (const auto& [p, v] : K) {
    polys.push_back(p);
    w.push_back(v);
  }
  const int n = static_cast<int>(polys.size());
  std::vector<std::vector<char>> conflict(n, std::vector<char>(n, 0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      conflict[i][j] = (i != j) && blocks_touch(polys[i], polys[j], part);
  // weighted independent-set sum over the touch graph
  std::function<double(int, std::vector<char>&)> rec = [&](int i, std::vector<char>& banned) {
    if (i == n) return 1.0;
    double total = rec(i + 1, banned);  // skip i
    if (!banned[i]) {
      std::vector<char> b2 = banned;
      for (int j = i + 1; j < n; ++j)
        if (conflict[i][j]) b2[j] = 1;
      total += w[i] * rec(i + 1, b2);
    }
    return total;
  };
  std::vector<char> banned(n, 0);
  return rec(0, banned);
}

SigmaFResult sigma_and_f(const Eigen::VectorXd& phi, const LatticeOperator& T_full,
                         const std::vector<int>& lambda1_cells,
                         const RegionDecomposition& regions, const BlockPartition& part) {
  SigmaFResult out;
  const int n = T_full.size();
  std::vector<char> in_l1(n, 0);
  for (int i : lambda1_cells) in_l1[i] = 1;
  std::vector<int> out_cells;
  for (int i = 0; i < n; ++i)
    if (!in_l1[i]) out_cells.push_back(i);
  if (out_cells.empty() || regions.q_tilde_components.size() < 2) return out;

  const int ni = static_cast<int>(lambda1_cells.size());
  const int no = static_cast<int>(out_cells.size());
  Eigen::MatrixXd Tin(ni, ni), B(no, ni);
  for (int a = 0; a < ni; ++a)
    for (int b = 0; b < ni; ++b) Tin(a, b) = T_full.mat(lambda1_cells[a], lambda1_cells[b]);
  for (int a = 0; a < no; ++a)
    for (int b = 0; b < ni; ++b) B(a, b) = T_full.mat(out_cells[a], lambda1_cells[b]);
  Eigen::MatrixXd M = B * Tin.llt().solve(B.transpose());  // T C_{L1} T on Q~

  // component id per out-cell
  std::vector<int> comp_of_block(part.block_count(), -1);
  for (std::size_t k = 0; k < regions.q_tilde_components.size(); ++k)
    for (int b : regions.q_tilde_components[k].blocks) comp_of_block[b] = static_cast<int>(k);
  std::vector<int> cell_block(no), cell_comp(no);
  for (int a = 0; a < no; ++a) {
    const CellRef& cr = T_full.cells[out_cells[a]];
    cell_block[a] = part.block_of_cell(cr.k, cr.index);
    cell_comp[a] = comp_of_block[cell_block[a]];
  }

  // accumulate <Phi, 1_B M 1_B'> over block pairs in different components
  std::map<std::pair<int, int>, double> pair_val;
  for (int a = 0; a < no; ++a) {
    if (cell_comp[a] < 0) continue;
    for (int b = 0; b < no; ++b) {
      if (cell_comp[b] < 0 || cell_comp[a] == cell_comp[b]) continue;
      double v = phi(out_cells[a]) * M(a, b) * phi(out_cells[b]);
      if (v != 0.0) pair_val[{cell_block[a], cell_block[b]}] += v;
    }
  }

  const int d = part.geometry().dim();
  std::vector<std::vector<int>> axis_orders;
  {
    std::vector<int> axes(d);
    for (int i = 0; i < d; ++i) axes[i] = i;
    do {
      axis_orders.push_back(axes);
    } while (std::next_permutation(axes.begin(), axes.end()));
  }
  for (const auto& [bp, val] : pair_val) {
    // rectangular monotone block paths from bp.first to bp.second
    std::set<std::vector<int>> paths;
    auto c1 = part.block_coords(bp.first);
    auto c2 = part.block_coords(bp.second);
    for (const auto& order : axis_orders) {
      std::set<int> path;
      auto cur = c1;
      path.insert(part.block_index(cur));
      for (int axis : order) {
        while (cur[axis] != c2[axis]) {
          cur[axis] += (c2[axis] > cur[axis]) ? 1 : -1;
          path.insert(part.block_index(cur));
        }
      }
      paths.insert(std::vector<int>(path.begin(), path.end()));
    }
    double share = 0.5 * val / static_cast<double>(paths.size());
    for (const auto& p : paths) out.sigma[p] += share;
  }
  if (out.sigma.empty()) return out;
  if (out.sigma.size() <= 20) {
    out.f = mayer_polymerize(out.sigma, part);
  } else {
    // large families: evaluate the cover sum per candidate polymer
    // (supports and their touching pairwise unions) by Moebius inversion
    std::set<std::vector<int>> candidates;
    for (const auto& [p, v] : out.sigma) candidates.insert(p);
    for (const auto& [p1, v1] : out.sigma)
      for (const auto& [p2, v2] : out.sigma) {
        if (p1 == p2 || !blocks_touch(p1, p2, part)) continue;
        std::set<int> u(p1.begin(), p1.end());
        u.insert(p2.begin(), p2.end());
        if (u.size() <= 16) candidates.insert(std::vector<int>(u.begin(), u.end()));
      }
    for (const auto& y : candidates) {
      double k = mayer_activity(out.sigma, y, part);
      if (k != 0.0) out.f[y] = k;
    }
  }
  return out;
}

PolymerWeights group_components(const std::vector<PolymerWeights>& families,
                                const BlockPartition& part, std::size_t guard) {
  struct Member {
    int family;
    std::vector<int> blocks;
    double weight;
  };
  std::vector<Member> members;
  for (std::size_t f = 0; f < families.size(); ++f)
    for (const auto& [p, w] : families[f]) members.push_back({static_cast<int>(f), p, w});
  const int n = static_cast<int>(members.size());
  if (n == 0) return {};
  if (n >= 63 || (std::size_t{1} << n) > guard)
    throw std::runtime_error("group_components: assembly enumeration guard tripped");
  std::vector<std::vector<char>> touch(n, std::vector<char>(n, 0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      touch[i][j] = blocks_touch(members[i].blocks, members[j].blocks, part);

  PolymerWeights acc;
  std::vector<int> chosen;
  std::function<void(int, double)> rec = [&](int i, double prod) {
    if (i == n) {
      if (chosen.empty()) return;
      std::set<int> u;
      for (int c : chosen) u.insert(members[c].blocks.begin(), members[c].blocks.end());
      std::vector<int> blocks(u.begin(), u.end());
      if (blocks_connected(blocks, part)) acc[blocks] += prod;
      return;
    }
    rec(i + 1, prod);  // skip member i
    // same-family members must be mutually non-touching
    for (int c : chosen)
      if (members[c].family == members[i].family && touch[c][i]) return;
    chosen.push_back(i);
    rec(i + 1, prod * members[i].weight);
    chosen.pop_back();
  };
  rec(0, 1.0);
  return acc;
}

namespace {

// Ursell function of the incompatibility graph on tuple positions:
// sum over connected spanning edge subsets of (-1)^{edges}. Computed by the
// component convolution N(S) = I(S) - sum_{T < S, T owns min(S)} N(T) I(S\T),
// where I(U) = 1 iff U spans no incompatibility edge (3^n subset recursion).
double ursell(const std::vector<std::vector<char>>& incompat) {
  const int n = static_cast<int>(incompat.size());
  if (n == 1) return 1.0;
  const int full = (1 << n) - 1;
  std::vector<char> indep(full + 1, 1);
  for (int s = 0; s <= full; ++s) {
    for (int i = 0; i < n && indep[s]; ++i) {
      if (!(s & (1 << i))) continue;
      for (int j = i + 1; j < n; ++j)
        if ((s & (1 << j)) && incompat[i][j]) {
          indep[s] = 0;
          break;
        }
    }
  }
  std::vector<double> N(full + 1, 0.0);
  for (int s = 1; s <= full; ++s) {
    int low = s & (-s);  // bit of the minimal vertex
    double acc = indep[s] ? 1.0 : 0.0;
    // proper subsets of s containing the minimal vertex
    int rest = s ^ low;
    for (int sub = (rest - 1) & rest;; sub = (sub - 1) & rest) {
      int t = sub | low;
      if (t != s && indep[s ^ t]) acc -= N[t];
      if (sub == 0) break;
    }
    // the sub enumeration above misses sub = rest itself (t = s); fine
    N[s] = acc;
  }
  return N[full];
}

}  // namespace

ClusterLogResult cluster_log(const PolymerWeights& k_sharp, const BlockPartition& part,
                             int n_max) {
  ClusterLogResult res;
  res.n_max = n_max;
  std::vector<std::vector<int>> polys;
  std::vector<double> w;
  for (const auto& [p, v] : k_sharp) {
    polys.push_back(p);
    w.push_back(v);
    if (std::abs(v) > 0.1) res.within_radius = false;
  }
  const int s = static_cast<int>(polys.size());
  if (s == 0) return res;
  std::vector<std::vector<char>> touch(s, std::vector<char>(s, 0));
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) touch[i][j] = blocks_touch(polys[i], polys[j], part);

  // Enumerate multisets (combinations with repetition): the ordered-tuple sum
  // with 1/n! becomes a sum over multisets with 1/prod(mult_i!).
  std::vector<int> multiset;  // nondecreasing polymer indices
  auto process = [&]() {
    const int n = static_cast<int>(multiset.size());
    // repeated polymers touch themselves; prune by cluster connectivity
    std::vector<std::vector<char>> incompat(n, std::vector<char>(n, 0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        incompat[i][j] = (i != j) && (multiset[i] == multiset[j] ||
                                      touch[multiset[i]][multiset[j]]);
    // quick connectivity check before the Ursell edge enumeration
    {
      std::vector<char> seen(n, 0);
      std::vector<int> stack{0};
      seen[0] = 1;
      int cnt = 1;
      while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        for (int j = 0; j < n; ++j)
          if (!seen[j] && incompat[i][j]) {
            seen[j] = 1;
            stack.push_back(j);
            ++cnt;
          }
      }
      if (cnt != n) return;  // rho^T vanishes on divisible collections
    }
    double phi_t = ursell(incompat);
    if (phi_t == 0.0) return;
    double prod = phi_t;
    int run = 1;
    for (int i = 0; i < n; ++i) {
      prod *= w[multiset[i]];
      if (i > 0 && multiset[i] == multiset[i - 1])
        prod /= ++run;
      else
        run = 1;
    }
    std::set<int> u;
    for (int i : multiset) u.insert(polys[i].begin(), polys[i].end());
    res.E[std::vector<int>(u.begin(), u.end())] += prod;
  };
  std::function<void(int)> rec = [&](int start) {
    if (!multiset.empty()) process();
    if (static_cast<int>(multiset.size()) == n_max) return;
    for (int i = start; i < s; ++i) {
      multiset.push_back(i);
      rec(i);
      multiset.pop_back();
    }
  };
  rec(0);
  return res;
}

ZetaBoundReport zeta_bound_check(const Form& rho, const Form& A, double threshold,
                                 const BlockPartition& part) {
  const LatticeGeometry& g = part.geometry();
  ZetaBoundReport rep;
  rep.blocks = part.block_count();
  std::vector<double> sup(part.block_count(), 0.0), norm2(part.block_count(), 0.0);
  for (int s = 0; s < g.site_count(); ++s) {
    int b = part.block_of_site(s);
    sup[b] = std::max(sup[b], std::abs(rho[s]));
    norm2[b] += rho[s] * rho[s];
  }
  for (int i = 0; i < g.bond_count(); ++i) {
    int b = part.block_of_cell(1, i);
    sup[b] = std::max(sup[b], std::abs(A[i]));
    norm2[b] += A[i] * A[i];
  }
  for (int b = 0; b < part.block_count(); ++b) {
    double zeta = sup[b] < threshold ? 0.0 : 1.0;
    if (zeta == 0.0) continue;
    ++rep.exceeded;
    double rhs = std::exp(-threshold + norm2[b] / threshold);
    rep.max_margin = std::max(rep.max_margin, zeta / rhs);
    if (zeta > rhs) ++rep.violations;
  }
  return rep;
}

double large_field_suppression_rhs(double e0, double p_lambda, int q_blocks, double m_min, double gamma1,
                  double phi_norm2, double c) {
  return c * e0 * e0 * std::exp(-0.375 * p_lambda * q_blocks) *
         std::exp(-(m_min * gamma1 - 1.0 / p_lambda + c) * phi_norm2);
}

double intermediate_suppression_rhs(double e0, double p0_lambda, int p_blocks, double phi_norm2) {
  return e0 * e0 * std::exp(-0.375 * p0_lambda * p_blocks) *
         std::exp(-(0.5 - 1.0 / p0_lambda) * phi_norm2);
}

double interaction_volume_rhs(double c_const, double c0, double e0, double eps, int p_blocks) {
  return std::exp(c_const * std::sqrt(c0 * std::pow(e0, 1.0 - 2.0 * eps)) * p_blocks);
}

BoundCheck fit_exponential_bound(const std::string& name, const std::vector<double>& sizes,
                                 const std::vector<double>& values) {
  BoundCheck bc;
  bc.name = name;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (std::abs(values[i]) < 1e-300) continue;
    xs.push_back(sizes[i]);
    ys.push_back(std::log(std::abs(values[i])));
  }
  bc.points = static_cast<int>(xs.size());
  if (bc.points < 2) return bc;
  LinearFit f = linear_fit(xs, ys);
  bc.fitted_rate = -f.slope;
  bc.fitted_prefactor = std::exp(f.intercept);
  bc.fit_residual = f.relative_residual;
  double env = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    env = std::max(env, std::exp(ys[i] + bc.fitted_rate * xs[i]));
  bc.envelope_prefactor = env;
  bc.pass = bc.fitted_rate > 0.0;
  return bc;
}

namespace {

// Interaction part of the shifted action on the cells of a block set:
// rho0^2 (1 - cos e0 A - e0^2 A^2/2) + rho0 (rho+rho')(1 - cos e0 A)
// + rho rho' (1 - cos e0 A) on bonds, lambda rho^4 + sqrt(2l) mu rho^3
// - log(1 + rho/rho0) on sites.
double masked_interaction(const LatticeGeometry& g, const Couplings& c,
                          const std::vector<CellRef>& cells, const Eigen::VectorXd& mapped,
                          const std::vector<char>& active) {
  const double rho0 = c.rho0();
  const double e0 = c.e0;
  std::map<int, double> site_val;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].k == 0) site_val[cells[i].index] = mapped(i);
  double V = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!active[i]) continue;
    if (cells[i].k == 0) {
      double r = mapped(i);
      if (r <= -rho0) throw std::domain_error("field left the log domain in V");
      V += c.lambda * r * r * r * r + std::sqrt(2.0 * c.lambda) * c.mu * r * r * r -
           std::log1p(r / rho0);
    } else if (cells[i].k == 1) {
      double a = mapped(i);
      double omc = 1.0 - std::cos(e0 * a);
      Cell bc = g.cell(1, cells[i].index);
      auto y = bc.x;
      y[bc.dirs[0]] += 1;
      auto it1 = site_val.find(g.site_index(bc.x));
      auto it2 = site_val.find(g.site_index(y));
      double r1 = it1 != site_val.end() ? it1->second : 0.0;
      double r2 = it2 != site_val.end() ? it2->second : 0.0;
      V += rho0 * rho0 * (omc - 0.5 * e0 * e0 * a * a);
      V += rho0 * (r1 + r2) * omc + r1 * r2 * omc;
    }
  }
  return V;
}

}  // namespace

double region_interaction(const OperatorSuite& suite, const Couplings& c,
                          const BlockPartition& part, const std::vector<int>& blocks,
                          const Eigen::VectorXd& phi_prime) {
  const auto& cells = suite.T.cells;
  std::vector<char> active(cells.size(), 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    int b = part.block_of_cell(cells[i].k, cells[i].index);
    for (int rb : blocks)
      if (b == rb) active[i] = 1;
  }
  Eigen::VectorXd mapped = suite.Chalf_loc.mat * phi_prime;
  return masked_interaction(*suite.T.geom, c, cells, mapped, active);
}

double log_small_field_integral(const OperatorSuite& suite, const Couplings& c,
                                const std::vector<int>& region_cells, double p0_cut,
                                int gl_nodes, const Eigen::VectorXd& background) {
  const int dims = static_cast<int>(region_cells.size());
  if (dims == 0) return 0.0;
  if (dims > 8) throw std::invalid_argument("small-field integral limited to 8 cells");
  // Gauss-Legendre on [-p0, p0] per cell
  std::vector<double> x01(gl_nodes), w01(gl_nodes);
  {
    // nodes via the operators quadrature helper would drag a dependency;
    // quick Newton iteration for Legendre roots on [0,1]
    for (int i = 0; i < gl_nodes; ++i) {
      double t = std::cos(3.14159265358979323846 * (i + 0.75) / (gl_nodes + 0.5));
      double p0v = 1, p1v = t, dp = 0;
      for (int it = 0; it < 100; ++it) {
        p0v = 1.0;
        p1v = t;
        for (int k = 2; k <= gl_nodes; ++k) {
          double p2 = ((2 * k - 1) * t * p1v - (k - 1) * p0v) / k;
          p0v = p1v;
          p1v = p2;
        }
        dp = gl_nodes * (t * p1v - p0v) / (t * t - 1.0);
        double dt = p1v / dp;
        t -= dt;
        if (std::abs(dt) < 1e-15) break;
      }
      x01[i] = 0.5 * (1.0 - t);
      w01[i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
  }
  const auto& cells = suite.T.cells;
  const LatticeGeometry& g = *suite.T.geom;
  // evaluation plan: mapped-field rows only for the active cells, with bond
  // endpoints resolved to row positions once (the quadrature loop is hot)
  std::map<std::pair<int, int>, int> cell_pos;
  for (std::size_t i = 0; i < cells.size(); ++i)
    cell_pos[{cells[i].k, cells[i].index}] = static_cast<int>(i);
  struct BondTerm {
    int row, s1, s2;  // rows in the mapped vector; -1 when outside the suite
  };
  std::vector<int> site_rows;
  std::vector<BondTerm> bond_terms;
  for (int i : region_cells) {
    if (cells[i].k == 0) {
      site_rows.push_back(i);
    } else if (cells[i].k == 1) {
      Cell bc = g.cell(1, cells[i].index);
      auto y = bc.x;
      y[bc.dirs[0]] += 1;
      auto it1 = cell_pos.find({0, g.site_index(bc.x)});
      auto it2 = cell_pos.find({0, g.site_index(y)});
      bond_terms.push_back({i, it1 == cell_pos.end() ? -1 : it1->second,
                            it2 == cell_pos.end() ? -1 : it2->second});
    }
  }
  Eigen::MatrixXd Ksub(cells.size(), dims);
  for (std::size_t r = 0; r < cells.size(); ++r)
    for (int q = 0; q < dims; ++q) Ksub(r, q) = suite.Chalf_loc.mat(r, region_cells[q]);

  const double rho0 = c.rho0();
  const double e0 = c.e0;
  const double cubic = std::sqrt(2.0 * c.lambda) * c.mu;
  auto interaction = [&](const Eigen::VectorXd& mapped) {
    double V = 0.0;
    for (int i : site_rows) {
      double rr = mapped(i);
      V += c.lambda * rr * rr * rr * rr + cubic * rr * rr * rr - std::log1p(rr / rho0);
    }
    for (const auto& bt : bond_terms) {
      double a = mapped(bt.row);
      double omc = 1.0 - std::cos(e0 * a);
      double r1 = bt.s1 >= 0 ? mapped(bt.s1) : 0.0;
      double r2 = bt.s2 >= 0 ? mapped(bt.s2) : 0.0;
      V += rho0 * rho0 * (omc - 0.5 * e0 * e0 * a * a) + rho0 * (r1 + r2) * omc + r1 * r2 * omc;
    }
    return V;
  };

  double total = 0.0;
  std::vector<int> idx(dims, 0);
  Eigen::VectorXd phi(dims);
  const double norm = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  const bool with_bg = background.size() == static_cast<Eigen::Index>(cells.size());
  Eigen::VectorXd mapped(cells.size());
  while (true) {
    double wgt = 1.0;
    for (int q = 0; q < dims; ++q) {
      double x = (2.0 * x01[idx[q]] - 1.0) * p0_cut;
      phi(q) = x;
      wgt *= 2.0 * p0_cut * w01[idx[q]] * norm * std::exp(-0.5 * x * x);
    }
    mapped.noalias() = Ksub * phi;
    if (with_bg) mapped += background;
    total += wgt * std::exp(-interaction(mapped));
    int q = dims - 1;
    while (q >= 0 && idx[q] == gl_nodes - 1) idx[q--] = 0;
    if (q < 0) break;
    ++idx[q];
  }
  return std::log(total);
}

PolymerWeights small_field_activities(const OperatorSuite& suite, const Couplings& c,
                                      const BlockPartition& part,
                                      const std::vector<int>& region_blocks, double p0_cut,
                                      int gl_nodes) {
  // cells of each block, restricted to the suite
  std::map<int, std::vector<int>> block_cells;
  for (std::size_t i = 0; i < suite.T.cells.size(); ++i) {
    int b = part.block_of_cell(suite.T.cells[i].k, suite.T.cells[i].index);
    block_cells[b].push_back(static_cast<int>(i));
  }
  const int nb = static_cast<int>(region_blocks.size());
  if (nb > 16) throw std::invalid_argument("activity region too large");
  std::vector<double> lnxi(1 << nb, 0.0);
  for (int mask = 1; mask < (1 << nb); ++mask) {
    std::vector<int> cells;
    for (int i = 0; i < nb; ++i)
      if (mask & (1 << i)) {
        auto it = block_cells.find(region_blocks[i]);
        if (it != block_cells.end())
          cells.insert(cells.end(), it->second.begin(), it->second.end());
      }
    lnxi[mask] = log_small_field_integral(suite, c, cells, p0_cut, gl_nodes);
  }
  PolymerWeights H;
  for (int mask = 1; mask < (1 << nb); ++mask) {
    double h = 0.0;
    int bits = __builtin_popcount(static_cast<unsigned>(mask));
    for (int sub = mask;; sub = (sub - 1) & mask) {
      int sb = __builtin_popcount(static_cast<unsigned>(sub));
      double sgn = ((bits - sb) % 2) ? -1.0 : 1.0;
      h += sgn * lnxi[sub];
      if (sub == 0) break;
    }
    if (std::abs(h) > 1e-300) {
      std::vector<int> blocks;
      for (int i = 0; i < nb; ++i)
        if (mask & (1 << i)) blocks.push_back(region_blocks[i]);
      H[blocks] = h;
    }
  }
  return H;
}

}  // namespace ahm
