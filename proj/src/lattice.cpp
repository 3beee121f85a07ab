#include "ahm/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <queue>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ahm {

namespace {

// All k-subsets of {0..d-1} in lexicographic order.
std::vector<std::array<int, 3>> direction_combos(int d, int k) {
  std::vector<std::array<int, 3>> out;
  if (k == 0) {
    out.push_back({0, 0, 0});
    return out;
  }
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    std::array<int, 3> c{};
    for (int i = 0; i < k; ++i) c[i] = idx[i];
    out.push_back(c);
    int i = k - 1;
    while (i >= 0 && idx[i] == d - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

}  // namespace

LatticeGeometry::LatticeGeometry(int d, int L) : d_(d), L_(L) {
  if (d < 1 || d > kMaxDim) throw std::invalid_argument("lattice dimension out of range");
  if (L < 2) throw std::invalid_argument("lattice extent must be >= 2");
  for (int k = 0; k <= 3; ++k) {
    if (k > d_) {
      counts_[k] = 0;
      continue;
    }
    combos_[k] = direction_combos(d_, k);
    int per = 1;
    // cells per combo: (L-1)^k * L^(d-k)
    for (int i = 0; i < k; ++i) per *= (L_ - 1);
    for (int i = 0; i < d_ - k; ++i) per *= L_;
    combo_offset_[k].resize(combos_[k].size());
    int off = 0;
    for (std::size_t c = 0; c < combos_[k].size(); ++c) {
      combo_offset_[k][c] = off;
      off += per;
    }
    counts_[k] = off;
  }
}

void LatticeGeometry::check_degree(int k) const {
  if (k < 0 || k > 3 || k > d_) throw std::invalid_argument("cell degree out of range");
}

int LatticeGeometry::cell_count(int k) const {
  if (k < 0 || k > 3 || k > d_) return 0;
  return counts_[k];
}

Cell LatticeGeometry::cell(int k, int index) const {
  check_degree(k);
  if (index < 0 || index >= counts_[k]) throw std::out_of_range("cell index");
  int per = counts_[k] / static_cast<int>(combos_[k].size());
  int c = index / per;
  int rem = index % per;
  Cell out;
  out.k = k;
  out.dirs = combos_[k][c];
  // mixed radix decode, axis 0 fastest
  const auto& dirs = combos_[k][c];
  for (int axis = 0; axis < d_; ++axis) {
    bool in_combo = false;
    for (int i = 0; i < k; ++i) in_combo |= (dirs[i] == axis);
    int radix = in_combo ? L_ - 1 : L_;
    out.x[axis] = rem % radix;
    rem /= radix;
  }
  return out;
}

int LatticeGeometry::cell_index(const Cell& c) const {
  check_degree(c.k);
  int combo = -1;
  for (std::size_t i = 0; i < combos_[c.k].size(); ++i) {
    if (combos_[c.k][i] == c.dirs) {
      combo = static_cast<int>(i);
      break;
    }
  }
  if (combo < 0) throw std::invalid_argument("bad direction combination");
  int idx = 0;
  int stride = 1;
  for (int axis = 0; axis < d_; ++axis) {
    bool in_combo = false;
    for (int i = 0; i < c.k; ++i) in_combo |= (c.dirs[i] == axis);
    int radix = in_combo ? L_ - 1 : L_;
    if (c.x[axis] < 0 || c.x[axis] >= radix) return -1;
    idx += c.x[axis] * stride;
    stride *= radix;
  }
  return combo_offset_[c.k][combo] + idx;
}

int LatticeGeometry::site_index(const int* x) const {
  int idx = 0;
  int stride = 1;
  for (int axis = 0; axis < d_; ++axis) {
    if (x[axis] < 0 || x[axis] >= L_) return -1;
    idx += x[axis] * stride;
    stride *= L_;
  }
  return idx;
}

std::array<int, kMaxDim> LatticeGeometry::site_coords(int s) const {
  std::array<int, kMaxDim> x{};
  for (int axis = 0; axis < d_; ++axis) {
    x[axis] = s % L_;
    s /= L_;
  }
  return x;
}

int LatticeGeometry::bond_index(const int* x, int mu) const {
  Cell c;
  c.k = 1;
  c.dirs = {mu, 0, 0};
  for (int i = 0; i < d_; ++i) c.x[i] = x[i];
  if (mu < 0 || mu >= d_) return -1;
  if (x[mu] < 0 || x[mu] >= L_ - 1) return -1;
  for (int i = 0; i < d_; ++i)
    if (x[i] < 0 || x[i] >= L_) return -1;
  return cell_index(c);
}

int LatticeGeometry::plaquette_index(const int* x, int mu, int nu) const {
  if (mu > nu) std::swap(mu, nu);
  if (mu == nu || mu < 0 || nu >= d_) return -1;
  Cell c;
  c.k = 2;
  c.dirs = {mu, nu, 0};
  for (int i = 0; i < d_; ++i) c.x[i] = x[i];
  if (x[mu] < 0 || x[mu] >= L_ - 1 || x[nu] < 0 || x[nu] >= L_ - 1) return -1;
  for (int i = 0; i < d_; ++i)
    if (x[i] < 0 || x[i] >= L_) return -1;
  return cell_index(c);
}

std::vector<int> LatticeGeometry::corner_sites(int k, int index) const {
  Cell c = cell(k, index);
  std::vector<int> out;
  out.reserve(std::size_t{1} << k);
  for (int mask = 0; mask < (1 << k); ++mask) {
    std::array<int, kMaxDim> x = c.x;
    for (int i = 0; i < k; ++i)
      if (mask & (1 << i)) x[c.dirs[i]] += 1;
    out.push_back(site_index(x));
  }
  return out;
}

double LatticeGeometry::site_distance(int s1, int s2, Metric m) const {
  auto a = site_coords(s1);
  auto b = site_coords(s2);
  int acc = 0;
  for (int axis = 0; axis < d_; ++axis) {
    int diff = std::abs(a[axis] - b[axis]);
    if (m == Metric::Sup)
      acc = std::max(acc, diff);
    else
      acc += diff;
  }
  return static_cast<double>(acc);
}

double LatticeGeometry::cell_distance(const CellRef& a, const CellRef& b, Metric m) const {
  auto sa = corner_sites(a.k, a.index);
  auto sb = corner_sites(b.k, b.index);
  double best = std::numeric_limits<double>::infinity();
  for (int s1 : sa)
    for (int s2 : sb) best = std::min(best, site_distance(s1, s2, m));
  return best;
}

Form make_form(const LatticeGeometry& g, int k) { return Form(k, g.cell_count(k)); }
ComplexForm make_complex_form(const LatticeGeometry& g, int k) {
  return ComplexForm(k, g.cell_count(k));
}

namespace {

template <class T>
BasicForm<T> d_impl(const LatticeGeometry& g, const BasicForm<T>& f) {
  if (f.degree != 0 && f.degree != 1) throw std::invalid_argument("exterior derivative needs degree 0 or 1");
  if (static_cast<int>(f.size()) != g.cell_count(f.degree))
    throw std::invalid_argument("form length does not match geometry");
  BasicForm<T> out(f.degree + 1, g.cell_count(f.degree + 1));
  if (f.degree == 0) {
    for (int b = 0; b < g.bond_count(); ++b) {
      Cell c = g.cell(1, b);
      auto y = c.x;
      y[c.dirs[0]] += 1;
      out[b] = f[g.site_index(y)] - f[g.site_index(c.x)];
    }
  } else {
    for (int p = 0; p < g.plaquette_count(); ++p) {
      Cell c = g.cell(2, p);
      int mu = c.dirs[0], nu = c.dirs[1];
      auto xmu = c.x;
      xmu[mu] += 1;
      auto xnu = c.x;
      xnu[nu] += 1;
      out[p] = f[g.bond_index(c.x.data(), mu)] + f[g.bond_index(xmu.data(), nu)] -
               f[g.bond_index(xnu.data(), mu)] - f[g.bond_index(c.x.data(), nu)];
    }
  }
  return out;
}

template <class T>
BasicForm<T> delta_impl(const LatticeGeometry& g, const BasicForm<T>& f) {
  if (f.degree != 1 && f.degree != 2) throw std::invalid_argument("codifferential needs degree 1 or 2");
  if (static_cast<int>(f.size()) != g.cell_count(f.degree))
    throw std::invalid_argument("form length does not match geometry");
  BasicForm<T> out(f.degree - 1, g.cell_count(f.degree - 1));
  if (f.degree == 1) {
    for (int b = 0; b < g.bond_count(); ++b) {
      Cell c = g.cell(1, b);
      auto y = c.x;
      y[c.dirs[0]] += 1;
      out[g.site_index(y)] += f[b];
      out[g.site_index(c.x)] -= f[b];
    }
  } else {
    for (int p = 0; p < g.plaquette_count(); ++p) {
      Cell c = g.cell(2, p);
      int mu = c.dirs[0], nu = c.dirs[1];
      auto xmu = c.x;
      xmu[mu] += 1;
      auto xnu = c.x;
      xnu[nu] += 1;
      out[g.bond_index(c.x.data(), mu)] += f[p];
      out[g.bond_index(xmu.data(), nu)] += f[p];
      out[g.bond_index(xnu.data(), mu)] -= f[p];
      out[g.bond_index(c.x.data(), nu)] -= f[p];
    }
  }
  return out;
}

}  // namespace

Form exterior_derivative(const LatticeGeometry& g, const Form& f) { return d_impl(g, f); }
ComplexForm exterior_derivative(const LatticeGeometry& g, const ComplexForm& f) {
  return d_impl(g, f);
}
Form codifferential(const LatticeGeometry& g, const Form& f) { return delta_impl(g, f); }
ComplexForm codifferential(const LatticeGeometry& g, const ComplexForm& f) {
  return delta_impl(g, f);
}

int cube_count(const LatticeGeometry& g) { return g.cell_count(3); }

std::vector<double> two_form_d_on_cubes(const LatticeGeometry& g, const Form& v) {
  if (v.degree != 2) throw std::invalid_argument("dv needs a 2-form");
  std::vector<double> out(cube_count(g), 0.0);
  for (int q = 0; q < cube_count(g); ++q) {
    Cell c = g.cell(3, q);
    int mu = c.dirs[0], nu = c.dirs[1], ka = c.dirs[2];
    auto shift = [&](int axis) {
      auto y = c.x;
      y[axis] += 1;
      return y;
    };
    auto pidx = [&](const std::array<int, kMaxDim>& x, int a, int b) {
      return g.plaquette_index(x.data(), a, b);
    };
    // (dv)(x;mu,nu,ka) = [v(x+e_mu)-v(x)]_{nu,ka} - [v(x+e_nu)-v(x)]_{mu,ka}
    //                  + [v(x+e_ka)-v(x)]_{mu,nu}
    auto xm = shift(mu), xn = shift(nu), xk = shift(ka);
    out[q] = (v[pidx(xm, nu, ka)] - v[pidx(c.x, nu, ka)]) -
             (v[pidx(xn, mu, ka)] - v[pidx(c.x, mu, ka)]) +
             (v[pidx(xk, mu, nu)] - v[pidx(c.x, mu, nu)]);
  }
  return out;
}

QuadraticForms quadratic_forms(const LatticeGeometry& g, const Form& rho, const Form& A) {
  if (rho.degree != 0 || A.degree != 1) throw std::invalid_argument("need a 0-form and a 1-form");
  QuadraticForms out{0.0, 0.0};
  // interior bonds
  for (int b = 0; b < g.bond_count(); ++b) {
    Cell c = g.cell(1, b);
    auto y = c.x;
    y[c.dirs[0]] += 1;
    double diff = rho[g.site_index(y)] - rho[g.site_index(c.x)];
    out.site_dirichlet += diff * diff;
  }
  // Dirichlet frame: bonds from boundary sites to the zero exterior
  int L = g.extent();
  for (int s = 0; s < g.site_count(); ++s) {
    auto x = g.site_coords(s);
    for (int mu = 0; mu < g.dim(); ++mu) {
      if (x[mu] == 0) out.site_dirichlet += rho[s] * rho[s];
      if (x[mu] == L - 1) out.site_dirichlet += rho[s] * rho[s];
    }
  }
  Form dA = exterior_derivative(g, A);
  for (int p = 0; p < g.plaquette_count(); ++p) out.bond_plaquette += dA[p] * dA[p];
  return out;
}

double inner(const Form& a, const Form& b) {
  if (a.degree != b.degree || a.size() != b.size())
    throw std::invalid_argument("inner product needs matching forms");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

std::complex<double> inner(const Form& a, const ComplexForm& b) {
  if (a.degree != b.degree || a.size() != b.size())
    throw std::invalid_argument("inner product needs matching forms");
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double minimal_tree_length(const LatticeGeometry& g, const std::vector<CellRef>& points,
                           Metric metric) {
  if (points.empty()) throw std::invalid_argument("minimal tree needs a nonempty point set");
  const int n = static_cast<int>(points.size());
  if (n == 1) return 0.0;
  // Prim's algorithm on the complete graph.
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> used(n, 0);
  dist[0] = 0.0;
  double total = 0.0;
  for (int iter = 0; iter < n; ++iter) {
    int best = -1;
    for (int i = 0; i < n; ++i)
      if (!used[i] && (best < 0 || dist[i] < dist[best])) best = i;
    used[best] = 1;
    total += dist[best];
    for (int i = 0; i < n; ++i)
      if (!used[i]) dist[i] = std::min(dist[i], g.cell_distance(points[best], points[i], metric));
  }
  return total;
}

double minimal_tree_length_sites(const std::vector<std::array<int, kMaxDim>>& pts, int d,
                                 Metric metric) {
  if (pts.empty()) throw std::invalid_argument("minimal tree needs a nonempty point set");
  const int n = static_cast<int>(pts.size());
  if (n == 1) return 0.0;
  auto dist = [&](int i, int j) {
    int acc = 0;
    for (int axis = 0; axis < d; ++axis) {
      int diff = std::abs(pts[i][axis] - pts[j][axis]);
      if (metric == Metric::Sup)
        acc = std::max(acc, diff);
      else
        acc += diff;
    }
    return static_cast<double>(acc);
  };
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<char> used(n, 0);
  best[0] = 0.0;
  double total = 0.0;
  for (int iter = 0; iter < n; ++iter) {
    int b = -1;
    for (int i = 0; i < n; ++i)
      if (!used[i] && (b < 0 || best[i] < best[b])) b = i;
    used[b] = 1;
    total += best[b];
    for (int i = 0; i < n; ++i)
      if (!used[i]) best[i] = std::min(best[i], dist(b, i));
  }
  return total;
}

BlockPartition::BlockPartition(const LatticeGeometry& g, int r) : geom_(&g), r_(r) {
  if (r < 1) throw std::invalid_argument("block side must be >= 1");
  nblocks_ = 1;
  for (int axis = 0; axis < g.dim(); ++axis) {
    grid_[axis] = (g.extent() + r - 1) / r;
    nblocks_ *= grid_[axis];
  }
}

int BlockPartition::block_of_site(int s) const {
  auto x = geom_->site_coords(s);
  int idx = 0;
  int stride = 1;
  for (int axis = 0; axis < geom_->dim(); ++axis) {
    idx += (x[axis] / r_) * stride;
    stride *= grid_[axis];
  }
  return idx;
}

int BlockPartition::block_of_cell(int k, int index) const {
  Cell c = geom_->cell(k, index);
  return block_of_site(geom_->site_index(c.x));
}

std::array<int, kMaxDim> BlockPartition::block_coords(int b) const {
  std::array<int, kMaxDim> bc{};
  for (int axis = 0; axis < geom_->dim(); ++axis) {
    bc[axis] = b % grid_[axis];
    b /= grid_[axis];
  }
  return bc;
}

int BlockPartition::block_index(const std::array<int, kMaxDim>& bc) const {
  int idx = 0;
  int stride = 1;
  for (int axis = 0; axis < geom_->dim(); ++axis) {
    if (bc[axis] < 0 || bc[axis] >= grid_[axis]) return -1;
    idx += bc[axis] * stride;
    stride *= grid_[axis];
  }
  return idx;
}

std::vector<int> BlockPartition::cells_in_block(int k, int b) const {
  std::vector<int> out;
  for (int i = 0; i < geom_->cell_count(k); ++i)
    if (block_of_cell(k, i) == b) out.push_back(i);
  return out;
}

int BlockPartition::block_grid_distance(int b1, int b2) const {
  auto c1 = block_coords(b1);
  auto c2 = block_coords(b2);
  int acc = 0;
  for (int axis = 0; axis < geom_->dim(); ++axis)
    acc = std::max(acc, std::abs(c1[axis] - c2[axis]));
  return acc;
}

bool BlockPartition::adjacent(int b1, int b2) const {
  return b1 != b2 && block_grid_distance(b1, b2) <= 1;
}

std::vector<int> BlockPartition::neighbors(int b) const {
  std::vector<int> out;
  auto bc = block_coords(b);
  int d = geom_->dim();
  int combos = 1;
  for (int i = 0; i < d; ++i) combos *= 3;
  for (int m = 0; m < combos; ++m) {
    auto nc = bc;
    int rem = m;
    bool self = true;
    for (int axis = 0; axis < d; ++axis) {
      int step = rem % 3 - 1;
      rem /= 3;
      nc[axis] += step;
      self &= (step == 0);
    }
    if (self) continue;
    int nb = block_index(nc);
    if (nb >= 0) out.push_back(nb);
  }
  return out;
}

std::vector<Polymer> connect_blocks(const std::vector<int>& blocks, const BlockPartition& part) {
  std::vector<int> sorted(blocks);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<char> seen(sorted.size(), 0);
  std::vector<Polymer> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (seen[i]) continue;
    Polymer poly;
    std::queue<std::size_t> q;
    q.push(i);
    seen[i] = 1;
    while (!q.empty()) {
      std::size_t j = q.front();
      q.pop();
      poly.blocks.push_back(sorted[j]);
      for (std::size_t k = 0; k < sorted.size(); ++k)
        if (!seen[k] && part.adjacent(sorted[j], sorted[k])) {
          seen[k] = 1;
          q.push(k);
        }
    }
    std::sort(poly.blocks.begin(), poly.blocks.end());
    poly.connected = true;
    out.push_back(std::move(poly));
  }
  std::sort(out.begin(), out.end(),
            [](const Polymer& a, const Polymer& b) { return a.blocks < b.blocks; });
  return out;
}

bool blocks_connected(const std::vector<int>& blocks, const BlockPartition& part) {
  if (blocks.empty()) return false;
  return connect_blocks(blocks, part).size() == 1;
}

std::string geometry_to_json(const LatticeGeometry& g) {
  nlohmann::json j;
  j["d"] = g.dim();
  j["L"] = g.extent();
  j["boundary"] = "dirichlet";
  return j.dump();
}

LatticeGeometry geometry_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  if (j.value("boundary", "dirichlet") != std::string("dirichlet"))
    throw std::invalid_argument("only dirichlet boundaries are supported");
  return LatticeGeometry(j.at("d").get<int>(), j.at("L").get<int>());
}

std::string form_to_csv(const Form& f) {
  std::ostringstream os;
  os << "index,value\n";
  os.precision(17);
  for (std::size_t i = 0; i < f.size(); ++i) os << i << "," << f[i] << "\n";
  return os.str();
}

Form form_from_csv(int degree, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<double> vals;
  while (std::getline(is, line)) {
    if (line.empty() || line.rfind("index", 0) == 0) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    std::size_t idx = std::stoul(line.substr(0, comma));
    double v = std::stod(line.substr(comma + 1));
    if (vals.size() <= idx) vals.resize(idx + 1, 0.0);
    vals[idx] = v;
  }
  Form f(degree, vals.size());
  f.values = std::move(vals);
  return f;
}

}  // namespace ahm
