#pragma once

// Finite hypercubic lattice with Dirichlet boundary: oriented cells
// (sites, bonds, plaquettes, cubes), discrete exterior calculus,
// block partitions and polymer connectivity.

#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ahm {

inline constexpr int kMaxDim = 4;

enum class Metric { Sup, L1 };

// A k-cell is a base site plus k distinct positive axis directions.
// Bonds point along +e_mu; plaquette (mu,nu) with mu < nu has boundary
// +A(x,mu) +A(x+e_mu,nu) -A(x+e_nu,mu) -A(x,nu).
struct Cell {
  std::array<int, kMaxDim> x{};   // base site coordinates
  std::array<int, 3> dirs{};      // sorted axis directions, dirs[0..k-1]
  int k = 0;
};

// Reference to a cell of a given degree by flat index.
struct CellRef {
  int k = 0;
  int index = 0;
};

class LatticeGeometry {
 public:
  // Hypercubic lattice {0..L-1}^d with fields vanishing outside (Dirichlet).
  // d = 1 is permitted for operator-verification chains.
  LatticeGeometry(int d, int L);

  int dim() const { return d_; }
  int extent() const { return L_; }

  int site_count() const { return cell_count(0); }
  int bond_count() const { return cell_count(1); }
  int plaquette_count() const { return cell_count(2); }
  int cell_count(int k) const;
  int max_cell_degree() const { return d_ < 3 ? d_ : 3; }

  Cell cell(int k, int index) const;
  int cell_index(const Cell& c) const;

  // Site helpers. site_index returns -1 for coordinates outside the lattice.
  int site_index(const int* x) const;
  int site_index(const std::array<int, kMaxDim>& x) const { return site_index(x.data()); }
  std::array<int, kMaxDim> site_coords(int s) const;

  int bond_index(const int* x, int mu) const;       // -1 if not an interior bond
  int plaquette_index(const int* x, int mu, int nu) const;  // -1 if outside

  // The 2^k corner sites of a cell; all lie inside the lattice.
  std::vector<int> corner_sites(int k, int index) const;

  // Distance between cells: infimum over pairs of corner sites
  // (the bond-to-bond convention of the covariance estimates).
  double cell_distance(const CellRef& a, const CellRef& b, Metric m) const;
  double site_distance(int s1, int s2, Metric m) const;

  // Diameter in the sup metric.
  int diameter() const { return L_ - 1; }

 private:
  void check_degree(int k) const;

  int d_ = 0;
  int L_ = 0;
  // Per degree k: list of direction combinations (lexicographic), and per
  // combination the flat-index offset. Coordinates use mixed radix where an
  // axis in the combination has radix L-1 and the others L.
  std::array<std::vector<std::array<int, 3>>, 4> combos_;
  std::array<std::vector<int>, 4> combo_offset_;
  std::array<int, 4> counts_{};
};

template <class T>
struct BasicForm {
  int degree = 0;
  std::vector<T> values;

  BasicForm() = default;
  BasicForm(int k, std::size_t n) : degree(k), values(n, T{}) {}

  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }
};

using Form = BasicForm<double>;
using ComplexForm = BasicForm<std::complex<double>>;

// Degree-k zero form on the geometry, sized to the k-cell count.
Form make_form(const LatticeGeometry& g, int k);
ComplexForm make_complex_form(const LatticeGeometry& g, int k);

// Exterior derivative d: Form(k) -> Form(k+1), k in {0,1}.
// Dirichlet zero-extension: only interior cells are indexed.
Form exterior_derivative(const LatticeGeometry& g, const Form& f);
ComplexForm exterior_derivative(const LatticeGeometry& g, const ComplexForm& f);

// Codifferential (l2 adjoint of d): Form(k) -> Form(k-1), k in {1,2}.
Form codifferential(const LatticeGeometry& g, const Form& f);
ComplexForm codifferential(const LatticeGeometry& g, const ComplexForm& f);

// d of a 2-form evaluated on cubes (d >= 3 only); used for the dv = 0 check.
std::vector<double> two_form_d_on_cubes(const LatticeGeometry& g, const Form& v);
int cube_count(const LatticeGeometry& g);

// <rho,-Delta rho> = sum over bonds, including the Dirichlet frame bonds that
// join boundary sites to the zero exterior, and <A, delta d A> = sum_p (dA)^2.
struct QuadraticForms {
  double site_dirichlet;   // <rho, -Delta rho>
  double bond_plaquette;   // <A, delta d A>
};
QuadraticForms quadratic_forms(const LatticeGeometry& g, const Form& rho, const Form& A);

// l2 inner products on matching degree forms.
double inner(const Form& a, const Form& b);
std::complex<double> inner(const Form& a, const ComplexForm& b);

// Length of a minimum spanning tree over the cells under the chosen metric.
// Surrogate for the minimal (Steiner) tree; MST >= Steiner >= MST/2.
double minimal_tree_length(const LatticeGeometry& g, const std::vector<CellRef>& points,
                           Metric metric);
double minimal_tree_length_sites(const std::vector<std::array<int, kMaxDim>>& pts, int d,
                                 Metric metric);

// Partition of the lattice into blocks of side r (ragged at the far edge).
// Bonds and plaquettes belong to the block of their base site.
class BlockPartition {
 public:
  BlockPartition(const LatticeGeometry& g, int r);

  int block_side() const { return r_; }
  int block_count() const { return nblocks_; }
  int blocks_per_axis(int axis) const { return grid_[axis]; }
  const LatticeGeometry& geometry() const { return *geom_; }

  int block_of_site(int s) const;
  int block_of_cell(int k, int index) const;
  std::array<int, kMaxDim> block_coords(int b) const;
  int block_index(const std::array<int, kMaxDim>& bc) const;

  // Cells of each degree contained in a block (by base site).
  std::vector<int> cells_in_block(int k, int b) const;

  // Blocks are adjacent when they share a hypersurface, face, edge or a site:
  // sup-distance 1 on the block grid.
  bool adjacent(int b1, int b2) const;
  std::vector<int> neighbors(int b) const;

  // Sup-distance in block-grid units.
  int block_grid_distance(int b1, int b2) const;

 private:
  const LatticeGeometry* geom_;
  int r_ = 1;
  int nblocks_ = 0;
  std::array<int, kMaxDim> grid_{};
};

struct Polymer {
  std::vector<int> blocks;  // sorted block ids
  bool connected = false;

  int size() const { return static_cast<int>(blocks.size()); }
  bool operator==(const Polymer& o) const { return blocks == o.blocks; }
};

// Maximal connected components of a block set under corner-touching adjacency.
std::vector<Polymer> connect_blocks(const std::vector<int>& blocks, const BlockPartition& part);

// True if the block set is connected (nonempty).
bool blocks_connected(const std::vector<int>& blocks, const BlockPartition& part);

// Serialization of the geometry: {"d":2,"L":6,"boundary":"dirichlet"}.
std::string geometry_to_json(const LatticeGeometry& g);
LatticeGeometry geometry_from_json(const std::string& text);

// Forms as CSV columns keyed by cell index ("index,value" lines).
std::string form_to_csv(const Form& f);
Form form_from_csv(int degree, const std::string& text);

}  // namespace ahm
