#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fblab/error.hpp"

namespace fblab {

using Point = std::array<double, 2>;
using Vec2 = std::array<double, 2>;

/// Sum with a fixed binary tree so the result does not depend on how the
/// caller partitions work.
inline double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 16;
  if (values.size() <= kLeaf) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

/// Interval [lo[0], hi[0]] or axis-aligned rectangle.
class Domain {
 public:
  static Domain interval(double a, double b) { return Domain(1, {a, 0.0}, {b, 0.0}); }
  static Domain rectangle(double a1, double b1, double a2, double b2) {
    return Domain(2, {a1, a2}, {b1, b2});
  }

  int dim() const noexcept { return dim_; }
  double lower(int axis) const { return lo_[axis]; }
  double upper(int axis) const { return hi_[axis]; }
  double length(int axis) const { return hi_[axis] - lo_[axis]; }
  double measure() const { return dim_ == 1 ? length(0) : length(0) * length(1); }
  double diameter() const {
    return dim_ == 1 ? length(0) : std::hypot(length(0), length(1));
  }
  bool contains(const Point& x) const {
    for (int a = 0; a < dim_; ++a)
      if (x[a] < lo_[a] || x[a] > hi_[a]) return false;
    return true;
  }
  /// Euclidean distance from an interior point to the boundary.
  double distance_to_boundary(const Point& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (int a = 0; a < dim_; ++a) d = std::min({d, x[a] - lo_[a], hi_[a] - x[a]});
    return d;
  }

  bool operator==(const Domain&) const = default;

 private:
  Domain(int dim, Point lo, Point hi) : dim_(dim), lo_(lo), hi_(hi) {
    for (int a = 0; a < dim_; ++a) {
      if (!(std::isfinite(lo_[a]) && std::isfinite(hi_[a]) && hi_[a] > lo_[a]))
        throw Error(ErrorCode::kInvalidDomain, "every axis needs a strictly positive length");
    }
  }

  int dim_;
  Point lo_;
  Point hi_;
};

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// One P1 element: a segment (2 vertices) or a triangle (3 vertices).
/// The gradient on the element is sum_k u[vertex[k]] * coef[k].
struct Element {
  std::array<std::size_t, 3> vertex{};
  std::array<Vec2, 3> coef{};
  int count = 0;
  double measure = 0.0;
};

/// Uniform grid with N subdivisions per axis. In 2-D every cell is split into
/// two triangles along the lower-left to upper-right diagonal. Nodes are
/// stored row-major (x fastest).
class Grid {
 public:
  Grid(const Domain& domain, int n) : domain_(domain), n_(n) {
    if (n < 2) throw Error(ErrorCode::kInvalidResolution, "need N >= 2, got " + std::to_string(n));
    for (int a = 0; a < domain_.dim(); ++a) h_[a] = domain_.length(a) / n_;
  }

  const Domain& domain() const noexcept { return domain_; }
  int dim() const noexcept { return domain_.dim(); }
  int cells_per_axis() const noexcept { return n_; }
  std::size_t nodes_per_axis() const noexcept { return static_cast<std::size_t>(n_) + 1; }
  std::size_t num_nodes() const noexcept {
    return dim() == 1 ? nodes_per_axis() : nodes_per_axis() * nodes_per_axis();
  }
  std::size_t num_elements() const noexcept {
    const auto n = static_cast<std::size_t>(n_);
    return dim() == 1 ? n : 2 * n * n;
  }
  double spacing(int axis) const { return h_[axis]; }
  /// Largest spacing over axes.
  double h() const { return dim() == 1 ? h_[0] : std::max(h_[0], h_[1]); }
  double element_measure() const { return dim() == 1 ? h_[0] : 0.5 * h_[0] * h_[1]; }

  std::size_t index(std::size_t i, std::size_t j = 0) const { return j * nodes_per_axis() + i; }
  std::size_t ix(std::size_t node) const { return node % nodes_per_axis(); }
  std::size_t iy(std::size_t node) const { return dim() == 1 ? 0 : node / nodes_per_axis(); }

  Point coords(std::size_t node) const {
    Point x{domain_.lower(0) + static_cast<double>(ix(node)) * h_[0], 0.0};
    if (dim() == 2) x[1] = domain_.lower(1) + static_cast<double>(iy(node)) * h_[1];
    return x;
  }

  bool is_boundary(std::size_t node) const {
    const std::size_t last = static_cast<std::size_t>(n_);
    const std::size_t i = ix(node);
    if (i == 0 || i == last) return true;
    if (dim() == 1) return false;
    const std::size_t j = iy(node);
    return j == 0 || j == last;
  }

  std::vector<bool> boundary_mask() const {
    std::vector<bool> mask(num_nodes());
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = is_boundary(k);
    return mask;
  }

  Element element(std::size_t e) const {
    Element el;
    el.measure = element_measure();
    if (dim() == 1) {
      el.count = 2;
      el.vertex = {e, e + 1, 0};
      el.coef = {Vec2{-1.0 / h_[0], 0.0}, Vec2{1.0 / h_[0], 0.0}, Vec2{0.0, 0.0}};
      return el;
    }
    const std::size_t cell = e / 2;
    const std::size_t n = static_cast<std::size_t>(n_);
    const std::size_t i = cell % n;
    const std::size_t j = cell / n;
    const std::size_t ll = index(i, j), lr = index(i + 1, j), ur = index(i + 1, j + 1),
                      ul = index(i, j + 1);
    const double ax = 1.0 / h_[0], ay = 1.0 / h_[1];
    el.count = 3;
    if (e % 2 == 0) {
      // lower-right triangle (ll, lr, ur)
      el.vertex = {ll, lr, ur};
      el.coef = {Vec2{-ax, 0.0}, Vec2{ax, -ay}, Vec2{0.0, ay}};
    } else {
      // upper-left triangle (ll, ur, ul)
      el.vertex = {ll, ur, ul};
      el.coef = {Vec2{0.0, -ay}, Vec2{ax, 0.0}, Vec2{-ax, ay}};
    }
    return el;
  }

  Point barycenter(std::size_t e) const {
    const Element el = element(e);
    Point c{0.0, 0.0};
    for (int k = 0; k < el.count; ++k) {
      const Point x = coords(el.vertex[k]);
      c[0] += x[0];
      c[1] += x[1];
    }
    c[0] /= el.count;
    c[1] /= el.count;
    return c;
  }

  /// Elements containing `node`; returns how many were written.
  int elements_of_node(std::size_t node, std::array<std::size_t, 6>& out) const {
    int k = 0;
    const auto n = static_cast<std::size_t>(n_);
    const std::size_t i = ix(node);
    if (dim() == 1) {
      if (i > 0) out[k++] = i - 1;
      if (i < n) out[k++] = i;
      return k;
    }
    const std::size_t j = iy(node);
    auto cell = [n](std::size_t ci, std::size_t cj) { return 2 * (cj * n + ci); };
    if (i < n && j < n) {  // node is lower-left of cell (i, j)
      out[k++] = cell(i, j);
      out[k++] = cell(i, j) + 1;
    }
    if (i > 0 && j < n) out[k++] = cell(i - 1, j);  // lower-right of cell (i-1, j)
    if (i > 0 && j > 0) {                            // upper-right of cell (i-1, j-1)
      out[k++] = cell(i - 1, j - 1);
      out[k++] = cell(i - 1, j - 1) + 1;
    }
    if (i < n && j > 0) out[k++] = cell(i, j - 1) + 1;  // upper-left of cell (i, j-1)
    return k;
  }

  /// Nodes sharing an element edge with `node`.
  int neighbors(std::size_t node, std::array<std::size_t, 6>& out) const {
    int k = 0;
    const auto n = static_cast<std::size_t>(n_);
    const std::size_t i = ix(node);
    if (dim() == 1) {
      if (i > 0) out[k++] = node - 1;
      if (i < n) out[k++] = node + 1;
      return k;
    }
    const std::size_t j = iy(node);
    if (i > 0) out[k++] = index(i - 1, j);
    if (i < n) out[k++] = index(i + 1, j);
    if (j > 0) out[k++] = index(i, j - 1);
    if (j < n) out[k++] = index(i, j + 1);
    if (i > 0 && j > 0) out[k++] = index(i - 1, j - 1);
    if (i < n && j < n) out[k++] = index(i + 1, j + 1);
    return k;
  }

  /// Edges of the triangulation, each listed once as (a, b) with a < b.
  std::vector<std::array<std::size_t, 2>> edges() const {
    std::vector<std::array<std::size_t, 2>> out;
    std::array<std::size_t, 6> nb{};
    for (std::size_t a = 0; a < num_nodes(); ++a) {
      const int k = neighbors(a, nb);
      for (int t = 0; t < k; ++t)
        if (nb[t] > a) out.push_back({a, nb[t]});
    }
    return out;
  }

  bool operator==(const Grid& other) const {
    return domain_ == other.domain_ && n_ == other.n_;
  }

 private:
  Domain domain_;
  int n_;
  Vec2 h_{0.0, 0.0};
};

inline Grid build_grid(const Domain& domain, int n) { return Grid(domain, n); }

// ---------------------------------------------------------------------------
// DiscreteFunction
// ---------------------------------------------------------------------------

/// Node values of a continuous piecewise-linear function on a Grid.
class DiscreteFunction {
 public:
  explicit DiscreteFunction(Grid grid) : grid_(std::move(grid)), values_(grid_.num_nodes(), 0.0) {}

  DiscreteFunction(Grid grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.num_nodes())
      throw Error(ErrorCode::kShapeMismatch, "value count " + std::to_string(values_.size()) +
                                                 " != node count " +
                                                 std::to_string(grid_.num_nodes()));
    for (double v : values_)
      if (!std::isfinite(v)) throw Error(ErrorCode::kNumericalFailure, "non-finite node value");
  }

  template <class Fn>
  static DiscreteFunction sample(const Grid& grid, Fn&& fn) {
    std::vector<double> v(grid.num_nodes());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = fn(grid.coords(k));
    return DiscreteFunction(grid, std::move(v));
  }

  const Grid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  double& operator[](std::size_t k) { return values_[k]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double barycenter_value(const Element& el) const {
    double s = 0.0;
    for (int k = 0; k < el.count; ++k) s += values_[el.vertex[k]];
    return s / el.count;
  }

  Vec2 gradient(const Element& el) const {
    Vec2 g{0.0, 0.0};
    for (int k = 0; k < el.count; ++k) {
      const double v = values_[el.vertex[k]];
      g[0] += v * el.coef[k][0];
      g[1] += v * el.coef[k][1];
    }
    return g;
  }

  double sup_norm() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  Grid grid_;
  std::vector<double> values_;
};

inline void require_same_grid(const Grid& a, const Grid& b) {
  if (!(a == b)) throw Error(ErrorCode::kShapeMismatch, "functions live on different grids");
}

// ---------------------------------------------------------------------------
// Calculus on the grid
// ---------------------------------------------------------------------------

inline std::vector<Vec2> cell_gradients(const DiscreteFunction& u) {
  const Grid& g = u.grid();
  std::vector<Vec2> out(g.num_elements());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = u.gradient(g.element(e));
  return out;
}

/// Sum of per-element values times element measure.
inline double integrate(const Grid& grid, std::span<const double> per_element) {
  if (per_element.size() != grid.num_elements())
    throw Error(ErrorCode::kShapeMismatch, "integrand needs one value per element");
  return pairwise_sum(per_element) * grid.element_measure();
}

/// L^q norm with barycenter quadrature; q = +inf gives the nodal max.
inline double lq_norm(const DiscreteFunction& u, double q) {
  if (std::isinf(q) && q > 0) return u.sup_norm();
  if (!(q >= 1.0)) throw Error(ErrorCode::kInvalidExponent, "q must be >= 1 or infinity");
  const Grid& g = u.grid();
  std::vector<double> vals(g.num_elements());
  for (std::size_t e = 0; e < vals.size(); ++e)
    vals[e] = std::pow(std::abs(u.barycenter_value(g.element(e))), q);
  return std::pow(integrate(g, vals), 1.0 / q);
}

/// Discrete W^{1,p} norm (||u||_p^p + ||grad u||_p^p)^{1/p}.
inline double w1p_norm(const DiscreteFunction& u, double p) {
  const Grid& g = u.grid();
  std::vector<double> vals(g.num_elements());
  for (std::size_t e = 0; e < vals.size(); ++e) {
    const Element el = g.element(e);
    const Vec2 gr = u.gradient(el);
    vals[e] = std::pow(std::abs(u.barycenter_value(el)), p) +
              std::pow(std::hypot(gr[0], gr[1]), p);
  }
  return std::pow(integrate(g, vals), 1.0 / p);
}

inline double distance(const Point& a, const Point& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

inline std::vector<std::size_t> ball_nodes(const Grid& grid, const Point& center, double r) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < grid.num_nodes(); ++k)
    if (distance(grid.coords(k), center) <= r) out.push_back(k);
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Header `x,u` (1-D) or `x,y,u` (2-D), one row per node in storage order.
inline void write_csv(std::ostream& os, const DiscreteFunction& u) {
  const Grid& g = u.grid();
  os << (g.dim() == 1 ? "x,u\n" : "x,y,u\n");
  for (std::size_t k = 0; k < u.size(); ++k) {
    const Point x = g.coords(k);
    os << format_double(x[0]) << ',';
    if (g.dim() == 2) os << format_double(x[1]) << ',';
    os << format_double(u[k]) << '\n';
  }
}

/// Reads a CSV written by write_csv onto `grid`; coordinates must match.
inline DiscreteFunction read_csv(std::istream& is, const Grid& grid) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::kIo, "empty CSV");
  const std::string expected = grid.dim() == 1 ? "x,u" : "x,y,u";
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) throw Error(ErrorCode::kIo, "unexpected CSV header '" + line + "'");
  std::vector<double> values;
  values.reserve(grid.num_nodes());
  const double tol = 1e-9 * grid.domain().diameter();
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> cols;
    while (std::getline(row, cell, ',')) cols.push_back(std::stod(cell));
    if (cols.size() != static_cast<std::size_t>(grid.dim()) + 1)
      throw Error(ErrorCode::kIo, "bad CSV row '" + line + "'");
    const std::size_t k = values.size();
    if (k >= grid.num_nodes()) throw Error(ErrorCode::kShapeMismatch, "too many CSV rows");
    const Point x = grid.coords(k);
    for (int a = 0; a < grid.dim(); ++a)
      if (std::abs(cols[a] - x[a]) > tol)
        throw Error(ErrorCode::kShapeMismatch, "CSV coordinates do not match the grid");
    values.push_back(cols.back());
  }
  return DiscreteFunction(grid, std::move(values));
}

}  // namespace fblab
