#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "fblab/error.hpp"
#include "fblab/mesh.hpp"
#include "fblab/model.hpp"

namespace fblab {

struct EnergyBreakdown {
  double dirichlet = 0.0;  // int |grad u|^p
  double potential = 0.0;  // int F_gamma(u)
  double source = 0.0;     // int f u
  double total = 0.0;
};

namespace detail {

/// (r2)^{p/2} with fast paths for the common integer exponents.
inline double pow_half(double r2, double p) {
  if (p == 2.0) return r2;
  if (p == 3.0) return r2 * std::sqrt(r2);
  if (p == 4.0) return r2 * r2;
  return std::pow(r2, 0.5 * p);
}

inline double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

/// Lumped mass of every node: sum over incident elements of measure / vertex count.
inline std::vector<double> lumped_mass(const Grid& grid) {
  std::vector<double> m(grid.num_nodes(), 0.0);
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    for (int k = 0; k < el.count; ++k) m[el.vertex[k]] += el.measure / el.count;
  }
  return m;
}

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Lagged-diffusivity metric of int |grad u|^p: the stiffness matrix with
/// element weight p (|g|^2 + delta^2)^{(p-2)/2}, restricted to the nodes
/// with slot[k] >= 0. Gradient steps in this metric are Sobolev gradients.
/// With `hessian` the rank-one term p(p-2)(|g|^2+delta^2)^{(p-4)/2} g g^T is
/// added, giving the regularized Hessian.
inline SparseMatrix dirichlet_metric(const Grid& grid, std::span<const double> u, double p,
                                      double delta, const std::vector<int>& slot, int n_free,
                                      bool hessian = false) {
  std::vector<Triplet> trip;
  trip.reserve(grid.num_elements() * 9);
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    Vec2 g{0.0, 0.0};
    for (int k = 0; k < el.count; ++k) {
      g[0] += u[el.vertex[k]] * el.coef[k][0];
      g[1] += u[el.vertex[k]] * el.coef[k][1];
    }
    const double r2 = dot(g, g) + delta * delta;
    const double w = p * (p == 2.0 ? 1.0 : std::pow(r2, 0.5 * (p - 2.0)));
    const double w2 = hessian && p != 2.0 ? p * (p - 2.0) * std::pow(r2, 0.5 * (p - 4.0)) : 0.0;
    for (int i = 0; i < el.count; ++i) {
      const int si = slot[el.vertex[i]];
      if (si < 0) continue;
      for (int j = 0; j < el.count; ++j) {
        const int sj = slot[el.vertex[j]];
        if (sj < 0) continue;
        const Vec2& ci = el.coef[i];
        const Vec2& cj = el.coef[j];
        const double v = (w * dot(ci, cj) + w2 * dot(g, ci) * dot(g, cj)) * el.measure;
        trip.emplace_back(si, sj, v);
      }
    }
  }
  SparseMatrix h(n_free, n_free);
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Local (single node) energy
// ---------------------------------------------------------------------------

/// Energy of the elements around one node as a function of that node's value.
/// Per-element values are computed in the same order as EnergyModel, so a
/// barycenter that is exactly zero here is exactly zero there too.
struct LocalEnergy {
  struct Term {
    std::array<double, 3> vals{};  // vertex values, 0 in the node's slot
    std::array<Vec2, 3> coef{};
    int slot = 0;
    int count = 0;
    double measure = 0.0;
    double f = 0.0;

    double vertex_sum(double t) const {
      double s = 0.0;
      for (int k = 0; k < count; ++k) s += k == slot ? t : vals[k];
      return s;
    }
    double barycenter(double t) const { return vertex_sum(t) / count; }
    Vec2 gradient(double t) const {
      Vec2 g{0.0, 0.0};
      for (int k = 0; k < count; ++k) {
        const double v = k == slot ? t : vals[k];
        g[0] += v * coef[k][0];
        g[1] += v * coef[k][1];
      }
      return g;
    }
    /// Node value at which the barycenter is exactly zero in floating point
    /// (or the closest value found).
    double zero_crossing() const {
      double rest = 0.0;
      for (int k = 0; k < count; ++k)
        if (k != slot) rest += vals[k];
      double t = -rest;
      for (int tries = 0; tries < 8 && vertex_sum(t) != 0.0; ++tries)
        t = std::nextafter(t, vertex_sum(t) > 0.0 ? -kInf : kInf);
      return t;
    }
  };

  std::array<Term, 6> terms{};
  int count = 0;
  double p = 2.0, gamma = 1.0, lambda_plus = 1.0, lambda_minus = 0.0;
  double eps = 0.0;  // potential smoothing; 0 is the exact potential

  double potential_at(double m) const {
    return eps > 0.0 ? smoothed_potential(m, gamma, lambda_plus, lambda_minus, eps)
                     : potential_value(m, gamma, lambda_plus, lambda_minus);
  }
  double dirichlet_term(const Term& tm, double t) const {
    const Vec2 g = tm.gradient(t);
    return detail::pow_half(detail::dot(g, g), p);
  }
  double potential_term(const Term& tm, double t) const {
    return potential_at(tm.barycenter(t));
  }

  double operator()(double t) const {
    double s = 0.0;
    for (int k = 0; k < count; ++k) {
      const Term& tm = terms[k];
      const Vec2 g = tm.gradient(t);
      const double m = tm.barycenter(t);
      s += tm.measure * (detail::pow_half(detail::dot(g, g), p) + potential_at(m) + tm.f * m);
    }
    return s;
  }

  /// Dirichlet plus source part only (convex in t).
  double smooth_part(double t) const {
    double s = 0.0;
    for (int k = 0; k < count; ++k) {
      const Term& tm = terms[k];
      s += tm.measure * (dirichlet_term(tm, t) + tm.f * tm.barycenter(t));
    }
    return s;
  }

  /// Derivative of smooth_part.
  double smooth_slope(double t) const {
    double s = 0.0;
    for (int k = 0; k < count; ++k) {
      const Term& tm = terms[k];
      const Vec2 g = tm.gradient(t);
      const double r2 = detail::dot(g, g);
      const double w = p == 2.0 ? 2.0 : p * std::pow(r2, 0.5 * (p - 2.0));
      s += tm.measure * (w * detail::dot(g, tm.coef[tm.slot]) + tm.f / tm.count);
    }
    return s;
  }

  /// Node values at which some barycenter is exactly zero, sorted.
  int breakpoints(std::array<double, 6>& out) const {
    for (int k = 0; k < count; ++k) out[k] = terms[k].zero_crossing();
    std::sort(out.begin(), out.begin() + count);
    return count;
  }

  /// Minimizers of the individual Dirichlet terms; their hull brackets the
  /// minimizer of the Dirichlet part.
  std::pair<double, double> dirichlet_hull() const {
    double lo = kInf, hi = -kInf;
    for (int k = 0; k < count; ++k) {
      const Term& tm = terms[k];
      const Vec2& c = tm.coef[tm.slot];
      const double cc = detail::dot(c, c);
      if (cc == 0.0) continue;
      const double t = -detail::dot(tm.gradient(0.0), c) / cc;
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    return {lo, hi};
  }
};

// ---------------------------------------------------------------------------
// EnergyModel
// ---------------------------------------------------------------------------

/// Discrete J_gamma on a fixed grid: element-exact |grad u|^p, barycenter
/// quadrature for F_gamma(u) and f u.
class EnergyModel {
 public:
  EnergyModel(ProblemSpec spec, Grid grid)
      : spec_(std::move(spec)), grid_(std::move(grid)), f_(element_source(spec_.source, grid_)) {
    if (spec_.domain.dim() != grid_.dim() || !(spec_.domain == grid_.domain()))
      throw Error(ErrorCode::kShapeMismatch, "grid domain differs from the problem domain");
  }

  const ProblemSpec& spec() const noexcept { return spec_; }
  const Grid& grid() const noexcept { return grid_; }
  std::span<const double> element_f() const noexcept { return f_; }

  /// With eps > 0 the potential is the smoothed one.
  EnergyBreakdown breakdown(std::span<const double> u, double gamma, double eps = 0.0) const {
    const std::size_t ne = grid_.num_elements();
    std::vector<double> d(ne), pot(ne), src(ne);
    for (std::size_t e = 0; e < ne; ++e) {
      const Element el = grid_.element(e);
      Vec2 g{0.0, 0.0};
      double m = 0.0;
      for (int k = 0; k < el.count; ++k) {
        const double v = u[el.vertex[k]];
        g[0] += v * el.coef[k][0];
        g[1] += v * el.coef[k][1];
        m += v;
      }
      m /= el.count;
      d[e] = detail::pow_half(detail::dot(g, g), spec_.p);
      pot[e] = eps > 0.0 ? smoothed_potential(m, gamma, spec_.lambda_plus, spec_.lambda_minus, eps)
                         : potential_value(m, gamma, spec_.lambda_plus, spec_.lambda_minus);
      src[e] = f_[e] * m;
    }
    const double mu = grid_.element_measure();
    EnergyBreakdown out;
    out.dirichlet = pairwise_sum(d) * mu;
    out.potential = pairwise_sum(pot) * mu;
    out.source = pairwise_sum(src) * mu;
    out.total = out.dirichlet + out.potential + out.source;
    return out;
  }

  EnergyBreakdown breakdown(std::span<const double> u) const { return breakdown(u, spec_.gamma); }
  double total(std::span<const double> u) const { return breakdown(u).total; }
  double total(std::span<const double> u, double gamma, double eps = 0.0) const {
    return breakdown(u, gamma, eps).total;
  }

  /// Gradient of the eps-smoothed energy; zero on boundary nodes. With
  /// `with_potential` false only the Dirichlet and source terms are included.
  void gradient(std::span<const double> u, double eps, std::span<double> out,
                bool with_potential = true, double eps_dirichlet = 1e-10) const {
    if (with_potential && spec_.gamma == 0.0)
      throw Error(ErrorCode::kUnsupportedGamma,
                  "no gradient for the discontinuous potential; use continuation");
    std::fill(out.begin(), out.end(), 0.0);
    const double p = spec_.p;
    for (std::size_t e = 0; e < grid_.num_elements(); ++e) {
      const Element el = grid_.element(e);
      Vec2 g{0.0, 0.0};
      double m = 0.0;
      for (int k = 0; k < el.count; ++k) {
        const double v = u[el.vertex[k]];
        g[0] += v * el.coef[k][0];
        g[1] += v * el.coef[k][1];
        m += v;
      }
      m /= el.count;
      const double r2 = detail::dot(g, g);
      const double w = p == 2.0 ? 2.0
                                : p * std::pow(r2 + eps_dirichlet * eps_dirichlet, 0.5 * (p - 2.0));
      double scalar = f_[e];
      if (with_potential)
        scalar += potential_slope(m, spec_.gamma, spec_.lambda_plus, spec_.lambda_minus, eps);
      scalar /= el.count;
      for (int k = 0; k < el.count; ++k)
        out[el.vertex[k]] += el.measure * (w * detail::dot(g, el.coef[k]) + scalar);
    }
    for (std::size_t k = 0; k < out.size(); ++k)
      if (grid_.is_boundary(k)) out[k] = 0.0;
  }

  LocalEnergy local(std::span<const double> u, std::size_t node, double gamma, double eps = 0.0) const {
    LocalEnergy le;
    le.eps = eps;
    le.p = spec_.p;
    le.gamma = gamma;
    le.lambda_plus = spec_.lambda_plus;
    le.lambda_minus = spec_.lambda_minus;
    std::array<std::size_t, 6> els{};
    le.count = grid_.elements_of_node(node, els);
    for (int t = 0; t < le.count; ++t) {
      const Element el = grid_.element(els[t]);
      LocalEnergy::Term& term = le.terms[t];
      term.measure = el.measure;
      term.f = f_[els[t]];
      term.count = el.count;
      for (int k = 0; k < el.count; ++k) {
        term.coef[k] = el.coef[k];
        if (el.vertex[k] == node) {
          term.slot = k;
          term.vals[k] = 0.0;
        } else {
          term.vals[k] = u[el.vertex[k]];
        }
      }
    }
    return le;
  }

 private:
  ProblemSpec spec_;
  Grid grid_;
  std::vector<double> f_;
};

inline EnergyBreakdown total_energy(const DiscreteFunction& u, const ProblemSpec& spec) {
  return EnergyModel(spec, u.grid()).breakdown(u.values());
}

inline DiscreteFunction energy_gradient(const DiscreteFunction& u, const ProblemSpec& spec,
                                        double eps) {
  DiscreteFunction g(u.grid());
  EnergyModel(spec, u.grid()).gradient(u.values(), eps, g.values());
  return g;
}

// ---------------------------------------------------------------------------
// PDE residual
// ---------------------------------------------------------------------------

struct PdeResidual {
  std::vector<double> value;   // 0 where excluded
  std::vector<bool> included;  // interior nodes with |u| > band
  double band = 0.0;
  double max_abs = 0.0;
  double mean_abs = 0.0;
  std::size_t count = 0;
};

/// Node value of f used by the strong-form residual.
inline double node_source(const SourceSpec& f, const Grid& grid, std::size_t k) {
  if (f.family == SourceSpec::Family::kGridded) {
    if (f.nodal.size() != grid.num_nodes())
      throw Error(ErrorCode::kShapeMismatch, "gridded source does not match the grid");
    return f.nodal[k];
  }
  return source_value(f, grid.coords(k), grid.h());
}

/// Discrete p-Laplacian minus absorption minus f/p at interior nodes away
/// from the zero set. The p-Laplacian is the FE one: -(dD/du_k) / (p M_k).
inline PdeResidual pde_residual(const DiscreteFunction& u, const ProblemSpec& spec, double band) {
  const Grid& grid = u.grid();
  const double p = spec.p;
  std::vector<double> dd(grid.num_nodes(), 0.0);
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    const Vec2 g = u.gradient(el);
    const double r2 = detail::dot(g, g);
    const double w = p == 2.0 ? 2.0 : p * std::pow(r2, 0.5 * (p - 2.0));
    for (int k = 0; k < el.count; ++k) dd[el.vertex[k]] += el.measure * w * detail::dot(g, el.coef[k]);
  }
  const std::vector<double> mass = detail::lumped_mass(grid);
  PdeResidual out;
  out.band = band;
  out.value.assign(grid.num_nodes(), 0.0);
  out.included.assign(grid.num_nodes(), false);
  double sum = 0.0;
  for (std::size_t k = 0; k < grid.num_nodes(); ++k) {
    if (grid.is_boundary(k) || !(std::abs(u[k]) > band)) continue;
    const double v = u[k];
    const double plap = -dd[k] / (p * mass[k]);
    double absorption = 0.0;
    if (spec.gamma > 0.0) {
      const double mag = spec.gamma == 1.0 ? 1.0 : std::pow(std::abs(v), spec.gamma - 1.0);
      absorption = v > 0.0 ? spec.lambda_plus * mag : -spec.lambda_minus * mag;
      absorption *= spec.gamma / p;
    }
    const double r = plap - absorption - node_source(spec.source, grid, k) / p;
    out.value[k] = r;
    out.included[k] = true;
    out.max_abs = std::max(out.max_abs, std::abs(r));
    sum += std::abs(r);
    ++out.count;
  }
  if (out.count > 0) out.mean_abs = sum / static_cast<double>(out.count);
  return out;
}

inline PdeResidual pde_residual(const DiscreteFunction& u, const ProblemSpec& spec) {
  return pde_residual(u, spec, u.grid().h());
}

// ---------------------------------------------------------------------------
// Convex pinned solves: minimize int |grad u|^p + f u with some nodes fixed
// ---------------------------------------------------------------------------

struct PinnedSolveOptions {
  double rtol = 1e-11;
  double atol = 1e-13;
  int max_iter = 200;
};

struct PinnedSolveResult {
  std::vector<double> u;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;  // max |dE/du_k| / M_k over free nodes
};

/// Damped Newton iteration with Armijo backtracking. `element_f` may be
/// empty for the pure Dirichlet problem.
inline PinnedSolveResult solve_pinned(const Grid& grid, double p, std::span<const double> element_f,
                                      std::vector<double> u, const std::vector<bool>& free,
                                      const PinnedSolveOptions& opt = {}) {
  const std::size_t nn = grid.num_nodes();
  std::vector<int> slot(nn, -1);
  int n_free = 0;
  for (std::size_t k = 0; k < nn; ++k)
    if (free[k]) slot[k] = n_free++;
  PinnedSolveResult res;
  if (n_free == 0) {
    res.u = std::move(u);
    res.converged = true;
    return res;
  }
  const std::vector<double> mass = detail::lumped_mass(grid);
  const double mu = grid.element_measure();

  auto energy = [&](std::span<const double> v) {
    std::vector<double> t(grid.num_elements());
    for (std::size_t e = 0; e < t.size(); ++e) {
      const Element el = grid.element(e);
      Vec2 g{0.0, 0.0};
      double m = 0.0;
      for (int k = 0; k < el.count; ++k) {
        g[0] += v[el.vertex[k]] * el.coef[k][0];
        g[1] += v[el.vertex[k]] * el.coef[k][1];
        m += v[el.vertex[k]];
      }
      t[e] = detail::pow_half(detail::dot(g, g), p);
      if (!element_f.empty()) t[e] += element_f[e] * m / el.count;
    }
    return pairwise_sum(t) * mu;
  };

  Eigen::VectorXd r(n_free);
  double flux_scale = 0.0;
  auto residual = [&](std::span<const double> v) {
    r.setZero();
    flux_scale = 0.0;
    for (std::size_t e = 0; e < grid.num_elements(); ++e) {
      const Element el = grid.element(e);
      Vec2 g{0.0, 0.0};
      for (int k = 0; k < el.count; ++k) {
        g[0] += v[el.vertex[k]] * el.coef[k][0];
        g[1] += v[el.vertex[k]] * el.coef[k][1];
      }
      const double r2 = detail::dot(g, g);
      const double w = p == 2.0 ? 2.0 : p * std::pow(r2, 0.5 * (p - 2.0));
      flux_scale = std::max(flux_scale, w * std::sqrt(r2));
      const double fe = element_f.empty() ? 0.0 : element_f[e] / el.count;
      for (int k = 0; k < el.count; ++k) {
        const int s = slot[el.vertex[k]];
        if (s >= 0) r[s] += el.measure * (w * detail::dot(g, el.coef[k]) + fe);
      }
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < nn; ++k)
      if (slot[k] >= 0) worst = std::max(worst, std::abs(r[slot[k]]) / mass[k]);
    return worst;
  };

  double e0 = energy(u);
  std::vector<double> trial(u);
  double last_residual = INFINITY;
  int stalled = 0;
  for (int it = 0; it < opt.max_iter; ++it) {
    res.residual = residual(u);
    if (res.residual <= opt.atol + opt.rtol * flux_scale) {
      res.converged = true;
      break;
    }
    // At round-off, steps of equal energy keep passing the Armijo test.
    stalled = res.residual < 0.9 * last_residual ? 0 : stalled + 1;
    last_residual = std::min(last_residual, res.residual);
    if (stalled >= 5 && res.residual <= 1e3 * (opt.atol + opt.rtol * flux_scale)) {
      res.converged = true;
      break;
    }
    double gmax = 0.0;
    for (std::size_t e = 0; e < grid.num_elements(); ++e) {
      const Vec2 g = [&] {
        const Element el = grid.element(e);
        Vec2 s{0.0, 0.0};
        for (int k = 0; k < el.count; ++k) {
          s[0] += u[el.vertex[k]] * el.coef[k][0];
          s[1] += u[el.vertex[k]] * el.coef[k][1];
        }
        return s;
      }();
      gmax = std::max(gmax, std::hypot(g[0], g[1]));
    }
    // The pinned problem is convex, so regularized Newton steps are used;
    // delta is raised only when the factorization or direction fails.
    bool have_direction = false;
    bool accepted = false;
    std::vector<double> best;
    double best_e = e0;
    for (double rel : {1e-8, 1e-5, 1e-3, 1e-1}) {
      if (accepted) break;
      const double delta = p == 2.0 ? 0.0 : rel * gmax + 1e-12;
      const detail::SparseMatrix metric = detail::dirichlet_metric(grid, u, p, delta, slot, n_free, true);
      Eigen::SimplicialLDLT<detail::SparseMatrix> ldlt(metric);
      if (ldlt.info() == Eigen::Success) {
        const Eigen::VectorXd d = ldlt.solve(-r);
        const double slope = r.dot(d);
        if (d.allFinite() && slope < 0.0) {
          have_direction = true;
          double step = 1.0;
          for (int bt = 0; bt < 60; ++bt) {
            trial = u;
            for (std::size_t k = 0; k < nn; ++k)
              if (slot[k] >= 0) trial[k] += step * d[slot[k]];
            const double e1 = energy(trial);
            if (e1 <= e0 + 1e-4 * step * slope) {
              if (e1 < best_e || !accepted) {
                best = trial;
                best_e = e1;
              }
              accepted = true;
              break;
            }
            step *= 0.5;
          }
        }
      }
      if (p == 2.0) break;
    }
    if (!have_direction) throw Error(ErrorCode::kNumericalFailure, "Hessian factorization failed");
    if (accepted) {
      u.swap(best);
      e0 = best_e;
    }
    res.iterations = it + 1;
    if (!accepted) {
      // Round-off floor: accept the point if the residual is already tiny.
      res.residual = residual(u);
      res.converged = res.residual <= 1e3 * (opt.atol + opt.rtol * flux_scale);
      break;
    }
  }
  if (!res.converged) {
    res.residual = residual(u);
    res.converged = res.residual <= opt.atol + opt.rtol * flux_scale;
  }
  res.u = std::move(u);
  return res;
}

/// Thrown when an iterative solve stops before meeting its tolerance.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, DiscreteFunction last)
      : Error(ErrorCode::kNonConvergence, what), last_(std::move(last)) {}
  const DiscreteFunction& last_iterate() const noexcept { return last_; }

 private:
  DiscreteFunction last_;
};

/// Mask of nodes in `region` that are not on the domain boundary.
inline std::vector<bool> region_mask(const Grid& grid, std::span<const std::size_t> region) {
  std::vector<bool> free(grid.num_nodes(), false);
  for (std::size_t k : region) {
    if (k >= grid.num_nodes()) throw Error(ErrorCode::kShapeMismatch, "region node out of range");
    if (!grid.is_boundary(k)) free[k] = true;
  }
  return free;
}

/// Minimizer of int |grad h|^p with h = u outside the interior of `region`.
inline DiscreteFunction p_harmonic_replacement(const DiscreteFunction& u,
                                               std::span<const std::size_t> region, double p,
                                               const PinnedSolveOptions& opt = {}) {
  const Grid& grid = u.grid();
  const std::vector<bool> free = region_mask(grid, region);
  if (std::none_of(free.begin(), free.end(), [](bool b) { return b; }))
    throw Error(ErrorCode::kInvalidSpec, "region has no interior nodes");
  PinnedSolveResult r =
      solve_pinned(grid, p, {}, std::vector<double>(u.values().begin(), u.values().end()), free, opt);
  DiscreteFunction h(grid, std::move(r.u));
  if (!r.converged)
    throw NonConvergenceError("p-harmonic replacement stopped at residual " +
                                  format_double(r.residual),
                              h);
  return h;
}

/// Dirichlet energy restricted to elements touching the free nodes.
inline double region_dirichlet(const DiscreteFunction& u, const std::vector<bool>& free, double p) {
  const Grid& grid = u.grid();
  std::vector<double> vals;
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    bool touches = false;
    for (int k = 0; k < el.count; ++k) touches = touches || free[el.vertex[k]];
    if (!touches) continue;
    const Vec2 g = u.gradient(el);
    vals.push_back(detail::pow_half(detail::dot(g, g), p));
  }
  return pairwise_sum(vals) * grid.element_measure();
}

struct DirichletGap {
  double lhs = 0.0;  // int |grad psi|^p - |grad h|^p
  double rhs = 0.0;  // int |grad (psi - h)|^p
};

inline DirichletGap dirichlet_gap(const DiscreteFunction& psi, std::span<const std::size_t> region,
                                  double p) {
  const Grid& grid = psi.grid();
  const DiscreteFunction h = p_harmonic_replacement(psi, region, p);
  const std::vector<bool> free = region_mask(grid, region);
  std::vector<double> diff, gap;
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    bool touches = false;
    for (int k = 0; k < el.count; ++k) touches = touches || free[el.vertex[k]];
    if (!touches) continue;
    const Vec2 a = psi.gradient(el);
    const Vec2 b = h.gradient(el);
    const Vec2 d{a[0] - b[0], a[1] - b[1]};
    diff.push_back(detail::pow_half(detail::dot(a, a), p) - detail::pow_half(detail::dot(b, b), p));
    gap.push_back(detail::pow_half(detail::dot(d, d), p));
  }
  const double mu = grid.element_measure();
  return {pairwise_sum(diff) * mu, pairwise_sum(gap) * mu};
}

}  // namespace fblab
