#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fblab/energy.hpp"

namespace fblab {

// ---------------------------------------------------------------------------
// Parameters and reports
// ---------------------------------------------------------------------------

struct SolverParams {
  /// kMetricSweep: projected gradient step in the lagged-diffusivity metric
  /// followed by an exact nodal sweep.
  /// kScaledGradient: diagonally scaled gradient descent (small problems only).
  enum class Method { kMetricSweep, kScaledGradient };

  Method method = Method::kMetricSweep;
  double eps0 = 0.0;  // 0 selects 1e-2 times the oscillation of phi
  double eps_shrink = 0.1;
  double eps_min = 1e-8;
  double initial_step = 1.0;
  double step_shrink = 0.5;
  double armijo = 1e-4;
  double tol_energy = 1e-13;  // relative decrease per iteration
  double tol_grad = 1e-5;     // relative nodal gradient; round-off floor is ~1e-6 at N = 2048
  int max_iter = 500;         // per epsilon stage
  int coarsest = 32;          // coarsest nested grid; 0 disables nesting
  int polish_trials = 64;     // candidates per zero-set move
  int polish_rounds = 500;    // accepted zero-set moves per solve
  double polish_tol = 1e-10;  // relative gain a zero-set move must achieve
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidSpec, m); };
    if (!(eps0 >= 0.0 && std::isfinite(eps0))) fail("eps0 must be finite and >= 0");
    if (!(eps_min >= 0.0 && std::isfinite(eps_min))) fail("eps_min must be finite and >= 0");
    if (!(eps_shrink > 0.0 && eps_shrink < 1.0)) fail("eps_shrink must lie in (0, 1)");
    if (!(initial_step > 0.0 && std::isfinite(initial_step))) fail("initial_step must be > 0");
    if (!(step_shrink > 0.0 && step_shrink < 1.0)) fail("step_shrink must lie in (0, 1)");
    if (!(armijo > 0.0 && armijo < 1.0)) fail("armijo must lie in (0, 1)");
    if (!(tol_energy > 0.0)) fail("tol_energy must be > 0");
    if (!(tol_grad > 0.0)) fail("tol_grad must be > 0");
    if (max_iter < 1) fail("max_iter must be >= 1");
    if (coarsest < 0) fail("coarsest must be >= 0");
    if (polish_trials < 0 || polish_rounds < 0) fail("polish limits must be >= 0");
    if (!(polish_tol >= 0.0 && std::isfinite(polish_tol))) fail("polish_tol must be finite and >= 0");
  }
};

inline const char* to_string(SolverParams::Method m) {
  return m == SolverParams::Method::kMetricSweep ? "metric_sweep" : "scaled_gradient";
}

struct TraceEntry {
  int iteration = 0;
  int stage = 0;
  double epsilon = 0.0;
  double energy = 0.0;
  double grad_norm = 0.0;
};

struct SolveReport {
  explicit SolveReport(DiscreteFunction sol) : u(std::move(sol)) {}

  DiscreteFunction u;
  double gamma = 0.0;
  EnergyBreakdown energy;
  double initial_energy = 0.0;
  std::vector<TraceEntry> trace;           // true energy, nonincreasing
  std::vector<TraceEntry> homotopy_trace;  // smoothed energies of the earlier stages
  std::vector<double> stage_epsilons;
  std::vector<int> stage_iterations;
  double residual_max = 0.0;
  double residual_mean = 0.0;
  std::size_t residual_count = 0;
  double residual_band = 0.0;
  double sup_norm = 0.0;
  double w1p_norm = 0.0;
  double grad_norm = 0.0;  // relative nodal gradient away from zero cells
  int levels = 1;
  int zero_set_moves = 0;
  bool converged = false;
};

/// Geometric epsilon schedule ending at eps_min.
inline std::vector<double> epsilon_schedule(const SolverParams& prm, double oscillation) {
  double e = prm.eps0 > 0.0 ? prm.eps0 : 1e-2 * oscillation;
  std::vector<double> out;
  while (e > prm.eps_min && out.size() < 64) {
    out.push_back(e);
    e *= prm.eps_shrink;
  }
  out.push_back(prm.eps_min);
  return out;
}

namespace detail {

inline double vertex_sum(std::span<const double> u, const Element& el) {
  double s = 0.0;
  for (int k = 0; k < el.count; ++k) s += u[el.vertex[k]];
  return s;
}

/// Set vertex k of `el` so that the element's vertex sum is exactly zero.
inline void snap_cell(std::vector<double>& u, const Element& el, int k) {
  double rest = 0.0;
  for (int j = 0; j < el.count; ++j)
    if (j != k) rest += u[el.vertex[j]];
  double& t = u[el.vertex[k]];
  t = -rest;
  for (int tries = 0; tries < 8; ++tries) {
    const double s = vertex_sum(u, el);
    if (s == 0.0) break;
    t = std::nextafter(t, s > 0.0 ? -kInf : kInf);
  }
}

/// Restore exact zeros on the marked cells, moving one free vertex per cell.
inline void snap_cells(std::vector<double>& u, const Grid& grid, const std::vector<char>& active,
                       const std::vector<int>& slot) {
  std::vector<char> used(grid.num_nodes(), 0);
  for (std::size_t e = 0; e < active.size(); ++e) {
    if (!active[e]) continue;
    const Element el = grid.element(e);
    int pick = -1;
    for (int k = 0; k < el.count; ++k) {
      const std::size_t v = el.vertex[k];
      if (slot[v] < 0 || used[v]) continue;
      if (pick < 0 || v > el.vertex[pick]) pick = k;
    }
    if (pick < 0) continue;
    used[el.vertex[pick]] = 1;
    snap_cell(u, el, pick);
  }
}

/// Lower bound of the local energy on the open segment (a, b), which
/// contains no breakpoint.
inline double segment_lower_bound(const LocalEnergy& le, double a, double b) {
  const double sa = le.smooth_part(a), sb = le.smooth_part(b);
  const double da = le.smooth_slope(a), db = le.smooth_slope(b);
  double lb;
  if (da >= 0.0) {
    lb = sa;
  } else if (db <= 0.0) {
    lb = sb;
  } else {
    const double t = (sb - sa + da * a - db * b) / (da - db);
    lb = sa + da * (t - a);
  }
  for (int k = 0; k < le.count; ++k) {
    const LocalEnergy::Term& tm = le.terms[k];
    lb += tm.measure * std::min(le.potential_term(tm, a), le.potential_term(tm, b));
  }
  return lb;
}

/// Global minimizer of a single-node energy: candidates are the breakpoints,
/// the window ends and a Brent search inside every segment between them.
inline double local_argmin(const LocalEnergy& le, double cur) {
  double best_t = cur;
  double best = le(cur);
  std::array<double, 6> bp{};
  const int nb = le.breakpoints(bp);
  for (int i = 0; i < nb; ++i) {
    const double v = le(bp[i]);
    if (v < best) {
      best = v;
      best_t = bp[i];
    }
  }
  auto [lo, hi] = le.dirichlet_hull();
  if (!(lo <= hi)) lo = hi = cur;
  lo = std::min(lo, cur);
  hi = std::max(hi, cur);
  // The smooth part must increase outward beyond the window.
  double width = std::max(hi - lo, 1e-3 * (1.0 + std::abs(cur)));
  for (int i = 0; i < 200 && le.smooth_slope(hi) < 0.0; ++i) {
    hi += width;
    width *= 2.0;
  }
  width = std::max(hi - lo, 1e-3 * (1.0 + std::abs(cur)));
  for (int i = 0; i < 200 && le.smooth_slope(lo) > 0.0; ++i) {
    lo -= width;
    width *= 2.0;
  }
  if (nb > 0) {
    lo = std::min(lo, bp[0]);
    hi = std::max(hi, bp[nb - 1]);
  }
  std::array<double, 8> pts{};
  int np = 0;
  pts[np++] = lo;
  for (int i = 0; i < nb; ++i)
    if (bp[i] > lo && bp[i] < hi) pts[np++] = bp[i];
  pts[np++] = hi;
  std::sort(pts.begin(), pts.begin() + np);
  for (double t : {lo, hi}) {
    const double v = le(t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  for (int i = 0; i + 1 < np; ++i) {
    const double a = pts[i], b = pts[i + 1];
    if (!(b > a)) continue;
    if (segment_lower_bound(le, a, b) >= best) continue;
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::brent_find_minima(
        [&](double t) { return le(t); }, a, b, std::numeric_limits<double>::digits / 2, iters);
    if (r.second < best) {
      best = r.second;
      best_t = r.first;
    }
  }
  return best_t;
}

/// One sweep of exact nodal minimization; returns the number of moved nodes.
inline int exact_sweep(const EnergyModel& model, double gamma, double eps, std::vector<double>& u,
                       bool forward) {
  const Grid& grid = model.grid();
  const std::size_t nn = grid.num_nodes();
  int moved = 0;
  for (std::size_t i = 0; i < nn; ++i) {
    const std::size_t k = forward ? i : nn - 1 - i;
    if (grid.is_boundary(k)) continue;
    const LocalEnergy le = model.local(u, k, gamma, eps);
    const double cur = u[k];
    const double f0 = le(cur);
    const double t = local_argmin(le, cur);
    const double f1 = le(t);
    if (f1 < f0 - 1e-14 * (std::abs(f0) + std::abs(f1))) {
      u[k] = t;
      ++moved;
    }
  }
  return moved;
}

/// Lagged coefficient of the smoothed potential: slope(m) / m. The quadratic
/// it defines majorizes the potential, since ((m^2 + eps^2)^{gamma/2}) is
/// concave in m^2.
inline double potential_weight(double m, double gamma, double lp, double lm, double eps) {
  if (gamma == 0.0) return 0.0;
  const double lam = m > 0.0 ? lp : lm;
  const double q = m * m + eps * eps;
  if (q == 0.0) return 0.0;
  return lam * gamma * std::pow(q, 0.5 * gamma - 1.0);
}

struct MetricConfig {
  double gamma = 1.0;
  double eps = 0.0;        // smoothing in the direction
  double merit_eps = 0.0;  // smoothing in the accepted energy; 0 is the true energy
  bool smooth_only = false;  // minimize Dirichlet + source only
  bool pin_zero_nodes = true;
  bool force = false;  // take the first full step onto new constraints unconditionally
};

inline double smooth_energy(const EnergyModel& model, std::span<const double> u) {
  const EnergyBreakdown b = model.breakdown(u, 1.0);
  return b.dirichlet + b.source;
}

inline double merit(const EnergyModel& model, const MetricConfig& cfg, std::span<const double> u) {
  return cfg.smooth_only ? smooth_energy(model, u) : model.total(u, cfg.gamma, cfg.merit_eps);
}

/// Projected gradient step in the lagged-diffusivity metric with the cells
/// in `active` held at a zero barycenter. Returns true when a step was
/// accepted; `value` is the merit.
inline bool metric_step(const EnergyModel& model, const MetricConfig& cfg,
                        const std::vector<char>& active, std::vector<double>& u, double& value,
                        const SolverParams& prm) {
  const Grid& grid = model.grid();
  const ProblemSpec& spec = model.spec();
  const double p = spec.p;
  const std::size_t nn = grid.num_nodes(), ne = grid.num_elements();
  const auto fe = model.element_f();
  const bool with_potential = !cfg.smooth_only && cfg.gamma > 0.0;

  std::vector<char> all_active(nn, 1);
  for (std::size_t e = 0; e < ne; ++e) {
    if (active[e]) continue;
    const Element el = grid.element(e);
    for (int k = 0; k < el.count; ++k) all_active[el.vertex[k]] = 0;
  }
  std::vector<int> slot(nn, -1);
  int n_free = 0;
  for (std::size_t k = 0; k < nn; ++k) {
    if (grid.is_boundary(k)) continue;
    if (cfg.pin_zero_nodes && u[k] == 0.0 && all_active[k]) continue;
    slot[k] = n_free++;
  }
  if (n_free == 0) return false;

  Eigen::VectorXd g = Eigen::VectorXd::Zero(n_free);
  double gmax = 0.0;
  for (std::size_t e = 0; e < ne; ++e) {
    const Element el = grid.element(e);
    Vec2 gr{0.0, 0.0};
    double m = 0.0;
    for (int k = 0; k < el.count; ++k) {
      const double v = u[el.vertex[k]];
      gr[0] += v * el.coef[k][0];
      gr[1] += v * el.coef[k][1];
      m += v;
    }
    m /= el.count;
    const double r2 = detail::dot(gr, gr);
    gmax = std::max(gmax, std::sqrt(r2));
    const double w = p == 2.0 ? 2.0 : p * std::pow(r2 + 1e-20, 0.5 * (p - 2.0));
    double scalar = fe[e];
    if (with_potential && !active[e])
      scalar += potential_slope(m, cfg.gamma, spec.lambda_plus, spec.lambda_minus, cfg.eps);
    scalar /= el.count;
    for (int k = 0; k < el.count; ++k) {
      const int s = slot[el.vertex[k]];
      if (s >= 0) g[s] += el.measure * (w * dot(gr, el.coef[k]) + scalar);
    }
  }

  // Constraint rows: one per active cell with a free vertex.
  std::vector<Triplet> con;
  std::vector<double> con_rhs;
  for (std::size_t e = 0; e < ne; ++e) {
    if (!active[e]) continue;
    const Element el = grid.element(e);
    bool any = false;
    for (int k = 0; k < el.count; ++k) any = any || slot[el.vertex[k]] >= 0;
    if (!any) continue;
    const int row = n_free + static_cast<int>(con_rhs.size());
    for (int k = 0; k < el.count; ++k) {
      const int s = slot[el.vertex[k]];
      if (s >= 0) con.emplace_back(row, s, 1.0);
    }
    con_rhs.push_back(-vertex_sum(u, el));
  }
  const int n_con = static_cast<int>(con_rhs.size());
  const int n_all = n_free + n_con;

  auto add_potential = [&](std::vector<Triplet>& trip) {
    if (!with_potential) return;
    for (std::size_t e = 0; e < ne; ++e) {
      if (active[e]) continue;
      const Element el = grid.element(e);
      const double m = vertex_sum(u, el) / el.count;
      const double c = potential_weight(m, cfg.gamma, spec.lambda_plus, spec.lambda_minus, cfg.eps);
      if (!(c > 0.0) || !std::isfinite(c)) continue;
      const double v = c * el.measure / (el.count * el.count);
      for (int i = 0; i < el.count; ++i) {
        const int si = slot[el.vertex[i]];
        if (si < 0) continue;
        for (int j = 0; j < el.count; ++j) {
          const int sj = slot[el.vertex[j]];
          if (sj >= 0) trip.emplace_back(si, sj, v);
        }
      }
    }
  };

  Eigen::VectorXd rhs(n_all);
  rhs.head(n_free) = -g;
  for (int i = 0; i < n_con; ++i) rhs[n_free + i] = con_rhs[i];

  Eigen::VectorXd d;
  bool have = false;
  for (double rel : {1e-8, 1e-5, 1e-3, 1e-1}) {
    const double delta = p == 2.0 ? 0.0 : rel * gmax + 1e-12;
    SparseMatrix h = dirichlet_metric(grid, u, p, delta, slot, n_free);
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(h.nonZeros()) + 2 * con.size() + n_con);
    double diag_max = 0.0;
    for (int c = 0; c < h.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(h, c); it; ++it) {
        trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        if (it.row() == it.col()) diag_max = std::max(diag_max, std::abs(it.value()));
      }
    add_potential(trip);
    const double rho = 1e-12 * (diag_max > 0.0 ? diag_max : 1.0);
    for (const Triplet& t : con) {
      trip.emplace_back(t.row(), t.col(), t.value());
      trip.emplace_back(t.col(), t.row(), t.value());
    }
    for (int i = 0; i < n_con; ++i) trip.emplace_back(n_free + i, n_free + i, -rho);
    SparseMatrix k(n_all, n_all);
    k.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(k);
    if (ldlt.info() != Eigen::Success) continue;
    Eigen::VectorXd sol = ldlt.solve(rhs);
    if (!sol.allFinite()) continue;
    d = sol.head(n_free);
    have = cfg.smooth_only || n_con > 0 || g.dot(d) < 0.0;
    if (have || p == 2.0) break;
  }
  if (!have) return false;

  bool constraint_shift = false;
  for (double c : con_rhs) constraint_shift = constraint_shift || c != 0.0;
  const double slope = g.dot(d);
  if (!(slope < 0.0) && !(cfg.force && constraint_shift)) return false;

  std::vector<double> trial(u);
  double t = prm.initial_step;
  for (int bt = 0; bt < 50; ++bt) {
    for (std::size_t k = 0; k < nn; ++k)
      trial[k] = slot[k] >= 0 ? u[k] + t * d[slot[k]] : u[k];
    snap_cells(trial, grid, active, slot);
    const double v = merit(model, cfg, trial);
    if (!std::isfinite(v)) throw Error(ErrorCode::kNumericalFailure, "non-finite energy in line search");
    const bool forced = cfg.force && constraint_shift && bt == 0;
    if (forced || (v < value && v <= value + prm.armijo * t * slope)) {
      u.swap(trial);
      value = v;
      return true;
    }
    t *= prm.step_shrink;
  }
  return false;
}

/// Diagonally scaled gradient step with a remembered step length.
inline bool scaled_gradient_step(const EnergyModel& model, double gamma, double eps, double merit_eps,
                                 std::vector<double>& u, double& value, double& step,
                                 const SolverParams& prm) {
  const Grid& grid = model.grid();
  const std::size_t nn = grid.num_nodes();
  std::vector<double> g(nn);
  model.gradient(u, eps, g, gamma > 0.0);
  std::vector<double> d(nn, 0.0);
  std::array<std::size_t, 6> els{};
  double slope = 0.0;
  for (std::size_t k = 0; k < nn; ++k) {
    if (grid.is_boundary(k)) continue;
    d[k] = -g[k] / grid.elements_of_node(k, els);
    slope += g[k] * d[k];
  }
  if (!(slope < 0.0)) return false;
  std::vector<double> trial(nn);
  for (int bt = 0; bt < 60; ++bt) {
    for (std::size_t k = 0; k < nn; ++k) trial[k] = u[k] + step * d[k];
    const double v = model.total(trial, gamma, merit_eps);
    if (!std::isfinite(v)) throw Error(ErrorCode::kNumericalFailure, "non-finite energy in line search");
    if (v < value && v <= value + prm.armijo * step * slope) {
      u.swap(trial);
      value = v;
      step /= prm.step_shrink;
      return true;
    }
    step *= prm.step_shrink;
  }
  return false;
}

inline std::vector<char> zero_cells(const Grid& grid, std::span<const double> u) {
  std::vector<char> a(grid.num_elements(), 0);
  for (std::size_t e = 0; e < a.size(); ++e) a[e] = vertex_sum(u, grid.element(e)) == 0.0;
  return a;
}

/// max over interior nodes of |dJ/du_k| / (sum of |element contributions|
/// at k + its mean over nodes), skipping nodes that touch a zero cell
/// (there J is not differentiable).
/// With eps > 0 the derivative is that of the smoothed energy.
inline double relative_gradient(const EnergyModel& model, double gamma, std::span<const double> u,
                                double eps = 0.0) {
  const Grid& grid = model.grid();
  const ProblemSpec& spec = model.spec();
  const double p = spec.p;
  const auto fe = model.element_f();
  const std::size_t nn = grid.num_nodes();
  std::vector<double> res(nn, 0.0), mag(nn, 0.0);
  std::vector<char> skip(nn, 0);
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    Vec2 gr{0.0, 0.0};
    double s = 0.0;
    for (int k = 0; k < el.count; ++k) {
      const double v = u[el.vertex[k]];
      gr[0] += v * el.coef[k][0];
      gr[1] += v * el.coef[k][1];
      s += v;
    }
    const double m = s / el.count;
    const double r2 = detail::dot(gr, gr);
    const double w = p == 2.0 ? 2.0 : (r2 == 0.0 ? 0.0 : p * std::pow(r2, 0.5 * (p - 2.0)));
    const double pot = (gamma > 0.0 && m != 0.0)
                           ? potential_slope(m, gamma, spec.lambda_plus, spec.lambda_minus, eps) / el.count
                           : 0.0;
    const double src = fe[e] / el.count;
    for (int k = 0; k < el.count; ++k) {
      const std::size_t v = el.vertex[k];
      const double dir = w * dot(gr, el.coef[k]);
      res[v] += el.measure * (dir + pot + src);
      mag[v] += el.measure * (std::abs(dir) + std::abs(pot) + std::abs(src));
      if (s == 0.0 && eps == 0.0) skip[v] = 1;
    }
  }
  // The mean contribution keeps degenerate regions, where every term is
  // tiny, from dominating the measure.
  double mean = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < nn; ++k)
    if (!grid.is_boundary(k) && !skip[k]) {
      mean += mag[k];
      ++count;
    }
  if (count == 0) return 0.0;
  mean /= static_cast<double>(count);
  double worst = 0.0;
  for (std::size_t k = 0; k < nn; ++k) {
    if (grid.is_boundary(k) || skip[k]) continue;
    worst = std::max(worst, std::abs(res[k]) / (mag[k] + mean + 1e-300));
  }
  return worst;
}

struct LevelRun {
  std::vector<double> u;
  std::vector<TraceEntry> homotopy;  // smoothed-energy stages
  std::vector<TraceEntry> trace;     // final stage, true energy
  std::vector<int> stage_iterations;
  double grad_norm = 0.0;
  bool converged = false;
};

inline double energy_scale(const EnergyModel& model, double gamma, std::span<const double> u) {
  const EnergyBreakdown b = model.breakdown(u, gamma);
  return std::abs(b.dirichlet) + std::abs(b.potential) + std::abs(b.source) + 1e-300;
}

/// Descent at fixed gamma through the epsilon stages. Every stage but the
/// last minimizes the smoothed energy J_{gamma,eps}; the last descends the
/// true energy from the better of the homotopy result and the start, so
/// its trace is nonincreasing in J_gamma.
inline LevelRun run_stages(const EnergyModel& model, double gamma, std::vector<double> u,
                           const SolverParams& prm, const std::vector<double>& eps_list) {
  LevelRun out;
  const std::vector<double> start = u;
  int iteration = 0;
  double step = prm.initial_step;
  std::vector<double> backup;
  for (std::size_t s = 0; s < eps_list.size(); ++s) {
    const bool last = s + 1 == eps_list.size();
    const double eps = eps_list[s];
    const double merit_eps = last || gamma == 0.0 ? 0.0 : eps;
    if (last && s > 0 && model.total(start, gamma) < model.total(u, gamma)) u = start;
    double value = model.total(u, gamma, merit_eps);
    if (!std::isfinite(value)) throw Error(ErrorCode::kNumericalFailure, "non-finite energy");
    std::vector<TraceEntry>& trace = last ? out.trace : out.homotopy;
    trace.push_back({iteration, static_cast<int>(s), eps, value,
                     relative_gradient(model, gamma, u, merit_eps)});
    int it = 0;
    for (; it < prm.max_iter; ++it) {
      const double before = value;
      if (prm.method == SolverParams::Method::kMetricSweep) {
        MetricConfig cfg;
        cfg.gamma = gamma;
        cfg.eps = eps;
        cfg.merit_eps = merit_eps;
        // Zero cells are cusps only of the exact potential.
        cfg.pin_zero_nodes = merit_eps == 0.0;
        const std::vector<char> active =
            merit_eps == 0.0 ? zero_cells(model.grid(), u) : std::vector<char>(model.grid().num_elements(), 0);
        metric_step(model, cfg, active, u, value, prm);
        backup = u;
        if (exact_sweep(model, gamma, merit_eps, u, iteration % 2 == 0) > 0) {
          const double v = model.total(u, gamma, merit_eps);
          if (!std::isfinite(v)) throw Error(ErrorCode::kNumericalFailure, "non-finite energy");
          if (v <= value)
            value = v;
          else
            u.swap(backup);
        }
      } else {
        scaled_gradient_step(model, gamma, eps, merit_eps, u, value, step, prm);
      }
      ++iteration;
      const double gn = relative_gradient(model, gamma, u, merit_eps);
      trace.push_back({iteration, static_cast<int>(s), eps, value, gn});
      const double decrease = (before - value) / energy_scale(model, gamma, u);
      const bool small_step = decrease <= prm.tol_energy;
      if (last ? (small_step && gn <= prm.tol_grad) : (small_step || gn <= prm.tol_grad)) {
        ++it;
        break;
      }
      if (value == before) {
        ++it;
        break;
      }
    }
    out.stage_iterations.push_back(it);
  }
  out.grad_norm = out.trace.back().grad_norm;
  out.converged = out.grad_norm <= prm.tol_grad;
  out.u = std::move(u);
  return out;
}

/// Cells sharing a vertex with cell e.
inline std::vector<std::size_t> cell_neighbors(const Grid& grid, std::size_t e) {
  std::vector<std::size_t> out;
  const Element el = grid.element(e);
  std::array<std::size_t, 6> els{};
  for (int k = 0; k < el.count; ++k) {
    const int n = grid.elements_of_node(el.vertex[k], els);
    for (int t = 0; t < n; ++t)
      if (els[t] != e) out.push_back(els[t]);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Step onto the constraints in `active`, then descend the true energy.
inline std::vector<double> resolve_with(const EnergyModel& model, double gamma, std::vector<double> u,
                                        const std::vector<char>& active, const SolverParams& prm) {
  MetricConfig cfg;
  cfg.gamma = gamma;
  cfg.eps = prm.eps_min;
  cfg.force = true;
  cfg.pin_zero_nodes = false;
  double value = model.total(u, gamma);
  metric_step(model, cfg, active, u, value, prm);
  // Screening only: the accepted candidate is descended further by the caller.
  SolverParams short_run = prm;
  short_run.max_iter = std::min(prm.max_iter, 15);
  return run_stages(model, gamma, std::move(u), short_run, {prm.eps_min}).u;
}

/// Monotone local search over the zero cells. A cell with an exactly zero
/// barycenter is a cusp of the potential for gamma < 1 and a jump for
/// gamma = 0, so descent cannot move it. Candidates move, add or release one
/// such constraint on the frontier of the zero set. After a short re-solve
/// the best candidate is kept if it beats the unchanged zero set by more
/// than polish_tol relative.
inline bool zero_set_move(const EnergyModel& model, double gamma, std::vector<double>& u, double& value,
                          const SolverParams& prm) {
  const Grid& grid = model.grid();
  const std::vector<char> active = zero_cells(grid, u);
  std::vector<std::vector<char>> trials;
  bool any = false;
  for (std::size_t e = 0; e < active.size(); ++e) {
    if (!active[e]) continue;
    any = true;
    const std::vector<std::size_t> nb = cell_neighbors(grid, e);
    bool frontier = false;
    for (std::size_t n : nb) {
      if (active[n]) continue;
      frontier = true;
      std::vector<char> mv = active;
      mv[e] = 0;
      mv[n] = 1;
      trials.push_back(std::move(mv));
      std::vector<char> add = active;
      add[n] = 1;
      trials.push_back(std::move(add));
    }
    if (frontier) {
      std::vector<char> rel = active;
      rel[e] = 0;
      trials.push_back(std::move(rel));
    }
  }
  if (!any) {
    // No zero cell yet: try pinning each cell whose vertices change sign.
    for (std::size_t e = 0; e < grid.num_elements(); ++e) {
      const Element el = grid.element(e);
      double lo = kInf, hi = -kInf;
      for (int k = 0; k < el.count; ++k) {
        lo = std::min(lo, u[el.vertex[k]]);
        hi = std::max(hi, u[el.vertex[k]]);
      }
      if (lo < 0.0 && hi > 0.0) {
        std::vector<char> add = active;
        add[e] = 1;
        trials.push_back(std::move(add));
      }
    }
  }
  if (static_cast<int>(trials.size()) > prm.polish_trials) trials.resize(static_cast<std::size_t>(prm.polish_trials));
  if (trials.empty()) return false;
  // The same short re-solve without a change to the zero set; a candidate
  // must beat it, not just the current energy.
  const double reference = std::min(value, model.total(resolve_with(model, gamma, u, active, prm), gamma));
  double best = reference - prm.polish_tol * energy_scale(model, gamma, u);
  std::vector<double> keep;
  for (const auto& a : trials) {
    std::vector<double> cand = resolve_with(model, gamma, u, a, prm);
    const double v = model.total(cand, gamma);
    if (std::isfinite(v) && v < best) {
      keep.swap(cand);
      best = v;
    }
  }
  if (keep.empty()) return false;
  u.swap(keep);
  value = best;
  return true;
}

/// On intervals, repeat an accepted change of the zero set 1, 2, 4, ...
/// cells further along the line while that keeps lowering the energy, so a
/// free boundary or zero plateau travels in O(log N) trials.
inline int extrapolate_move(const EnergyModel& model, double gamma, std::vector<double>& u, double& value,
                            const SolverParams& prm, const std::vector<char>& before) {
  const Grid& grid = model.grid();
  if (grid.dim() != 1) return 0;
  const std::vector<char> after = zero_cells(grid, u);
  std::vector<long> added, removed;
  for (std::size_t e = 0; e < after.size(); ++e) {
    if (after[e] && !before[e]) added.push_back(static_cast<long>(e));
    if (!after[e] && before[e]) removed.push_back(static_cast<long>(e));
  }
  if (added.empty() && removed.empty()) return 0;
  const long cells = static_cast<long>(after.size());
  auto build = [&](long d, long len) {
    std::vector<char> a = after;
    for (long k = 1; k <= len; ++k) {
      for (long c : added)
        if (c + k * d >= 0 && c + k * d < cells) a[c + k * d] = 1;
      for (long c : removed)
        if (c + k * d >= 0 && c + k * d < cells) a[c + k * d] = 0;
    }
    return a;
  };
  const double reference = std::min(value, model.total(resolve_with(model, gamma, u, after, prm), gamma));
  double best = reference - prm.polish_tol * energy_scale(model, gamma, u);
  std::vector<double> keep;
  int accepted = 0;
  for (long d : {1L, -1L}) {
    for (long len = 1; len < cells; len *= 2) {
      const std::vector<char> a = build(d, len);
      if (a == after) break;
      std::vector<double> cand = resolve_with(model, gamma, u, a, prm);
      const double v = model.total(cand, gamma);
      if (!(std::isfinite(v) && v < best)) break;
      keep.swap(cand);
      best = v;
      ++accepted;
    }
    if (accepted > 0) break;
  }
  if (accepted == 0) return 0;
  u.swap(keep);
  value = best;
  return accepted;
}

/// run_stages followed by zero-set moves until none lowers the energy.
inline LevelRun solve_level(const EnergyModel& model, double gamma, std::vector<double> u,
                            const SolverParams& prm, const std::vector<double>& eps_list, int& moves) {
  LevelRun run = run_stages(model, gamma, std::move(u), prm, eps_list);
  moves = 0;
  if (prm.method != SolverParams::Method::kMetricSweep) return run;
  const bool cusp = gamma < 1.0 || model.spec().lambda_minus > 0.0;
  double value = run.trace.back().energy;
  int iteration = run.trace.back().iteration;
  const int stage = static_cast<int>(eps_list.size()) - 1;
  while (cusp && moves < prm.polish_rounds) {
    const std::vector<char> before = zero_cells(model.grid(), run.u);
    if (!zero_set_move(model, gamma, run.u, value, prm)) break;
    ++moves;
    run.grad_norm = relative_gradient(model, gamma, run.u);
    run.trace.push_back({++iteration, stage, eps_list.back(), value, run.grad_norm});
    if (const int more = extrapolate_move(model, gamma, run.u, value, prm, before); more > 0) {
      moves += more;
      run.grad_norm = relative_gradient(model, gamma, run.u);
      run.trace.push_back({++iteration, stage, eps_list.back(), value, run.grad_norm});
    }
  }
  if (moves > 0) {
    LevelRun tail = run_stages(model, gamma, run.u, prm, {eps_list.back()});
    for (std::size_t k = 1; k < tail.trace.size(); ++k) {
      TraceEntry t = tail.trace[k];
      t.iteration += iteration;
      t.stage = stage;
      run.trace.push_back(t);
    }
    run.stage_iterations.back() += tail.stage_iterations.back();
    run.u = std::move(tail.u);
    run.grad_norm = tail.grad_norm;
  }
  run.converged = run.grad_norm <= prm.tol_grad;
  return run;
}

/// Nested-grid prolongation by P1 interpolation.
inline std::vector<double> prolong(const DiscreteFunction& coarse, const Grid& fine) {
  const Grid& cg = coarse.grid();
  std::vector<double> out(fine.num_nodes(), 0.0);
  const std::size_t nc = cg.nodes_per_axis();
  if (fine.dim() == 1) {
    for (std::size_t i = 0; i < nc; ++i) out[2 * i] = coarse[i];
    for (std::size_t i = 0; i + 1 < nc; ++i) out[2 * i + 1] = 0.5 * (coarse[i] + coarse[i + 1]);
    return out;
  }
  auto c = [&](std::size_t i, std::size_t j) { return coarse[cg.index(i, j)]; };
  for (std::size_t j = 0; j < nc; ++j)
    for (std::size_t i = 0; i < nc; ++i) {
      out[fine.index(2 * i, 2 * j)] = c(i, j);
      if (i + 1 < nc) out[fine.index(2 * i + 1, 2 * j)] = 0.5 * (c(i, j) + c(i + 1, j));
      if (j + 1 < nc) out[fine.index(2 * i, 2 * j + 1)] = 0.5 * (c(i, j) + c(i, j + 1));
      if (i + 1 < nc && j + 1 < nc)
        out[fine.index(2 * i + 1, 2 * j + 1)] = 0.5 * (c(i, j) + c(i + 1, j + 1));
    }
  return out;
}

/// Spec for the grid with half the resolution; nodal data is subsampled.
inline ProblemSpec coarsen_spec(const ProblemSpec& spec, const Grid& fine, const Grid& coarse) {
  ProblemSpec out = spec;
  auto sub = [&](const std::vector<double>& v) {
    std::vector<double> r(coarse.num_nodes());
    for (std::size_t k = 0; k < r.size(); ++k)
      r[k] = v[fine.index(2 * coarse.ix(k), 2 * coarse.iy(k))];
    return r;
  };
  if (spec.boundary.kind == BoundaryData::Kind::kNodal) out.boundary.nodal = sub(spec.boundary.nodal);
  if (spec.source.family == SourceSpec::Family::kGridded) out.source.nodal = sub(spec.source.nodal);
  return out;
}

}  // namespace detail

/// Affine interpolation of the endpoint values in 1-D, discrete p-harmonic
/// extension of the boundary trace in 2-D.
inline DiscreteFunction default_init(const ProblemSpec& spec, const Grid& grid) {
  DiscreteFunction phi = boundary_trace(spec, grid);
  const std::size_t nn = grid.num_nodes();
  if (grid.dim() == 1) {
    const double a = phi[0], b = phi[nn - 1];
    for (std::size_t k = 1; k + 1 < nn; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(nn - 1);
      phi[k] = a + (b - a) * t;
    }
    return phi;
  }
  std::vector<bool> free(nn);
  for (std::size_t k = 0; k < nn; ++k) free[k] = !grid.is_boundary(k);
  PinnedSolveResult r = solve_pinned(grid, spec.p, {}, {phi.values().begin(), phi.values().end()}, free);
  return DiscreteFunction(grid, std::move(r.u));
}

inline void fill_report_tail(SolveReport& rep, const ProblemSpec& spec) {
  const ProblemSpec s = spec.with_gamma(rep.gamma);
  rep.energy = total_energy(rep.u, s);
  const PdeResidual r = pde_residual(rep.u, s);
  rep.residual_max = r.max_abs;
  rep.residual_mean = r.mean_abs;
  rep.residual_count = r.count;
  rep.residual_band = r.band;
  rep.sup_norm = rep.u.sup_norm();
  rep.w1p_norm = w1p_norm(rep.u, spec.p);
}

inline bool boundary_matches(const DiscreteFunction& u, const DiscreteFunction& phi) {
  const Grid& g = u.grid();
  for (std::size_t k = 0; k < u.size(); ++k)
    if (g.is_boundary(k) && u[k] != phi[k]) return false;
  return true;
}

/// Minimize the discrete J_gamma (gamma > 0) over functions equal to phi on
/// the boundary. Without `init`, nested coarser grids supply the start.
inline SolveReport minimize(const ProblemSpec& spec, const Grid& grid, const SolverParams& prm = {},
                            const std::optional<DiscreteFunction>& init = std::nullopt) {
  spec.validate();
  prm.validate();
  if (spec.gamma == 0.0)
    throw Error(ErrorCode::kUnsupportedGamma, "minimize needs gamma > 0; use continuation for gamma = 0");
  const EnergyModel model(spec, grid);
  const DiscreteFunction phi = boundary_trace(spec, grid);
  std::vector<double> eps_list = epsilon_schedule(prm, boundary_oscillation(spec, grid));

  std::vector<double> start;
  int levels = 1;
  if (init) {
    require_same_grid(init->grid(), grid);
    if (!boundary_matches(*init, phi))
      throw Error(ErrorCode::kInvalidSpec, "initial guess differs from phi on the boundary");
    start.assign(init->values().begin(), init->values().end());
  } else {
    const DiscreteFunction d = default_init(spec, grid);
    start.assign(d.values().begin(), d.values().end());
    const int n = grid.cells_per_axis();
    if (prm.coarsest > 0 && n % 2 == 0 && n / 2 >= prm.coarsest) {
      const Grid coarse_grid = build_grid(grid.domain(), n / 2);
      ProblemSpec coarse_spec = detail::coarsen_spec(spec, grid, coarse_grid);
      const SolveReport coarse = minimize(coarse_spec, coarse_grid, prm);
      std::vector<double> up = detail::prolong(coarse.u, grid);
      for (std::size_t k = 0; k < up.size(); ++k)
        if (grid.is_boundary(k)) up[k] = phi[k];
      if (model.total(up) < model.total(start)) {
        start.swap(up);
        // The coarse solve already followed the smoothing path.
        eps_list = {eps_list.back()};
      }
      levels = coarse.levels + 1;
    }
  }

  const double initial = model.total(start);
  int moves = 0;
  detail::LevelRun run = detail::solve_level(model, spec.gamma, std::move(start), prm, eps_list, moves);
  SolveReport rep(DiscreteFunction(grid, std::move(run.u)));
  rep.zero_set_moves = moves;
  rep.gamma = spec.gamma;
  rep.initial_energy = initial;
  rep.trace = std::move(run.trace);
  rep.homotopy_trace = std::move(run.homotopy);
  rep.stage_epsilons = eps_list;
  rep.stage_iterations = std::move(run.stage_iterations);
  rep.grad_norm = run.grad_norm;
  rep.converged = run.converged;
  rep.levels = levels;
  fill_report_tail(rep, spec);
  return rep;
}

inline SolveReport minimize(const ProblemSpec& spec, int n, const SolverParams& prm = {}) {
  return minimize(spec, build_grid(spec.domain, n), prm);
}

// ---------------------------------------------------------------------------
// Continuation to gamma = 0
// ---------------------------------------------------------------------------

struct ContinuationSchedule {
  std::vector<double> gammas{0.5, 0.25, 0.1, 0.05, 0.02, 0.0};
  std::vector<SolverParams> params;  // empty: defaults; one entry: shared; else one per stage

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidSpec, m); };
    if (gammas.empty()) fail("continuation schedule is empty");
    if (gammas.back() != 0.0) fail("continuation schedule must end at gamma = 0");
    if (!(gammas.front() <= 1.0)) fail("continuation gammas must not exceed 1");
    for (std::size_t k = 1; k < gammas.size(); ++k)
      if (!(gammas[k] < gammas[k - 1])) fail("continuation gammas must be strictly decreasing");
    if (params.size() > 1 && params.size() != gammas.size())
      fail("give one SolverParams per stage or a single shared one");
    for (const SolverParams& p : params) p.validate();
  }

  SolverParams stage(std::size_t k) const {
    if (params.empty()) return {};
    return params.size() == 1 ? params.front() : params[k];
  }
};

struct StageSummary {
  double gamma = 0.0;
  double start_energy = 0.0;  // J_gamma of the stage start
  double energy = 0.0;        // J_gamma of the stage result
  double j0 = 0.0;            // J_0 of the stage result
  double w1p_gap = std::numeric_limits<double>::quiet_NaN();  // to the previous stage
  int iterations = 0;
  bool converged = false;
  bool trace_monotone = true;
  /// J_gamma of the stage result truncated to [-sup|phi|, sup|phi|].
  double truncated_energy = 0.0;
};

struct ContinuationReport {
  explicit ContinuationReport(SolveReport r) : final_report(std::move(r)) {}

  SolveReport final_report;
  std::vector<StageSummary> stages;
  std::optional<std::string> failure;
};


/// Final gamma = 0 stage: descent on the exact J_0 with the zero-set moves.
inline SolveReport zero_stage(const ProblemSpec& spec, const Grid& grid, const SolverParams& prm,
                              const DiscreteFunction& start) {
  const EnergyModel model(spec.with_gamma(0.0), grid);
  std::vector<double> u(start.values().begin(), start.values().end());
  const double initial = model.total(u, 0.0);
  const std::vector<double> eps_list{prm.eps_min};
  int moves = 0;
  detail::LevelRun run = detail::solve_level(model, 0.0, std::move(u), prm, eps_list, moves);
  SolveReport rep(DiscreteFunction(grid, std::move(run.u)));
  rep.gamma = 0.0;
  rep.initial_energy = initial;
  rep.trace = std::move(run.trace);
  rep.stage_epsilons = eps_list;
  rep.stage_iterations = std::move(run.stage_iterations);
  rep.grad_norm = run.grad_norm;
  rep.converged = run.converged;
  rep.zero_set_moves = moves;
  fill_report_tail(rep, spec);
  return rep;
}

/// Decreasing-gamma continuation: each stage warm-starts from the previous
/// one and the last stage minimizes J_0 itself.
inline ContinuationReport continuation(const ProblemSpec& spec, const Grid& grid,
                                       const ContinuationSchedule& schedule = {},
                                       const std::optional<DiscreteFunction>& init = std::nullopt) {
  spec.validate();
  schedule.validate();
  if (spec.gamma != 0.0) throw Error(ErrorCode::kInvalidSpec, "continuation targets gamma = 0");
  const EnergyModel j0_model(spec, grid);
  std::optional<DiscreteFunction> prev = init;
  std::optional<ContinuationReport> out;
  auto record = [&](SolveReport&& rep, const std::optional<DiscreteFunction>& before, double gamma) {
    StageSummary st;
    st.gamma = gamma;
    st.start_energy = rep.initial_energy;
    st.energy = rep.energy.total;
    st.j0 = j0_model.total(rep.u.values(), 0.0);
    if (before) {
      std::vector<double> diff(rep.u.size());
      for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = rep.u[k] - (*before)[k];
      st.w1p_gap = w1p_norm(DiscreteFunction(grid, std::move(diff)), spec.p);
    }
    st.iterations = 0;
    for (int i : rep.stage_iterations) st.iterations += i;
    st.converged = rep.converged;
    for (std::size_t k = 1; k < rep.trace.size(); ++k)
      st.trace_monotone = st.trace_monotone && rep.trace[k].energy <= rep.trace[k - 1].energy;
    const double level = boundary_sup(spec, grid);
    std::vector<double> t(rep.u.values().begin(), rep.u.values().end());
    for (double& v : t) v = std::clamp(v, -level, level);
    st.truncated_energy = EnergyModel(spec.with_gamma(gamma), grid).total(t);
    if (!out)
      out.emplace(std::move(rep));
    else
      out->final_report = std::move(rep);
    out->stages.push_back(st);
  };
  for (std::size_t k = 0; k < schedule.gammas.size(); ++k) {
    const double gamma = schedule.gammas[k];
    const SolverParams prm = schedule.stage(k);
    try {
      if (gamma > 0.0) {
        SolveReport rep = minimize(spec.with_gamma(gamma), grid, prm, prev);
        DiscreteFunction u = rep.u;
        record(std::move(rep), prev, gamma);
        prev = std::move(u);
      } else {
        if (!prev) prev = default_init(spec, grid);
        SolveReport rep = zero_stage(spec, grid, prm, *prev);
        DiscreteFunction u = rep.u;
        record(std::move(rep), prev, gamma);
        prev = std::move(u);
      }
    } catch (const Error& e) {
      if (!out) throw;
      out->failure = "stage gamma=" + format_double(gamma) + ": " + e.what();
      return *out;
    }
  }
  return *out;
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

struct TruncationAudit {
  double level = 0.0;
  double energy = 0.0;
  double truncated_energy = 0.0;
  bool pass(double tol) const { return truncated_energy >= energy - tol; }
};

/// Energies of u and of its truncation to [-level, level].
inline TruncationAudit truncation_audit(const DiscreteFunction& u, const ProblemSpec& spec, double level) {
  const double bound = boundary_sup(spec, u.grid());
  if (!(level >= bound))
    throw Error(ErrorCode::kInvalidLevel,
                "truncation level " + format_double(level) + " is below sup|phi| = " + format_double(bound));
  DiscreteFunction t = u;
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = std::clamp(t[k], -level, level);
  const EnergyModel model(spec, u.grid());
  return {level, model.total(u.values()), model.total(t.values())};
}

struct MinimalityCheck {
  bool pass = true;
  double worst_violation = -kInf;  // max of J(u) - J(perturbed)
  double tolerance = 0.0;
  int trials = 0;
  TruncationAudit truncation;
};

/// Random single-node perturbations by +-magnitude plus the truncation
/// competitor at level sup|phi|.
inline MinimalityCheck local_minimality_check(const DiscreteFunction& u, const ProblemSpec& spec, int trials,
                                              double magnitude, std::uint64_t seed = 0,
                                              std::optional<double> tol = std::nullopt) {
  const Grid& grid = u.grid();
  const EnergyModel model(spec, grid);
  const double j = model.total(u.values());
  MinimalityCheck out;
  out.tolerance = tol.value_or(1e-8 * std::abs(j) + 1e-14);
  out.trials = trials;
  std::vector<std::size_t> interior;
  for (std::size_t k = 0; k < grid.num_nodes(); ++k)
    if (!grid.is_boundary(k)) interior.push_back(k);
  std::mt19937_64 rng(seed);
  if (!interior.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, interior.size() - 1);
    std::bernoulli_distribution sign(0.5);
    for (int t = 0; t < trials; ++t) {
      const std::size_t k = interior[pick(rng)];
      const double delta = sign(rng) ? magnitude : -magnitude;
      const LocalEnergy le = model.local(u.values(), k, spec.gamma);
      const double viol = le(u[k]) - le(u[k] + delta);
      out.worst_violation = std::max(out.worst_violation, viol);
    }
  }
  out.truncation = truncation_audit(u, spec, boundary_sup(spec, grid));
  out.pass = out.worst_violation <= out.tolerance && out.truncation.pass(out.tolerance);
  return out;
}

}  // namespace fblab
