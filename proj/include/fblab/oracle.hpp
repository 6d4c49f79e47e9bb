#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fblab/diagnostics.hpp"
#include "fblab/error.hpp"
#include "fblab/mesh.hpp"
#include "fblab/model.hpp"

namespace fblab {

/// A closed-form or brute-force reference solution sampled on a grid.
struct OracleSolution {
  std::string kind;
  std::vector<std::pair<std::string, double>> parameters;
  DiscreteFunction u;
  /// Continuum energy of the closed form, when one is available.
  double energy = std::numeric_limits<double>::quiet_NaN();
  double flux_residual = std::numeric_limits<double>::quiet_NaN();
  std::string note;

  double parameter(const std::string& name) const {
    for (const auto& [k, v] : parameters)
      if (k == name) return v;
    throw Error(ErrorCode::kInvalidSpec, "oracle has no parameter " + name);
  }
};

// ---------------------------------------------------------------------------
// One-phase power profile
// ---------------------------------------------------------------------------

/// c ((x₁ − a)⁺)^{p/(p−γ)}, constant in x₂ on rectangles.
inline OracleSolution alt_phillips_profile(double p, double gamma, double lambda_plus, double a,
                                           const Grid& grid) {
  if (gamma == 0.0)
    throw Error(ErrorCode::kUnsupportedGamma, "gamma = 0 has no power profile; use two_phase_jet_1d");
  const double c = profile_constant(p, gamma, lambda_plus);
  const double beta = growth_exponent(p, gamma);
  OracleSolution s{"alt_phillips_profile",
                   {{"p", p}, {"gamma", gamma}, {"lambda_plus", lambda_plus}, {"a", a},
                    {"c", c}, {"beta", beta}},
                   DiscreteFunction::sample(grid,
                                            [=](const Point& x) {
                                              const double d = x[0] - a;
                                              return d > 0.0 ? c * std::pow(d, beta) : 0.0;
                                            }),
                   std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN(),
                   ""};
  return s;
}

// ---------------------------------------------------------------------------
// Two-phase jet
// ---------------------------------------------------------------------------

struct JetScanOptions {
  /// Scan step as a fraction of the interval length.
  double resolution = 1e-4;
  int newton_steps = 3;
};

namespace detail {

/// Continuum J₀ of the broken line through (l, A), (a, 0), (r, B), A < 0 < B.
struct JetEnergy {
  double p, lp, lm, l, r, ma, mb;  // ma = |A|^p, mb = |B|^p

  double value(double a) const {
    return ma / std::pow(a - l, p - 1.0) + mb / std::pow(r - a, p - 1.0) + lm * (a - l) +
           lp * (r - a);
  }
  double slope(double a) const {
    return (p - 1.0) * (mb / std::pow(r - a, p) - ma / std::pow(a - l, p)) + lm - lp;
  }
  double curvature(double a) const {
    return p * (p - 1.0) * (ma / std::pow(a - l, p + 1.0) + mb / std::pow(r - a, p + 1.0));
  }
};

}  // namespace detail

/// Minimizer of J₀ on an interval with boundary values A < 0 < B, zero source.
/// Candidates are broken lines with one kink; the kink is scanned and then
/// refined by Newton steps on the (convex) energy-in-a function.
inline OracleSolution two_phase_jet_1d(double A, double B, const ProblemSpec& spec, const Grid& grid,
                                       const JetScanOptions& opt = {}) {
  if (spec.domain.dim() != 1 || grid.dim() != 1 || !(grid.domain() == spec.domain))
    throw Error(ErrorCode::kInvalidSpec, "two_phase_jet_1d needs an interval and a grid on it");
  if (spec.gamma != 0.0) throw Error(ErrorCode::kInvalidSpec, "two_phase_jet_1d needs gamma = 0");
  if (!spec.source.is_zero()) throw Error(ErrorCode::kInvalidSpec, "two_phase_jet_1d needs f = 0");
  if (!(spec.lambda_plus > spec.lambda_minus && spec.lambda_minus >= 0.0))
    throw Error(ErrorCode::kInvalidSpec, "need lambda_plus > lambda_minus >= 0");
  if (!(std::isfinite(A) && std::isfinite(B)))
    throw Error(ErrorCode::kInvalidSpec, "boundary values must be finite");
  if (!(opt.resolution > 0.0 && opt.resolution < 0.5 && opt.newton_steps >= 0))
    throw Error(ErrorCode::kInvalidSpec, "bad scan options");

  const double l = spec.domain.lower(0), r = spec.domain.upper(0), len = r - l;
  const double p = spec.p, lp = spec.lambda_plus, lm = spec.lambda_minus;
  OracleSolution s{"two_phase_jet_1d", {}, DiscreteFunction(grid)};
  s.parameters = {{"p", p}, {"lambda_plus", lp}, {"lambda_minus", lm}, {"A", A}, {"B", B}};

  if (!(A < 0.0 && B > 0.0)) {
    s.note = "boundary values do not have opposite signs; affine interpolant returned";
    s.u = DiscreteFunction::sample(grid, [=](const Point& x) { return A + (B - A) * (x[0] - l) / len; });
    // Without opposite signs the interior of the affine line is one phase.
    s.energy = std::pow(std::abs(B - A), p) / std::pow(len, p - 1.0) +
               len * (std::max(A, B) > 0.0 ? lp : lm);
    s.parameters.push_back({"a", std::numeric_limits<double>::quiet_NaN()});
    return s;
  }

  const detail::JetEnergy je{p, lp, lm, l, r, std::pow(-A, p), std::pow(B, p)};
  const double step = opt.resolution * len;
  const auto count = static_cast<std::size_t>(std::floor(len / step));
  double best_a = l + step, best = je.value(best_a);
  for (std::size_t k = 2; k < count; ++k) {
    const double a = l + static_cast<double>(k) * step;
    const double v = je.value(a);
    if (v < best) {
      best = v;
      best_a = a;
    }
  }
  double a = best_a;
  for (int it = 0; it < opt.newton_steps; ++it) {
    const double next = a - je.slope(a) / je.curvature(a);
    if (!(next > l && next < r)) break;
    a = next;
  }

  const double m_minus = -A / (a - l), m_plus = B / (r - a);
  s.parameters.push_back({"a", a});
  s.parameters.push_back({"m_minus", m_minus});
  s.parameters.push_back({"m_plus", m_plus});
  s.energy = je.value(a);
  s.flux_residual = flux_balance(m_plus, m_minus, p, lp, lm);
  s.u = DiscreteFunction::sample(grid, [=](const Point& x) {
    const double d = x[0] - a;
    return d > 0.0 ? m_plus * d : m_minus * d;
  });
  return s;
}

/// Convenience form on spec.domain with endpoint data taken from spec.boundary.
inline OracleSolution two_phase_jet_1d(const ProblemSpec& spec, int n, const JetScanOptions& opt = {}) {
  if (spec.boundary.kind != BoundaryData::Kind::kEndpoints)
    throw Error(ErrorCode::kInvalidSpec, "two_phase_jet_1d needs endpoint boundary data");
  return two_phase_jet_1d(spec.boundary.left, spec.boundary.right, spec, build_grid(spec.domain, n), opt);
}

// ---------------------------------------------------------------------------
// Brute-force minimizer
// ---------------------------------------------------------------------------

struct BruteForceOptions {
  int starts = 16;
  std::uint64_t seed = 0;
  int max_sweeps = 5000;
  /// Sweeps stop once no node moves by more than this.
  double step_tol = 1e-12;
  /// Coarse samples per node before the golden-section refinement.
  int scan_points = 32;
  int threads = 1;
};

struct BruteForceResult {
  DiscreteFunction u;
  double energy = 0.0;
  int best_start = 0;
  std::vector<double> start_energies;
};

namespace detail {

/// Energy of one segment: h (|Δu/h|^p + F(mean) + f · mean).
struct SegmentEnergy {
  double h, p, gamma, lp, lm;
  const std::vector<double>* f;

  double operator()(std::size_t e, double ul, double ur) const {
    const double m = 0.5 * (ul + ur);
    return h * (std::pow(std::abs(ur - ul) / h, p) + potential_value(m, gamma, lp, lm) + (*f)[e] * m);
  }
};

inline double brute_energy(const SegmentEnergy& se, const std::vector<double>& u) {
  std::vector<double> parts(u.size() - 1);
  for (std::size_t e = 0; e + 1 < u.size(); ++e) parts[e] = se(e, u[e], u[e + 1]);
  return pairwise_sum(parts);
}

/// Golden-section search on [lo, hi] started from the best of a uniform scan.
template <class Fn>
double golden_argmin(Fn&& fn, double lo, double hi, int scan_points, double current) {
  double best_x = current, best = fn(current);
  const double dx = (hi - lo) / scan_points;
  for (int k = 0; k <= scan_points; ++k) {
    const double x = lo + k * dx;
    const double v = fn(x);
    if (v < best) {
      best = v;
      best_x = x;
    }
  }
  if (fn(0.0) < best && lo <= 0.0 && hi >= 0.0) {
    best = fn(0.0);
    best_x = 0.0;
  }
  constexpr double kInvPhi = 0.6180339887498949;
  double a = std::max(lo, best_x - dx), b = std::min(hi, best_x + dx);
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = fn(c), fd = fn(d);
  while (b - a > 1e-13 * (1.0 + std::abs(a) + std::abs(b))) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = fn(d);
    }
  }
  const double x = 0.5 * (a + b);
  return fn(x) < best ? x : best_x;
}

}  // namespace detail

/// Multi-start cyclic coordinate descent on the discrete J_γ of a coarse
/// interval problem. Each start draws interior values uniformly from the
/// bracket [−2 sup|φ| − 1, 2 sup|φ| + 1]; the lowest energy wins, ties going
/// to the earlier start. Values within 1e-9 of the bracket size are snapped to
/// 0 at the end when that does not raise the energy.
inline BruteForceResult brute_force_minimizer_1d(const ProblemSpec& spec, int n,
                                                 const BruteForceOptions& opt = {}) {
  spec.validate();
  if (spec.domain.dim() != 1) throw Error(ErrorCode::kInvalidSpec, "brute force is 1-D only");
  if (n < 2 || n > 32) throw Error(ErrorCode::kInvalidResolution, "brute force needs 2 <= N <= 32");
  if (opt.starts < 1 || opt.max_sweeps < 1 || opt.scan_points < 2)
    throw Error(ErrorCode::kInvalidSpec, "bad brute-force options");

  const Grid grid = build_grid(spec.domain, n);
  const DiscreteFunction phi = boundary_trace(spec, grid);
  const double bound = 2.0 * boundary_sup(spec, grid) + 1.0;
  const std::vector<double> f = element_source(spec.source, grid);
  const detail::SegmentEnergy se{grid.h(), spec.p, spec.gamma, spec.lambda_plus, spec.lambda_minus, &f};
  const std::size_t last = grid.num_nodes() - 1;

  std::vector<std::vector<double>> results(static_cast<std::size_t>(opt.starts));
  std::vector<double> energies(results.size());
  auto run = [&](std::size_t start) {
    std::mt19937_64 rng(opt.seed + 0x9E3779B97F4A7C15ull * (start + 1));
    std::uniform_real_distribution<double> draw(-bound, bound);
    std::vector<double> u(grid.num_nodes());
    u[0] = phi[0];
    u[last] = phi[last];
    for (std::size_t k = 1; k < last; ++k) u[k] = draw(rng);
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
      double moved = 0.0;
      for (std::size_t k = 1; k < last; ++k) {
        auto local = [&](double v) { return se(k - 1, u[k - 1], v) + se(k, v, u[k + 1]); };
        const double v = detail::golden_argmin(local, -bound, bound, opt.scan_points, u[k]);
        moved = std::max(moved, std::abs(v - u[k]));
        u[k] = v;
      }
      if (moved <= opt.step_tol) break;
    }
    // Coordinate descent only approaches cusp values at 0 geometrically.
    double e = detail::brute_energy(se, u);
    std::vector<double> snapped = u;
    for (double& v : snapped)
      if (std::abs(v) <= 1e-9 * bound) v = 0.0;
    snapped[0] = u[0];
    snapped[last] = u[last];
    if (const double es = detail::brute_energy(se, snapped); es <= e) {
      e = es;
      u = std::move(snapped);
    }
    energies[start] = e;
    results[start] = std::move(u);
  };
  detail::parallel_chunks(results.size(), opt.threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t s = b; s < e; ++s) run(s);
  });

  std::size_t best = 0;
  for (std::size_t s = 1; s < results.size(); ++s)
    if (energies[s] < energies[best]) best = s;
  return {DiscreteFunction(grid, results[best]), energies[best], static_cast<int>(best), energies};
}

}  // namespace fblab
