#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fblab/error.hpp"
#include "fblab/mesh.hpp"
#include "fblab/model.hpp"

namespace fblab {

namespace detail {

/// Runs fn(begin, end, chunk) over a fixed split of [0, n). The split depends
/// only on n and `threads`, so per-chunk results combine deterministically.
template <class Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  const std::size_t chunks = std::min<std::size_t>(t, std::max<std::size_t>(n, 1));
  if (chunks == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t b = n * c / chunks, e = n * (c + 1) / chunks;
    pool.emplace_back([&fn, b, e, c] { fn(b, e, c); });
  }
  for (auto& th : pool) th.join();
}

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

inline double pow_abs(double v, double p) { return std::pow(std::abs(v), p); }

/// Least-squares line y = a + b x.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - f.intercept - f.slope * x[k];
    ss_res += r * r;
  }
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return f;
}

/// Inclusive index range of grid nodes along `axis` within [c - r, c + r].
inline std::array<std::size_t, 2> index_window(const Grid& g, int axis, double c, double r) {
  const double lo = g.domain().lower(axis), h = g.spacing(axis);
  const double n = g.cells_per_axis();
  const double a = std::clamp(std::ceil((c - r - lo) / h - 1e-9), 0.0, n);
  const double b = std::clamp(std::floor((c + r - lo) / h + 1e-9), 0.0, n);
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

/// Element containing x, following the lower-right/upper-left split in 2-D.
inline std::size_t locate_element(const Grid& g, const Point& x) {
  const auto n = static_cast<double>(g.cells_per_axis());
  const double sx = (x[0] - g.domain().lower(0)) / g.spacing(0);
  if (g.dim() == 1) return static_cast<std::size_t>(std::clamp(std::floor(sx), 0.0, n - 1.0));
  const double sy = (x[1] - g.domain().lower(1)) / g.spacing(1);
  const double ci = std::clamp(std::floor(sx), 0.0, n - 1.0);
  const double cj = std::clamp(std::floor(sy), 0.0, n - 1.0);
  const std::size_t cell = static_cast<std::size_t>(cj) * g.cells_per_axis() +
                           static_cast<std::size_t>(ci);
  return (sx - ci >= sy - cj) ? 2 * cell : 2 * cell + 1;
}

/// Value of the P1 interpolant at x.
inline double interpolate(const DiscreteFunction& u, const Point& x) {
  const Grid& g = u.grid();
  const Element el = g.element(locate_element(g, x));
  const Vec2 gr = u.gradient(el);
  const Point x0 = g.coords(el.vertex[0]);
  return u[el.vertex[0]] + gr[0] * (x[0] - x0[0]) + gr[1] * (x[1] - x0[1]);
}

/// sup of the P1 interpolant's positive part over the closed ball. Exact in
/// 1-D; in 2-D the sphere is sampled at spacing h/2.
inline double ball_sup_positive(const DiscreteFunction& u, const Point& c, double r) {
  const Grid& g = u.grid();
  const double rr = r * (1.0 + 1e-9);
  const auto wx = index_window(g, 0, c[0], rr);
  std::array<std::size_t, 2> wy{0, 0};
  if (g.dim() == 2) wy = index_window(g, 1, c[1], rr);
  double m = 0.0;
  for (std::size_t j = wy[0]; j <= wy[1]; ++j)
    for (std::size_t i = wx[0]; i <= wx[1]; ++i) {
      const std::size_t k = g.index(i, j);
      if (distance(g.coords(k), c) <= rr) m = std::max(m, u[k]);
    }
  auto probe = [&](const Point& x) {
    if (g.domain().contains(x)) m = std::max(m, interpolate(u, x));
  };
  if (g.dim() == 1) {
    probe({c[0] - r, 0.0});
    probe({c[0] + r, 0.0});
  } else {
    constexpr double kTwoPi = 6.28318530717958647692;
    const int k = std::max(16, static_cast<int>(std::ceil(kTwoPi * r / (0.5 * g.h()))));
    for (int t = 0; t < k; ++t) {
      const double th = kTwoPi * t / k;
      probe({c[0] + r * std::cos(th), c[1] + r * std::sin(th)});
    }
  }
  return m;
}

/// Nearest-point queries against a fixed set, bucketed on a square lattice.
class PointIndex {
 public:
  PointIndex(std::vector<Point> pts, double bucket) : pts_(std::move(pts)), b_(bucket) {
    if (pts_.empty()) return;
    lo_ = pts_[0];
    Point hi = pts_[0];
    for (const Point& q : pts_)
      for (int a = 0; a < 2; ++a) {
        lo_[a] = std::min(lo_[a], q[a]);
        hi[a] = std::max(hi[a], q[a]);
      }
    nx_ = static_cast<std::size_t>((hi[0] - lo_[0]) / b_) + 1;
    ny_ = static_cast<std::size_t>((hi[1] - lo_[1]) / b_) + 1;
    start_.assign(nx_ * ny_ + 1, 0);
    for (const Point& q : pts_) ++start_[key(q) + 1];
    for (std::size_t k = 1; k < start_.size(); ++k) start_[k] += start_[k - 1];
    order_.resize(pts_.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t k = 0; k < pts_.size(); ++k) order_[fill[key(pts_[k])]++] = k;
  }

  bool empty() const { return pts_.empty(); }

  /// Distance to the nearest point if it is at most `limit`, else +inf.
  double nearest(const Point& x, double limit) const {
    double best = std::numeric_limits<double>::infinity();
    if (pts_.empty()) return best;
    const auto cell = [&](double v, double lo, std::size_t n) {
      return static_cast<std::int64_t>(std::clamp(std::floor((v - lo) / b_), -1.0,
                                                  static_cast<double>(n)));
    };
    const std::int64_t reach = static_cast<std::int64_t>(std::ceil(limit / b_)) + 1;
    const std::int64_t cx = cell(x[0], lo_[0], nx_), cy = cell(x[1], lo_[1], ny_);
    for (std::int64_t j = std::max<std::int64_t>(0, cy - reach);
         j <= std::min<std::int64_t>(static_cast<std::int64_t>(ny_) - 1, cy + reach); ++j)
      for (std::int64_t i = std::max<std::int64_t>(0, cx - reach);
           i <= std::min<std::int64_t>(static_cast<std::int64_t>(nx_) - 1, cx + reach); ++i) {
        const std::size_t k = static_cast<std::size_t>(j) * nx_ + static_cast<std::size_t>(i);
        for (std::size_t s = start_[k]; s < start_[k + 1]; ++s)
          best = std::min(best, distance(x, pts_[order_[s]]));
      }
    return best <= limit ? best : std::numeric_limits<double>::infinity();
  }

 private:
  std::size_t key(const Point& q) const {
    const auto i = std::min(nx_ - 1, static_cast<std::size_t>((q[0] - lo_[0]) / b_));
    const auto j = std::min(ny_ - 1, static_cast<std::size_t>((q[1] - lo_[1]) / b_));
    return j * nx_ + i;
  }

  std::vector<Point> pts_;
  double b_;
  Point lo_{0.0, 0.0};
  std::size_t nx_ = 1, ny_ = 1;
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Free boundary
// ---------------------------------------------------------------------------

/// A crossing of zero. For a sign-changing edge (a, b) the point is the linear
/// interpolation along the edge and side_a, side_b are the signs of u at a and
/// b. For a node with u == 0 next to a nonzero node, a == b and the sides are
/// the smallest and largest neighbour signs.
struct InterfacePoint {
  Point x{0.0, 0.0};
  std::size_t a = 0;
  std::size_t b = 0;
  int side_a = 0;
  int side_b = 0;

  bool on_node() const { return a == b; }
  bool touches_positive() const { return side_a > 0 || side_b > 0; }
  bool touches_negative() const { return side_a < 0 || side_b < 0; }
};

struct FreeBoundary {
  std::vector<InterfacePoint> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  /// Points of the boundary of the positivity set.
  std::vector<Point> positive_part() const {
    std::vector<Point> out;
    for (const auto& q : points)
      if (q.touches_positive()) out.push_back(q.x);
    return out;
  }
};

inline FreeBoundary free_boundary(const DiscreteFunction& u) {
  const Grid& g = u.grid();
  FreeBoundary fb;
  std::array<std::size_t, 6> nb{};
  for (std::size_t a = 0; a < g.num_nodes(); ++a) {
    const int k = g.neighbors(a, nb);
    const int sa = detail::sign_of(u[a]);
    if (sa == 0) {
      int lo = 0, hi = 0;
      for (int t = 0; t < k; ++t) {
        lo = std::min(lo, detail::sign_of(u[nb[t]]));
        hi = std::max(hi, detail::sign_of(u[nb[t]]));
      }
      if (lo != 0 || hi != 0) fb.points.push_back({g.coords(a), a, a, lo, hi});
      continue;
    }
    for (int t = 0; t < k; ++t) {
      const std::size_t b = nb[t];
      if (b < a) continue;
      const int sb = detail::sign_of(u[b]);
      if (sb == 0 || sb == sa) continue;
      const double s = u[a] / (u[a] - u[b]);
      const Point xa = g.coords(a), xb = g.coords(b);
      const Point x{xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])};
      fb.points.push_back({x, a, b, sa, sb});
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

struct FitResult {
  double exponent = 0.0;
  double constant = 0.0;
  double r_squared = 0.0;
  std::vector<double> radii;
  std::vector<double> values;
  /// The data are identically zero and no exponent can be fitted.
  bool degenerate = false;
};

inline constexpr std::size_t kMinScales = 4;

/// 4h·2^k for k = 0, 1, … up to `reach`/2.
inline std::vector<double> dyadic_radii(const Grid& grid, double reach) {
  std::vector<double> r;
  for (double s = 4.0 * grid.h(); s <= 0.5 * reach * (1.0 + 1e-12); s *= 2.0) r.push_back(s);
  return r;
}

namespace detail {

inline std::vector<double> admissible_radii(const Grid& g, std::vector<double> radii,
                                            double reach) {
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
  std::vector<double> out;
  const double lo = 4.0 * g.h() * (1.0 - 1e-12), hi = 0.5 * reach * (1.0 + 1e-12);
  for (double r : radii)
    if (r >= lo && r <= hi) out.push_back(r);
  return out;
}

inline void require_scales(std::size_t n, const char* what) {
  if (n < kMinScales)
    throw Error(ErrorCode::kInsufficientScales, std::string(what) + ": " + std::to_string(n) +
                                                    " usable radii, need " +
                                                    std::to_string(kMinScales));
}

/// Positive-boundary point farthest from the domain boundary.
inline std::optional<Point> deepest_point(const Grid& g, const std::vector<Point>& pts) {
  std::optional<Point> best;
  double d = -1.0;
  for (const Point& q : pts) {
    const double e = g.domain().distance_to_boundary(q);
    if (e > d) {
      d = e;
      best = q;
    }
  }
  return best;
}

}  // namespace detail

/// Fit of log sup_{B_r} u⁺ against log r. Without `center` the point of the
/// positive free boundary farthest from the domain boundary is used.
inline FitResult growth_fit(const DiscreteFunction& u, const FreeBoundary& fb,
                            const std::vector<double>& radii,
                            std::optional<Point> center = std::nullopt) {
  const Grid& g = u.grid();
  if (!center) center = detail::deepest_point(g, fb.positive_part());
  if (!center) throw Error(ErrorCode::kNoPositivePhase, "growth_fit: no positive free boundary");
  const double reach = g.domain().distance_to_boundary(*center);
  FitResult out;
  std::vector<double> lx, ly;
  for (double r : detail::admissible_radii(g, radii, reach)) {
    const double s = detail::ball_sup_positive(u, *center, r);
    if (!(s > 0.0)) continue;
    out.radii.push_back(r);
    out.values.push_back(s);
    lx.push_back(std::log(r));
    ly.push_back(std::log(s));
  }
  detail::require_scales(lx.size(), "growth_fit");
  const auto f = detail::fit_line(lx, ly);
  out.exponent = f.slope;
  out.constant = std::exp(f.intercept);
  out.r_squared = f.r_squared;
  return out;
}

struct NondegeneracyResult {
  double c_growth = 0.0;
  double c_sup = 0.0;
  std::vector<double> radii;
  /// min u(X)/dist(X, F⁺) over positive nodes with dist in (r/2, r].
  std::vector<double> growth_by_radius;
  /// min over positive free boundary points of sup_{B_r} u⁺ / r.
  std::vector<double> sup_by_radius;
};

inline NondegeneracyResult nondegeneracy_check(const DiscreteFunction& u, const FreeBoundary& fb,
                                               const std::vector<double>& radii,
                                               int threads = 1) {
  const Grid& g = u.grid();
  bool any_positive = false;
  for (double v : u.values()) any_positive = any_positive || v > 0.0;
  const std::vector<Point> fp = fb.positive_part();
  if (!any_positive || fp.empty())
    throw Error(ErrorCode::kNoPositivePhase, "nondegeneracy_check: empty positive phase");

  NondegeneracyResult out;
  out.radii = detail::admissible_radii(g, radii, g.domain().diameter());
  if (out.radii.empty())
    throw Error(ErrorCode::kInsufficientScales, "nondegeneracy_check: no usable radius");
  const std::size_t m = out.radii.size();
  const double inf = std::numeric_limits<double>::infinity();

  out.sup_by_radius.assign(m, inf);
  for (const Point& q : fp) {
    const double reach = g.domain().distance_to_boundary(q);
    for (std::size_t k = 0; k < m; ++k) {
      if (out.radii[k] > 0.5 * reach * (1.0 + 1e-12)) continue;
      const double s = detail::ball_sup_positive(u, q, out.radii[k]) / out.radii[k];
      out.sup_by_radius[k] = std::min(out.sup_by_radius[k], s);
    }
  }

  const detail::PointIndex index(fp, std::max(out.radii.back(), g.h()));
  const double limit = out.radii.back();
  const std::size_t chunks = static_cast<std::size_t>(std::max(1, threads));
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(m, inf));
  detail::parallel_chunks(g.num_nodes(), threads, [&](std::size_t b, std::size_t e,
                                                      std::size_t c) {
    auto& acc = partial[c];
    for (std::size_t k = b; k < e; ++k) {
      if (!(u[k] > 0.0)) continue;
      const double d = index.nearest(g.coords(k), limit);
      if (!std::isfinite(d) || d <= 0.5 * out.radii.front()) continue;
      const auto it = std::lower_bound(out.radii.begin(), out.radii.end(), d * (1.0 - 1e-12));
      if (it == out.radii.end()) continue;
      const std::size_t s = static_cast<std::size_t>(it - out.radii.begin());
      if (s > 0 && d <= 0.5 * out.radii[s]) continue;  // between shells of a sparse list
      acc[s] = std::min(acc[s], u[k] / d);
    }
  });
  out.growth_by_radius.assign(m, inf);
  for (const auto& acc : partial)
    for (std::size_t k = 0; k < m; ++k)
      out.growth_by_radius[k] = std::min(out.growth_by_radius[k], acc[k]);

  out.c_growth = *std::min_element(out.growth_by_radius.begin(), out.growth_by_radius.end());
  out.c_sup = *std::min_element(out.sup_by_radius.begin(), out.sup_by_radius.end());
  return out;
}

// ---------------------------------------------------------------------------
// Flux balance
// ---------------------------------------------------------------------------

/// |s₊|^p − |s₋|^p − (λ₊ − λ₋)/(p − 1).
inline double flux_balance(double slope_plus, double slope_minus, double p, double lambda_plus,
                           double lambda_minus) {
  return detail::pow_abs(slope_plus, p) - detail::pow_abs(slope_minus, p) -
         (lambda_plus - lambda_minus) / (p - 1.0);
}

struct FluxSample {
  Point x{0.0, 0.0};
  double slope_plus = 0.0;
  double slope_minus = 0.0;
  double residual = 0.0;
  /// The one-sided data would leave the domain.
  bool skipped = false;
};

namespace detail {

inline FluxSample flux_1d(const DiscreteFunction& u, const InterfacePoint& q,
                          const ProblemSpec& spec) {
  const Grid& g = u.grid();
  const std::size_t n = static_cast<std::size_t>(g.cells_per_axis());
  const double h = g.spacing(0);
  auto slope = [&](std::size_t cell) { return std::abs(u[cell + 1] - u[cell]) / h; };
  FluxSample s;
  s.x = q.x;
  // Cells on the "+" and "-" side; the "+" side holds the larger neighbour.
  std::size_t left_node, right_node;
  bool plus_right;
  if (q.on_node()) {
    left_node = right_node = q.a;
    const double l = q.a > 0 ? u[q.a - 1] : -std::numeric_limits<double>::infinity();
    const double r = q.a < n ? u[q.a + 1] : -std::numeric_limits<double>::infinity();
    plus_right = r >= l;
  } else {
    left_node = q.a;
    right_node = q.b;
    plus_right = q.side_b > 0;
  }
  if (left_node == 0 || right_node == n) {
    s.skipped = true;
    return s;
  }
  const double sl = slope(left_node - 1), sr = slope(right_node);
  s.slope_plus = plus_right ? sr : sl;
  s.slope_minus = plus_right ? sl : sr;
  s.residual = flux_balance(s.slope_plus, s.slope_minus, spec.p, spec.lambda_plus,
                            spec.lambda_minus);
  return s;
}

inline FluxSample flux_2d(const DiscreteFunction& u, const InterfacePoint& q,
                          const ProblemSpec& spec) {
  const Grid& g = u.grid();
  FluxSample s;
  s.x = q.x;
  // Normal from the averaged gradient of the elements around the edge or node.
  std::array<std::size_t, 6> ea{}, eb{};
  const int na = g.elements_of_node(q.a, ea);
  const int nbn = q.on_node() ? 0 : g.elements_of_node(q.b, eb);
  Vec2 n{0.0, 0.0};
  int used = 0;
  for (int i = 0; i < na; ++i) {
    bool take = q.on_node();
    for (int j = 0; j < nbn; ++j) take = take || ea[i] == eb[j];
    if (!take) continue;
    const Vec2 gr = u.gradient(g.element(ea[i]));
    n[0] += gr[0];
    n[1] += gr[1];
    ++used;
  }
  const double len = std::hypot(n[0], n[1]);
  if (used == 0 || !(len > 0.0)) {
    s.skipped = true;
    return s;
  }
  n = {n[0] / len, n[1] / len};
  if (!q.on_node()) {
    const Point xa = g.coords(q.a), xb = g.coords(q.b);
    const double along = n[0] * (xb[0] - xa[0]) + n[1] * (xb[1] - xa[1]);
    if ((along > 0.0) != (q.side_b > 0)) n = {-n[0], -n[1]};
  }
  const double delta = 1.5 * g.h();
  const Point xp{q.x[0] + delta * n[0], q.x[1] + delta * n[1]};
  const Point xm{q.x[0] - delta * n[0], q.x[1] - delta * n[1]};
  if (!g.domain().contains(xp) || !g.domain().contains(xm)) {
    s.skipped = true;
    return s;
  }
  const Vec2 gp = u.gradient(g.element(locate_element(g, xp)));
  const Vec2 gm = u.gradient(g.element(locate_element(g, xm)));
  s.slope_plus = std::abs(gp[0] * n[0] + gp[1] * n[1]);
  s.slope_minus = std::abs(gm[0] * n[0] + gm[1] * n[1]);
  s.residual = flux_balance(s.slope_plus, s.slope_minus, spec.p, spec.lambda_plus,
                            spec.lambda_minus);
  return s;
}

}  // namespace detail

/// Flux balance at every interface point. Only p and the phase weights of
/// `spec` are read.
inline std::vector<FluxSample> flux_residual(const DiscreteFunction& u, const FreeBoundary& fb,
                                             const ProblemSpec& spec) {
  std::vector<FluxSample> out;
  out.reserve(fb.size());
  for (const auto& q : fb.points)
    out.push_back(u.grid().dim() == 1 ? detail::flux_1d(u, q, spec) : detail::flux_2d(u, q, spec));
  return out;
}

// ---------------------------------------------------------------------------
// Gradient oscillation
// ---------------------------------------------------------------------------

struct OscillationFit {
  /// exponent is the fitted slope p·α̂; +inf when the data are degenerate.
  FitResult fit;
  double alpha = 0.0;
  /// Fitted slope within `bmo_tol` of zero.
  bool bmo = false;
};

/// Fit of log of the ball mean of |∇u − (∇u)_r|^p against log r. Elements
/// belong to a ball when their barycenter does.
inline OscillationFit oscillation_decay_fit(const DiscreteFunction& u, const Point& center,
                                            const std::vector<double>& radii, double p = 2.0,
                                            double bmo_tol = 0.1) {
  if (!(p >= 1.0 && std::isfinite(p)))
    throw Error(ErrorCode::kInvalidExponent, "oscillation_decay_fit needs p >= 1");
  const Grid& g = u.grid();
  const auto rs = detail::admissible_radii(g, radii, g.domain().distance_to_boundary(center));
  detail::require_scales(rs.size(), "oscillation_decay_fit");

  OscillationFit out;
  out.fit.radii = rs;
  double scale = 0.0;
  std::vector<Vec2> grads;
  for (double r : rs) {
    grads.clear();
    const auto wx = detail::index_window(g, 0, center[0], r + g.h());
    std::array<std::size_t, 2> wy{0, 0};
    if (g.dim() == 2) wy = detail::index_window(g, 1, center[1], r + g.h());
    const std::size_t n = static_cast<std::size_t>(g.cells_per_axis());
    for (std::size_t j = wy[0]; j <= std::min(wy[1], g.dim() == 2 ? n - 1 : 0); ++j)
      for (std::size_t i = wx[0]; i <= std::min(wx[1], n - 1); ++i) {
        const std::size_t first = g.dim() == 1 ? i : 2 * (j * n + i);
        const std::size_t count = g.dim() == 1 ? 1 : 2;
        for (std::size_t e = first; e < first + count; ++e)
          if (distance(g.barycenter(e), center) <= r * (1.0 + 1e-9))
            grads.push_back(u.gradient(g.element(e)));
      }
    Vec2 mean{0.0, 0.0};
    for (const Vec2& v : grads) {
      mean[0] += v[0];
      mean[1] += v[1];
    }
    const double inv = 1.0 / static_cast<double>(grads.size());
    mean = {mean[0] * inv, mean[1] * inv};
    double osc = 0.0;
    for (const Vec2& v : grads) {
      const double d2 = (v[0] - mean[0]) * (v[0] - mean[0]) + (v[1] - mean[1]) * (v[1] - mean[1]);
      osc += std::pow(d2, 0.5 * p);
    }
    out.fit.values.push_back(osc * inv);
    scale = std::max(scale, std::hypot(mean[0], mean[1]));
  }

  const double floor = std::pow(1e-10 * scale, p);
  bool degenerate = true;
  for (double v : out.fit.values) degenerate = degenerate && v <= floor;
  if (degenerate) {
    out.fit.degenerate = true;
    out.fit.exponent = std::numeric_limits<double>::infinity();
    out.alpha = std::numeric_limits<double>::infinity();
    out.fit.r_squared = 0.0;
    return out;
  }
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < rs.size(); ++k) {
    if (!(out.fit.values[k] > 0.0)) continue;
    lx.push_back(std::log(rs[k]));
    ly.push_back(std::log(out.fit.values[k]));
  }
  detail::require_scales(lx.size(), "oscillation_decay_fit");
  const auto f = detail::fit_line(lx, ly);
  out.fit.exponent = f.slope;
  out.fit.constant = std::exp(f.intercept);
  out.fit.r_squared = f.r_squared;
  out.alpha = f.slope / p;
  out.bmo = std::abs(f.slope) <= bmo_tol;
  return out;
}

// ---------------------------------------------------------------------------
// Moduli of continuity
// ---------------------------------------------------------------------------

enum class ModulusForm { kHolder, kLipschitz, kLogLipschitz };

inline const char* to_string(ModulusForm f) {
  switch (f) {
    case ModulusForm::kHolder: return "holder";
    case ModulusForm::kLipschitz: return "lipschitz";
    case ModulusForm::kLogLipschitz: return "log-lipschitz";
  }
  return "?";
}

/// ω(t) for the chosen form; log-Lipschitz uses t(1 + |log t|).
inline double modulus_omega(ModulusForm form, double t, double alpha = 1.0) {
  switch (form) {
    case ModulusForm::kHolder: return std::pow(t, alpha);
    case ModulusForm::kLipschitz: return t;
    case ModulusForm::kLogLipschitz: return t * (1.0 + std::abs(std::log(t)));
  }
  return t;
}

struct ModulusResult {
  ModulusForm form = ModulusForm::kLipschitz;
  double alpha = 1.0;
  /// Smallest K with |u(X) − u(Y)| <= K ω(|X − Y|) over the sampled pairs.
  double constant = 0.0;
  /// max |u(b) − u(a)| / |b − a| over grid edges.
  double max_slope = 0.0;
  std::size_t pairs = 0;
};

namespace detail {

inline double max_edge_slope(const DiscreteFunction& u) {
  const Grid& g = u.grid();
  double m = 0.0;
  for (const auto& e : g.edges()) {
    const double d = distance(g.coords(e[0]), g.coords(e[1]));
    m = std::max(m, std::abs(u[e[1]] - u[e[0]]) / d);
  }
  return m;
}

/// Index offsets for pair sampling: every offset up to `dense`, then a
/// geometric progression with ratio 5/4.
inline std::vector<std::size_t> pair_offsets(std::size_t max_offset, std::size_t dense) {
  std::vector<std::size_t> k;
  for (std::size_t s = 1; s <= std::min(max_offset, dense); ++s) k.push_back(s);
  for (std::size_t s = dense + 1; s <= max_offset; s = std::max(s + 1, s * 5 / 4)) k.push_back(s);
  if (!k.empty() && k.back() != max_offset && max_offset > dense) k.push_back(max_offset);
  return k;
}

}  // namespace detail

/// For the Lipschitz form the constant is the exact sup over all pairs of the
/// P1 interpolant, max over elements of |∇u|; in 1-D this is the largest edge
/// slope. Other forms sample all node pairs on intervals with at most
/// `all_pairs_limit` nodes and offset families otherwise.
inline ModulusResult modulus_of_continuity(const DiscreteFunction& u, ModulusForm form,
                                           double alpha = 1.0, int threads = 1,
                                           std::size_t all_pairs_limit = 8193) {
  if (form == ModulusForm::kHolder && !(alpha > 0.0 && alpha <= 1.0))
    throw Error(ErrorCode::kInvalidExponent, "Hölder exponent must lie in (0, 1]");
  const Grid& g = u.grid();
  ModulusResult out;
  out.form = form;
  out.alpha = form == ModulusForm::kHolder ? alpha : 1.0;
  out.max_slope = detail::max_edge_slope(u);
  if (form == ModulusForm::kLipschitz) {
    if (g.dim() == 1) {
      out.constant = out.max_slope;
    } else {
      for (std::size_t e = 0; e < g.num_elements(); ++e) {
        const Vec2 gr = u.gradient(g.element(e));
        out.constant = std::max(out.constant, std::hypot(gr[0], gr[1]));
      }
    }
    out.pairs = g.edges().size();
    return out;
  }

  const std::size_t n = g.nodes_per_axis();
  const double hx = g.spacing(0), hy = g.dim() == 2 ? g.spacing(1) : 0.0;
  std::vector<std::array<std::int64_t, 2>> dirs;
  std::vector<std::size_t> offsets;
  if (g.dim() == 1) {
    dirs = {{1, 0}};
    offsets = detail::pair_offsets(n - 1, n <= all_pairs_limit ? n : 256);
  } else {
    dirs = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
    offsets = detail::pair_offsets(n - 1, 16);
  }
  const std::size_t chunks = static_cast<std::size_t>(std::max(1, threads));
  std::vector<double> best(chunks, 0.0);
  std::vector<std::size_t> count(chunks, 0);
  detail::parallel_chunks(g.num_nodes(), threads, [&](std::size_t b, std::size_t e,
                                                      std::size_t c) {
    for (std::size_t k = b; k < e; ++k) {
      const auto i = static_cast<std::int64_t>(g.ix(k)), j = static_cast<std::int64_t>(g.iy(k));
      for (const auto& d : dirs)
        for (std::size_t s : offsets) {
          const auto si = static_cast<std::int64_t>(s);
          const std::int64_t i2 = i + d[0] * si, j2 = j + d[1] * si;
          if (i2 >= static_cast<std::int64_t>(n) || j2 < 0 ||
              (g.dim() == 2 && j2 >= static_cast<std::int64_t>(n)))
            break;
          const std::size_t k2 = g.index(static_cast<std::size_t>(i2), static_cast<std::size_t>(j2));
          const double t = std::hypot(static_cast<double>(d[0] * si) * hx,
                                      static_cast<double>(d[1] * si) * hy);
          best[c] = std::max(best[c], std::abs(u[k2] - u[k]) / modulus_omega(form, t, alpha));
          ++count[c];
        }
    }
  });
  for (std::size_t c = 0; c < chunks; ++c) {
    out.constant = std::max(out.constant, best[c]);
    out.pairs += count[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vector monotonicity
// ---------------------------------------------------------------------------

/// ⟨|a|^{p-2}a − |b|^{p-2}b, a − b⟩ / |a − b|^p.
inline double monotonicity_ratio(const Vec2& a, const Vec2& b, double p) {
  auto flux = [p](const Vec2& v) {
    const double w = std::pow(v[0] * v[0] + v[1] * v[1], 0.5 * (p - 2.0));
    return Vec2{w * v[0], w * v[1]};
  };
  const Vec2 fa = flux(a), fb = flux(b);
  const Vec2 d{a[0] - b[0], a[1] - b[1]};
  const double num = (fa[0] - fb[0]) * d[0] + (fa[1] - fb[1]) * d[1];
  return num / std::pow(d[0] * d[0] + d[1] * d[1], 0.5 * p);
}

struct MonotonicityProbe {
  double min_ratio = std::numeric_limits<double>::infinity();
  Vec2 xi1{0.0, 0.0};
  Vec2 xi2{0.0, 0.0};
  std::size_t pairs = 0;
};

/// Minimum ratio over `trials` random pairs (magnitudes log-uniform over six
/// decades) and structured pairs (ξ, −tξ) and (ξ, 0).
inline MonotonicityProbe vector_monotonicity_probe(double p, std::size_t trials,
                                                   std::uint64_t seed = 0) {
  if (!(p >= 2.0 && std::isfinite(p)))
    throw Error(ErrorCode::kInvalidExponent, "vector_monotonicity_probe needs p >= 2");
  MonotonicityProbe out;
  auto take = [&](const Vec2& a, const Vec2& b) {
    if (a == b) return;
    const double r = monotonicity_ratio(a, b, p);
    ++out.pairs;
    if (r < out.min_ratio) {
      out.min_ratio = r;
      out.xi1 = a;
      out.xi2 = b;
    }
  };
  constexpr double kPi = 3.14159265358979323846;
  for (int k = 0; k < 8; ++k) {
    const double th = kPi * k / 8.0;
    const Vec2 e{std::cos(th), std::sin(th)};
    take(e, {0.0, 0.0});
    for (int m = -12; m <= 12; ++m) {
      const double t = std::pow(2.0, 0.5 * m);
      take(e, {-t * e[0], -t * e[1]});
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> decade(-3.0, 3.0);
  auto draw = [&] {
    const double s = std::pow(10.0, decade(rng));
    return Vec2{s * normal(rng), s * normal(rng)};
  };
  for (std::size_t t = 0; t < trials; ++t) {
    const Vec2 a = draw(), b = draw();
    take(a, b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct RegularityReport {
  FreeBoundary free_boundary;
  std::optional<FitResult> growth;
  std::optional<NondegeneracyResult> nondegeneracy;
  std::vector<FluxSample> flux;
  std::optional<Point> oscillation_center;
  std::optional<OscillationFit> oscillation;
  ModulusResult lipschitz;
  ModulusResult log_lipschitz;
  /// Analyses that could not run, with the reason.
  std::vector<std::string> notes;

  /// Largest |residual| over interface points that were not skipped.
  double max_flux_residual() const {
    double m = 0.0;
    for (const auto& f : flux)
      if (!f.skipped) m = std::max(m, std::abs(f.residual));
    return m;
  }
};

struct DiagnoseOptions {
  /// Empty: dyadic radii from 4h.
  std::vector<double> radii;
  /// Oscillation center; defaults to the deepest positive interface point,
  /// or the domain center.
  std::optional<Point> center;
  int threads = 1;
};

/// Runs every analysis that applies to `u`; failures are recorded in notes.
inline RegularityReport diagnose(const DiscreteFunction& u, const ProblemSpec& spec,
                                 const DiagnoseOptions& opt = {}) {
  const Grid& g = u.grid();
  RegularityReport rep;
  rep.free_boundary = free_boundary(u);
  const auto fp = rep.free_boundary.positive_part();
  const auto radii = opt.radii.empty() ? dyadic_radii(g, g.domain().diameter()) : opt.radii;
  auto note = [&](const char* what, const Error& e) {
    rep.notes.push_back(std::string(what) + ": " + to_string(e.code()) + ": " + e.what());
  };
  if (!fp.empty()) {
    try {
      rep.growth = growth_fit(u, rep.free_boundary, radii);
    } catch (const Error& e) {
      note("growth_fit", e);
    }
    try {
      rep.nondegeneracy = nondegeneracy_check(u, rep.free_boundary, radii, opt.threads);
    } catch (const Error& e) {
      note("nondegeneracy_check", e);
    }
  } else {
    rep.notes.push_back("growth_fit: no positive free boundary");
  }
  rep.flux = flux_residual(u, rep.free_boundary, spec);

  Point c = opt.center.value_or(Point{});
  if (!opt.center) {
    if (const auto d = detail::deepest_point(g, fp)) {
      c = *d;
    } else {
      const auto& dom = g.domain();
      c = {0.5 * (dom.lower(0) + dom.upper(0)), dom.dim() == 2 ? 0.5 * (dom.lower(1) + dom.upper(1)) : 0.0};
    }
  }
  rep.oscillation_center = c;
  try {
    rep.oscillation = oscillation_decay_fit(u, c, radii, spec.p);
  } catch (const Error& e) {
    note("oscillation_decay_fit", e);
  }
  rep.lipschitz = modulus_of_continuity(u, ModulusForm::kLipschitz, 1.0, opt.threads);
  rep.log_lipschitz = modulus_of_continuity(u, ModulusForm::kLogLipschitz, 1.0, opt.threads);
  return rep;
}

}  // namespace fblab
