#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fblab/diagnostics.hpp"
#include "fblab/solver.hpp"

using namespace fblab;

namespace {

DiscreteFunction on_interval(int n, double a, double b, double (*fn)(double)) {
  const Grid g = build_grid(Domain::interval(a, b), n);
  return DiscreteFunction::sample(g, [fn](const Point& x) { return fn(x[0]); });
}

double pos(double x) { return x > 0 ? x : 0.0; }

// Broken line with slopes mm (left) and mp (right) through zero at kink.
DiscreteFunction broken_line(const Grid& g, double kink, double mm, double mp) {
  return DiscreteFunction::sample(g, [=](const Point& x) {
    const double d = x[0] - kink;
    return d > 0 ? mp * d : mm * d;
  });
}

DiscreteFunction random_function(const Grid& g, unsigned seed, double zero_fraction) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> v(-1.0, 1.0), z(0.0, 1.0);
  std::vector<double> vals(g.num_nodes());
  for (double& x : vals) x = z(rng) < zero_fraction ? 0.0 : v(rng);
  return DiscreteFunction(g, vals);
}

ProblemSpec phases(double p, double lp, double lm) {
  ProblemSpec s;
  s.p = p;
  s.lambda_plus = lp;
  s.lambda_minus = lm;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(FreeBoundary, IdentityCrossesOnceAtZero) {
  for (int n : {64, 65}) {
    const auto fb = free_boundary(on_interval(n, -1.0, 1.0, [](double x) { return x; }));
    ASSERT_EQ(fb.size(), 1u) << n;
    EXPECT_NEAR(fb.points[0].x[0], 0.0, 1e-15);
    EXPECT_TRUE(fb.points[0].touches_positive());
    EXPECT_TRUE(fb.points[0].touches_negative());
  }
}

TEST(FreeBoundary, BoundaryOfPositivity) {
  const auto fb = free_boundary(on_interval(64, -1.0, 1.0, [](double x) { return pos(x) * pos(x) / 4; }));
  ASSERT_EQ(fb.size(), 1u);
  EXPECT_EQ(fb.points[0].x[0], 0.0);
  EXPECT_EQ(fb.points[0].side_a, 0);
  EXPECT_EQ(fb.points[0].side_b, 1);
}

TEST(FreeBoundary, OneSignIsEmpty) {
  EXPECT_TRUE(free_boundary(on_interval(32, -1.0, 1.0, [](double) { return 1.0; })).empty());
  const Grid g = build_grid(Domain::rectangle(0, 1, 0, 1), 8);
  EXPECT_TRUE(free_boundary(DiscreteFunction::sample(g, [](const Point&) { return -2.0; })).empty());
}

TEST(FreeBoundary, PlanarInterfaceIn2D) {
  const Grid g = build_grid(Domain::rectangle(0, 1, 0, 1), 16);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return x[0] - 0.3; });
  const auto fb = free_boundary(u);
  ASSERT_FALSE(fb.empty());
  for (const auto& q : fb.points) EXPECT_NEAR(q.x[0], 0.3, 1e-14);
}

TEST(FreeBoundary, PointsLieOnSignChangingEdges) {
  for (const Grid& g : {build_grid(Domain::interval(0, 1), 50), build_grid(Domain::rectangle(0, 1, 0, 2), 12)}) {
    const auto u = random_function(g, 3, 0.2);
    std::array<std::size_t, 6> nb{};
    for (const auto& q : free_boundary(u).points) {
      if (q.on_node()) {
        EXPECT_EQ(u[q.a], 0.0);
        bool nonzero = false;
        const int k = g.neighbors(q.a, nb);
        for (int t = 0; t < k; ++t) nonzero = nonzero || u[nb[t]] != 0.0;
        EXPECT_TRUE(nonzero);
        EXPECT_EQ(q.x, g.coords(q.a));
      } else {
        EXPECT_LT(u[q.a] * u[q.b], 0.0);
        const Point xa = g.coords(q.a), xb = g.coords(q.b);
        const double along = distance(xa, q.x) + distance(q.x, xb) - distance(xa, xb);
        EXPECT_NEAR(along, 0.0, 1e-12);
      }
    }
  }
}

TEST(FreeBoundary, SignFlipSwapsLabelsAndKeepsPoints) {
  for (const Grid& g : {build_grid(Domain::interval(-1, 1), 40), build_grid(Domain::rectangle(0, 1, 0, 1), 10)}) {
    DiscreteFunction u = random_function(g, 11, 0.15);
    DiscreteFunction v = u;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = -v[k];
    const auto a = free_boundary(u), b = free_boundary(v);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(a.points[k].x, b.points[k].x);
      EXPECT_EQ(a.points[k].a, b.points[k].a);
      if (a.points[k].on_node()) {
        EXPECT_EQ(a.points[k].side_a, -b.points[k].side_b);
        EXPECT_EQ(a.points[k].side_b, -b.points[k].side_a);
      } else {
        EXPECT_EQ(a.points[k].side_a, -b.points[k].side_a);
        EXPECT_EQ(a.points[k].side_b, -b.points[k].side_b);
      }
    }
  }
}

// ---------------------------------------------------------------------------

TEST(GrowthFit, LinearGrowth) {
  const auto u = on_interval(1024, -1.0, 1.0, pos);
  const auto f = growth_fit(u, free_boundary(u), dyadic_radii(u.grid(), 1.0));
  EXPECT_NEAR(f.exponent, 1.0, 0.01);
  EXPECT_NEAR(f.constant, 1.0, 1e-6);
  EXPECT_GE(f.radii.size(), kMinScales);
  for (std::size_t k = 1; k < f.radii.size(); ++k) EXPECT_GT(f.radii[k], f.radii[k - 1]);
  EXPECT_GE(f.r_squared, 0.0);
  EXPECT_LE(f.r_squared, 1.0);
}

TEST(GrowthFit, AltPhillipsRate) {
  const auto u = on_interval(1024, -1.0, 1.0, [](double x) { return std::pow(pos(x), 4.0 / 3.0); });
  const auto f = growth_fit(u, free_boundary(u), dyadic_radii(u.grid(), 1.0));
  EXPECT_NEAR(f.exponent, 4.0 / 3.0, 0.02);
  EXPECT_GT(f.r_squared, 0.99);
}

TEST(GrowthFit, ScalingMultipliesConstant) {
  const auto u = on_interval(512, -1.0, 1.0, [](double x) { return std::pow(pos(x), 1.5) + 0.3 * x * pos(x); });
  const auto fb = free_boundary(u);
  const auto radii = dyadic_radii(u.grid(), 1.0);
  const auto f = growth_fit(u, fb, radii);
  for (double t : {0.25, 3.0, 1e3}) {
    DiscreteFunction v = u;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] *= t;
    const auto ft = growth_fit(v, free_boundary(v), radii);
    EXPECT_NEAR(ft.exponent, f.exponent, 1e-12);
    EXPECT_NEAR(ft.constant, t * f.constant, 1e-12 * t * f.constant);
  }
}

TEST(GrowthFit, InsufficientScales) {
  const auto u = on_interval(16, -1.0, 1.0, pos);
  try {
    growth_fit(u, free_boundary(u), {0.5, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientScales);
  }
  // Radii below 4h and above R/2 are discarded.
  const auto v = on_interval(64, -1.0, 1.0, pos);
  const auto f = growth_fit(v, free_boundary(v), {0.01, 0.125, 0.25, 0.375, 0.5, 0.9});
  EXPECT_EQ(f.radii, (std::vector<double>{0.125, 0.25, 0.375, 0.5}));
}

TEST(GrowthFit, OnePhaseSolverOutput) {
  const double p = 2.0, gamma = 0.5, c = profile_constant(p, gamma, 1.0);
  ProblemSpec s;
  s.domain = Domain::interval(-1.0, 1.0);
  s.boundary = BoundaryData::endpoints(0.0, c);
  s.p = p;
  s.gamma = gamma;
  const SolveReport r = minimize(s, 512);
  ASSERT_TRUE(r.converged);
  const auto fb = free_boundary(r.u);
  const auto f = growth_fit(r.u, fb, dyadic_radii(r.u.grid(), 1.0));
  EXPECT_NEAR(f.exponent / growth_exponent(p, gamma), 1.0, 0.05);
}

// ---------------------------------------------------------------------------

TEST(Nondegeneracy, LinearGrowthGivesOne) {
  const auto u = on_interval(512, -1.0, 1.0, pos);
  const auto r = nondegeneracy_check(u, free_boundary(u), dyadic_radii(u.grid(), 1.0));
  EXPECT_NEAR(r.c_growth, 1.0, 1e-12);
  EXPECT_NEAR(r.c_sup, 1.0, 1e-12);
}

TEST(Nondegeneracy, QuadraticGrowthIsFlagged) {
  double prev = INFINITY;
  for (int n : {128, 512, 2048}) {
    const auto u = on_interval(n, -1.0, 1.0, [](double x) { return pos(x) * pos(x); });
    const auto r = nondegeneracy_check(u, free_boundary(u), dyadic_radii(u.grid(), 1.0));
    EXPECT_LT(r.c_growth, prev);
    EXPECT_LE(r.c_growth, 4.0 * u.grid().h() + 1e-12);
    prev = r.c_growth;
  }
}

TEST(Nondegeneracy, BrokenLineGivesPositiveSlope) {
  // Kink on a node, so the interpolated crossing is the kink itself.
  const Grid g = build_grid(Domain::interval(-1.0, 1.0), 512);
  const double a = 0.2265625, mp = 1.0 / (1.0 - a), mm = 1.0 / (1.0 + a);
  const auto u = broken_line(g, a, mm, mp);
  const auto r = nondegeneracy_check(u, free_boundary(u), dyadic_radii(g, 2.0));
  EXPECT_NEAR(r.c_growth, mp, 1e-9);
  EXPECT_NEAR(r.c_sup, mp, 1e-9);
  for (double c : r.growth_by_radius) EXPECT_NEAR(c, mp, 1e-9);
}

TEST(Nondegeneracy, EmptyPositivePhase) {
  const auto u = on_interval(64, -1.0, 1.0, [](double x) { return -1.0 - x * x; });
  try {
    nondegeneracy_check(u, free_boundary(u), dyadic_radii(u.grid(), 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoPositivePhase);
  }
}

TEST(Nondegeneracy, ThreadCountDoesNotChangeResult) {
  const Grid g = build_grid(Domain::rectangle(-1, 1, -1, 1), 64);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return std::max(0.0, std::hypot(x[0], x[1]) - 0.3); });
  const auto fb = free_boundary(u);
  const auto radii = dyadic_radii(g, 1.0);
  const auto a = nondegeneracy_check(u, fb, radii, 1);
  const auto b = nondegeneracy_check(u, fb, radii, 4);
  EXPECT_EQ(a.growth_by_radius, b.growth_by_radius);
  EXPECT_EQ(a.sup_by_radius, b.sup_by_radius);
}

// ---------------------------------------------------------------------------

TEST(Flux, BalanceExamples) {
  EXPECT_EQ(flux_balance(1, 0, 2, 1, 0), 0.0);
  EXPECT_EQ(flux_balance(2, 1, 2, 4, 1), 0.0);
  EXPECT_EQ(flux_balance(1, 1, 2, 2, 1), -1.0);
}

TEST(Flux, BrokenLineIn1D) {
  const Grid g = build_grid(Domain::interval(-1.0, 1.0), 100);
  for (double kink : {0.2, 0.2253}) {  // on a node and inside a cell
    const auto u = broken_line(g, kink, 0.5, 1.5);
    const auto fr = flux_residual(u, free_boundary(u), phases(3.0, 2.0, 0.5));
    ASSERT_EQ(fr.size(), 1u);
    EXPECT_FALSE(fr[0].skipped);
    EXPECT_NEAR(fr[0].slope_plus, 1.5, 1e-12);
    EXPECT_NEAR(fr[0].slope_minus, 0.5, 1e-12);
    EXPECT_NEAR(fr[0].residual, std::pow(1.5, 3) - std::pow(0.5, 3) - 1.5 / 2.0, 1e-12);
  }
}

TEST(Flux, AntisymmetricUnderPhaseSwap) {
  const Grid g = build_grid(Domain::interval(0, 1), 60);
  const auto u = random_function(g, 5, 0.2);
  DiscreteFunction v = u;
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = -v[k];
  const auto a = flux_residual(u, free_boundary(u), phases(2.5, 3.0, 1.0));
  const auto b = flux_residual(v, free_boundary(v), phases(2.5, 1.0, 3.0));
  ASSERT_EQ(a.size(), b.size());
  int compared = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_EQ(a[k].skipped, b[k].skipped);
    if (a[k].skipped) continue;
    // Zero nodes between equal neighbours have no preferred side.
    const auto& q = free_boundary(u).points[k];
    if (q.on_node() && u[q.a - 1] == u[q.a + 1]) continue;
    EXPECT_NEAR(a[k].residual, -b[k].residual, 1e-12);
    ++compared;
  }
  EXPECT_GT(compared, 5);
}

TEST(Flux, InterfaceAtDomainBoundaryIsSkipped) {
  const auto u = on_interval(20, 0.0, 1.0, [](double x) { return x; });
  const auto fr = flux_residual(u, free_boundary(u), phases(2, 1, 0));
  ASSERT_EQ(fr.size(), 1u);
  EXPECT_TRUE(fr[0].skipped);
}

TEST(Flux, PlanarInterfaceIn2D) {
  const Grid g = build_grid(Domain::rectangle(0, 1, 0, 1), 32);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) {
    const double d = x[0] - 0.41;
    return d > 0 ? 2.0 * d : 0.5 * d;
  });
  const auto fr = flux_residual(u, free_boundary(u), phases(2, 3, 1));
  int used = 0;
  for (const auto& f : fr) {
    if (f.skipped) continue;
    EXPECT_NEAR(f.slope_plus, 2.0, 1e-9);
    EXPECT_NEAR(f.slope_minus, 0.5, 1e-9);
    EXPECT_NEAR(f.residual, 4.0 - 0.25 - 2.0, 1e-9);
    ++used;
  }
  EXPECT_GT(used, 20);
}

// ---------------------------------------------------------------------------

TEST(Oscillation, C11Kink) {
  const auto u = on_interval(4096, -1.0, 1.0, [](double x) { return x * std::abs(x) / 2; });
  const auto radii = dyadic_radii(u.grid(), 1.0);
  const auto f = oscillation_decay_fit(u, {0.0, 0.0}, radii, 2.0);
  // Cell slopes of x|x|/2 are the cell midpoints (k + 1/2)h, k = 0..m-1 on each
  // side, whose variance over B_{mh} is h²(m² - 1)/12.
  std::vector<double> lx, ly;
  const double h = u.grid().h();
  for (double r : radii) {
    const double m = std::round(r / h);
    lx.push_back(std::log(r));
    ly.push_back(std::log(h * h * (m * m - 1) / 12));
  }
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) mx += lx[k] / lx.size(), my += ly[k] / ly.size();
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) sxy += (lx[k] - mx) * (ly[k] - my), sxx += (lx[k] - mx) * (lx[k] - mx);
  EXPECT_NEAR(f.fit.exponent, sxy / sxx, 1e-9);
  EXPECT_GE(f.alpha, 0.85);
  // The m² - 1 pollution at the 4h scale lifts the discrete fit just above 1.
  EXPECT_LE(f.alpha, 1.005);
  EXPECT_FALSE(f.bmo);
  EXPECT_NEAR(f.fit.exponent, 2.0 * f.alpha, 1e-12);
}

TEST(Oscillation, HolderGradient) {
  for (double s : {0.3, 0.5, 0.7}) {
    const Grid g = build_grid(Domain::interval(-1.0, 1.0), 4096);
    const auto u = DiscreteFunction::sample(g, [s](const Point& x) {
      return std::copysign(std::pow(std::abs(x[0]), 1 + s) / (1 + s), x[0]);
    });
    const auto f = oscillation_decay_fit(u, {0.0, 0.0}, dyadic_radii(g, 1.0), 2.0);
    EXPECT_NEAR(f.alpha, s, 0.05) << s;
  }
}

TEST(Oscillation, AffineIsDegenerate) {
  const auto u = on_interval(256, -1.0, 1.0, [](double x) { return 3.0 * x - 1.0; });
  const auto f = oscillation_decay_fit(u, {0.0, 0.0}, dyadic_radii(u.grid(), 1.0));
  EXPECT_TRUE(f.fit.degenerate);
  EXPECT_TRUE(std::isinf(f.fit.exponent));
}

TEST(Oscillation, AffineShiftInvariance) {
  const Grid g = build_grid(Domain::rectangle(-1, 1, -1, 1), 128);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return std::pow(std::hypot(x[0], x[1]), 1.6); });
  const auto v = DiscreteFunction::sample(g, [](const Point& x) {
    return std::pow(std::hypot(x[0], x[1]), 1.6) + 2.0 * x[0] - 0.5 * x[1] + 1.0;
  });
  const auto radii = dyadic_radii(g, 1.0);
  const auto a = oscillation_decay_fit(u, {0, 0}, radii, 3.0), b = oscillation_decay_fit(v, {0, 0}, radii, 3.0);
  EXPECT_NEAR(a.fit.exponent, b.fit.exponent, 1e-9);
  EXPECT_NEAR(a.alpha, 0.6, 0.1);
}

TEST(Oscillation, LogGradientIsBmo) {
  const auto u = on_interval(4096, -1.0, 1.0, [](double x) { return x == 0 ? 0.0 : x * std::log(std::abs(x)); });
  const auto f = oscillation_decay_fit(u, {0.0, 0.0}, dyadic_radii(u.grid(), 1.0));
  EXPECT_TRUE(f.bmo) << f.fit.exponent;
}

TEST(Oscillation, InsufficientScales) {
  const auto u = on_interval(64, -1.0, 1.0, [](double x) { return x * x; });
  try {
    oscillation_decay_fit(u, {0.8, 0.0}, dyadic_radii(u.grid(), 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientScales);
  }
}

// ---------------------------------------------------------------------------

TEST(Modulus, IdentityIsOneLipschitz) {
  const auto u = on_interval(100, -1.0, 1.0, [](double x) { return x; });
  EXPECT_NEAR(modulus_of_continuity(u, ModulusForm::kLipschitz).constant, 1.0, 1e-12);
  EXPECT_NEAR(modulus_of_continuity(u, ModulusForm::kHolder, 1.0).constant, 1.0, 1e-12);
}

TEST(Modulus, HalfSquareHasSlopeHalf) {
  const auto u = on_interval(256, -1.0, 1.0, [](double x) { return pos(x) * pos(x) / 4; });
  const auto m = modulus_of_continuity(u, ModulusForm::kLipschitz);
  // Largest chord slope of x²/4 on [1 - h, 1].
  const double h = u.grid().h();
  EXPECT_NEAR(m.constant, (1 - (1 - h) * (1 - h)) / (4 * h), 1e-12);
  EXPECT_NEAR(m.constant, 0.5, h);
}

TEST(Modulus, XLogXIsLogLipschitzNotLipschitz) {
  auto f = [](double x) { return x == 0 ? 0.0 : x * std::log(std::abs(x)); };
  const auto u1 = on_interval(1024, -1.0, 1.0, f), u4 = on_interval(4096, -1.0, 1.0, f);
  const auto ll = modulus_of_continuity(u4, ModulusForm::kLogLipschitz, 1.0, 4);
  EXPECT_NEAR(ll.constant, 1.0, 0.1);
  const double l1 = modulus_of_continuity(u1, ModulusForm::kLipschitz).constant;
  const double l4 = modulus_of_continuity(u4, ModulusForm::kLipschitz).constant;
  EXPECT_NEAR(l1, std::log(512.0), 1e-9);
  EXPECT_NEAR(l4, std::log(2048.0), 1e-9);
}

TEST(Modulus, LipschitzEqualsMaxSlopeIn1D) {
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto u = random_function(build_grid(Domain::interval(-2, 3), 77), seed, 0.1);
    const auto m = modulus_of_continuity(u, ModulusForm::kLipschitz);
    EXPECT_EQ(m.constant, m.max_slope);
    double brute = 0.0;  // every pair
    for (std::size_t i = 0; i < u.size(); ++i)
      for (std::size_t j = i + 1; j < u.size(); ++j)
        brute = std::max(brute, std::abs(u[j] - u[i]) / (u.grid().coords(j)[0] - u.grid().coords(i)[0]));
    EXPECT_NEAR(m.constant, brute, 1e-12 * brute);
  }
}

TEST(Modulus, TwoDimensionalBounds) {
  const Grid g = build_grid(Domain::rectangle(0, 1, 0, 1), 32);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return 3.0 * x[0] - 4.0 * x[1]; });
  EXPECT_NEAR(modulus_of_continuity(u, ModulusForm::kLipschitz).constant, 5.0, 1e-9);
  const auto h = modulus_of_continuity(u, ModulusForm::kHolder, 0.5, 3);
  EXPECT_GT(h.pairs, 0u);
  EXPECT_LE(h.constant, 5.0 * std::sqrt(2.0) + 1e-9);
  EXPECT_EQ(h.constant, modulus_of_continuity(u, ModulusForm::kHolder, 0.5, 1).constant);
}

// ---------------------------------------------------------------------------

TEST(Monotonicity, QuadraticIsExactlyOne) {
  const auto r = vector_monotonicity_probe(2.0, 10000, 7);
  EXPECT_EQ(r.min_ratio, 1.0);
}

TEST(Monotonicity, AntipodalPairAtP4) {
  EXPECT_NEAR(monotonicity_ratio({1, 0}, {-1, 0}, 4.0), 0.25, 1e-15);
  const auto r = vector_monotonicity_probe(4.0, 20000, 1);
  EXPECT_NEAR(r.min_ratio, 0.25, 1e-12);
}

TEST(Monotonicity, CubicRandomPairs) {
  const auto r = vector_monotonicity_probe(3.0, 100000, 42);
  EXPECT_GE(r.min_ratio, 0.5 * (1 - 1e-9));
  EXPECT_GT(r.pairs, 100000u);
}

TEST(Monotonicity, RejectsSubquadratic) {
  EXPECT_THROW(vector_monotonicity_probe(1.5, 10), Error);
}

// ---------------------------------------------------------------------------

TEST(Diagnose, BrokenLineReport) {
  const Grid g = build_grid(Domain::interval(-1.0, 1.0), 512);
  const double a = 0.2265625, mp = 1 / (1 - a), mm = 1 / (1 + a);
  const auto u = broken_line(g, a, mm, mp);
  const auto rep = diagnose(u, phases(2.0, 2.0, 1.0));
  ASSERT_EQ(rep.free_boundary.size(), 1u);
  ASSERT_TRUE(rep.growth.has_value());
  EXPECT_NEAR(rep.growth->exponent, 1.0, 0.01);
  ASSERT_TRUE(rep.nondegeneracy.has_value());
  EXPECT_NEAR(rep.nondegeneracy->c_sup, mp, 1e-9);
  EXPECT_NEAR(rep.max_flux_residual(), std::abs(mp * mp - mm * mm - 1.0), 1e-9);
  EXPECT_NEAR(rep.lipschitz.constant, mp, 1e-9);
  EXPECT_TRUE(rep.notes.empty());
}
