#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fblab/energy.hpp"

using namespace fblab;

namespace {

ProblemSpec unit_interval(double p, double gamma, double lp, double lm) {
  ProblemSpec s;
  s.p = p;
  s.gamma = gamma;
  s.lambda_plus = lp;
  s.lambda_minus = lm;
  s.domain = Domain::interval(0.0, 1.0);
  return s;
}

// Successive over-relaxation on the five-point stencil; the P1 stiffness
// matrix of the structured triangulation reduces to it on square cells.
std::vector<double> five_point_harmonic(const Grid& g, std::vector<double> u) {
  const std::size_t n = static_cast<std::size_t>(g.cells_per_axis());
  const double omega = 2.0 / (1.0 + std::sin(M_PI / n));
  for (int sweep = 0; sweep < 20000; ++sweep) {
    double change = 0.0;
    for (std::size_t j = 1; j < n; ++j)
      for (std::size_t i = 1; i < n; ++i) {
        const std::size_t k = g.index(i, j);
        const double avg =
            0.25 * (u[g.index(i - 1, j)] + u[g.index(i + 1, j)] + u[g.index(i, j - 1)] + u[g.index(i, j + 1)]);
        const double d = omega * (avg - u[k]);
        u[k] += d;
        change = std::max(change, std::abs(d));
      }
    if (change < 1e-15) break;
  }
  return u;
}

std::vector<std::size_t> all_nodes(const Grid& g) {
  std::vector<std::size_t> r(g.num_nodes());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = k;
  return r;
}

}  // namespace

TEST(TotalEnergy, Examples) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 16);
  const DiscreteFunction zero(g);
  EXPECT_EQ(total_energy(zero, unit_interval(2.0, 0.5, 1.0, 0.0)).total, 0.0);
  EXPECT_NEAR(total_energy(zero, unit_interval(2.0, 0.0, 2.0, 1.0)).total, 1.0, 1e-14);
  const auto x = DiscreteFunction::sample(g, [](const Point& pt) { return pt[0]; });
  const EnergyBreakdown b = total_energy(x, unit_interval(2.0, 1.0, 1.0, 0.0));
  EXPECT_NEAR(b.total, 1.5, 1e-14);
  EXPECT_NEAR(b.dirichlet, 1.0, 1e-14);
}

TEST(TotalEnergy, BreakdownSumsAndSigns) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  ProblemSpec s = unit_interval(3.0, 0.4, 2.0, 0.5);
  s.domain = Domain::rectangle(0.0, 1.0, 0.0, 1.0);
  s.source = SourceSpec::constant(0.7);
  s.boundary = BoundaryData::polynomial({0, 0, 0, 0, 0, 0});
  const Grid g = build_grid(s.domain, 10);
  for (int t = 0; t < 10; ++t) {
    const auto u = DiscreteFunction::sample(g, [&](const Point&) { return d(rng); });
    const EnergyBreakdown b = total_energy(u, s);
    EXPECT_EQ(b.total, b.dirichlet + b.potential + b.source);
    EXPECT_GE(b.dirichlet, 0.0);
    EXPECT_GE(b.potential, 0.0);
  }
}

TEST(TotalEnergy, RejectsGridMismatch) {
  const Grid g = build_grid(Domain::interval(0.0, 2.0), 4);
  try {
    total_energy(DiscreteFunction(g), unit_interval(2.0, 1.0, 1.0, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(EnergyGradient, ZeroAtZeroAndOnBoundary) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 8);
  const DiscreteFunction grad = energy_gradient(DiscreteFunction(g), unit_interval(2.0, 1.0, 1.0, 0.0), 0.0);
  for (std::size_t k = 0; k < grad.size(); ++k) EXPECT_EQ(grad[k], 0.0);

  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return 1.0 + x[0] * x[0]; });
  const DiscreteFunction g2 = energy_gradient(u, unit_interval(3.0, 0.5, 1.0, 0.0), 1e-3);
  EXPECT_EQ(g2[0], 0.0);
  EXPECT_EQ(g2[8], 0.0);
}

TEST(EnergyGradient, RejectsGammaZero) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 4);
  try {
    energy_gradient(DiscreteFunction(g), unit_interval(2.0, 0.0, 1.0, 0.0), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedGamma);
  }
}

TEST(EnergyGradient, MatchesCentredDifferences) {
  // Smooth functions bounded away from zero; eps = 0 so the gradient is of the true energy.
  for (double p : {2.0, 3.0, 4.5}) {
    for (int dim : {1, 2}) {
      ProblemSpec s = unit_interval(p, 0.5, 1.5, 0.3);
      s.source = SourceSpec::constant(-0.4);
      if (dim == 2) {
        s.domain = Domain::rectangle(0.0, 1.0, 0.0, 1.0);
        s.boundary = BoundaryData::polynomial({1, 0, 0, 0, 0, 0});
      }
      const Grid g = build_grid(s.domain, 8);
      const auto u = DiscreteFunction::sample(
          g, [](const Point& x) { return 1.0 + 0.5 * std::sin(3 * x[0]) + 0.3 * x[1] * x[1]; });
      const EnergyModel model(s, g);
      std::vector<double> grad(g.num_nodes());
      model.gradient(u.values(), 0.0, grad);
      std::vector<double> v(u.values().begin(), u.values().end());
      for (std::size_t k = 0; k < g.num_nodes(); ++k) {
        if (g.is_boundary(k)) continue;
        const double t = 1e-6;
        v[k] = u[k] + t;
        const double ep = model.total(v);
        v[k] = u[k] - t;
        const double em = model.total(v);
        v[k] = u[k];
        const double fd = (ep - em) / (2 * t);
        EXPECT_NEAR(grad[k], fd, 1e-3 * std::max(std::abs(fd), 1e-3)) << "p=" << p << " node " << k;
      }
    }
  }
}

TEST(EnergyGradient, DirectionalDerivative) {
  ProblemSpec s = unit_interval(2.0, 0.75, 1.0, 0.5);
  const Grid g = build_grid(s.domain, 32);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return 2.0 + x[0]; });
  const auto delta = DiscreteFunction::sample(g, [&](const Point& x) {
    return (x[0] > 0.0 && x[0] < 1.0) ? std::cos(5 * x[0]) : 0.0;
  });
  const EnergyModel model(s, g);
  std::vector<double> grad(g.num_nodes());
  model.gradient(u.values(), 0.0, grad);
  double dir = 0.0;
  for (std::size_t k = 0; k < grad.size(); ++k) dir += grad[k] * delta[k];
  std::vector<double> v(u.values().begin(), u.values().end());
  const double t = 1e-6;
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += t * delta[k];
  EXPECT_NEAR((model.total(v) - model.total(u.values())) / t, dir, 1e-4);
}

TEST(LocalEnergy, DifferencesMatchTotalEnergy) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  ProblemSpec s = unit_interval(3.0, 0.3, 2.0, 1.0);
  s.domain = Domain::rectangle(0.0, 1.0, 0.0, 1.0);
  s.boundary = BoundaryData::polynomial({0, 0, 0, 0, 0, 0});
  s.source = SourceSpec::constant(0.25);
  const Grid g = build_grid(s.domain, 6);
  const EnergyModel model(s, g);
  std::vector<double> u(g.num_nodes());
  for (double& v : u) v = d(rng);
  for (std::size_t k = 0; k < g.num_nodes(); ++k) {
    const LocalEnergy le = model.local(u, k, s.gamma);
    const double a = u[k], b = d(rng);
    std::vector<double> w = u;
    w[k] = b;
    EXPECT_NEAR(le(b) - le(a), model.total(w) - model.total(u), 1e-12);
  }
}

TEST(PdeResidual, LinearIsPHarmonic) {
  for (double p : {2.0, 3.0}) {
    ProblemSpec s = unit_interval(p, 0.0, 2.0, 1.0);
    s.domain = Domain::interval(-1.0, 1.0);
    const Grid g = build_grid(s.domain, 40);
    const auto u = DiscreteFunction::sample(g, [](const Point& x) { return 2.0 * x[0] + 0.1; });
    const PdeResidual r = pde_residual(u, s);
    EXPECT_GT(r.count, 30u);
    EXPECT_LT(r.max_abs, 1e-10);
  }
}

TEST(PdeResidual, ConstantOneHasResidualMinusHalf) {
  const ProblemSpec s = unit_interval(2.0, 1.0, 1.0, 0.0);
  const Grid g = build_grid(s.domain, 10);
  const auto u = DiscreteFunction::sample(g, [](const Point&) { return 1.0; });
  const PdeResidual r = pde_residual(u, s);
  ASSERT_EQ(r.count, 9u);
  for (std::size_t k = 1; k < 10; ++k) EXPECT_NEAR(r.value[k], -0.5, 1e-14);
}

TEST(PdeResidual, QuadraticProfileIsConsistent) {
  const ProblemSpec s = unit_interval(2.0, 1.0, 1.0, 0.0);
  const Grid g = build_grid(s.domain, 1024);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return x[0] * x[0] / 4.0; });
  const PdeResidual r = pde_residual(u, s);
  EXPECT_GT(r.count, 900u);
  EXPECT_LE(r.max_abs, 1e-2);
}

TEST(PdeResidual, ExcludesBandAroundZero) {
  const ProblemSpec s = unit_interval(2.0, 0.5, 1.0, 0.0);
  const Grid g = build_grid(s.domain, 10);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return x[0] - 0.5; });
  const PdeResidual r = pde_residual(u, s, 0.15);
  for (std::size_t k = 0; k < g.num_nodes(); ++k)
    if (std::abs(u[k]) <= 0.15) EXPECT_FALSE(r.included[k]);
}

TEST(Replacement, LinearIsFixed) {
  for (double p : {2.0, 3.0, 5.0}) {
    const Grid g = build_grid(Domain::interval(0.0, 1.0), 20);
    const auto u = DiscreteFunction::sample(g, [](const Point& x) { return 3.0 * x[0] - 1.0; });
    const std::vector<std::size_t> region{5, 6, 7, 8, 9, 10, 11, 12};
    const DiscreteFunction h = p_harmonic_replacement(u, region, p);
    for (std::size_t k = 0; k < u.size(); ++k) EXPECT_NEAR(h[k], u[k], 1e-12);
  }
}

TEST(Replacement, OneDimensionalIsAffineInterpolant) {
  for (double p : {2.0, 3.0, 4.0}) {
    const Grid g = build_grid(Domain::interval(0.0, 1.0), 20);
    const auto u = DiscreteFunction::sample(g, [](const Point& x) { return std::sin(7 * x[0]) + x[0] * x[0]; });
    std::vector<std::size_t> region;
    for (std::size_t k = 3; k <= 15; ++k) region.push_back(k);
    const DiscreteFunction h = p_harmonic_replacement(u, region, p);
    // Region nodes are free; the nearest outside nodes 2 and 16 pin the ends.
    for (std::size_t k = 2; k <= 16; ++k) {
      const double t = (k - 2.0) / 14.0;
      EXPECT_NEAR(h[k], u[2] + t * (u[16] - u[2]), 1e-9) << "p=" << p;
    }
  }
}

TEST(Replacement, TwoDimensionalMatchesFivePointSolve) {
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 16);
  const auto phi = DiscreteFunction::sample(g, [](const Point& x) { return x[0] * x[0] - x[1] * x[1]; });
  const DiscreteFunction h = p_harmonic_replacement(phi, all_nodes(g), 2.0);
  for (std::size_t k = 0; k < h.size(); ++k) EXPECT_NEAR(h[k], phi[k], 1e-6);

  const auto psi = DiscreteFunction::sample(g, [](const Point& x) { return std::exp(x[0]) * std::cos(2 * x[1]) + x[0] * x[1] * x[1]; });
  std::vector<double> start(psi.values().begin(), psi.values().end());
  const std::vector<double> oracle = five_point_harmonic(g, start);
  const DiscreteFunction h2 = p_harmonic_replacement(psi, all_nodes(g), 2.0);
  for (std::size_t k = 0; k < h2.size(); ++k) EXPECT_NEAR(h2[k], oracle[k], 1e-6);
}

TEST(Replacement, NeverIncreasesDirichletEnergy) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (double p : {2.0, 3.0, 4.0}) {
    const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 8);
    const auto u = DiscreteFunction::sample(g, [&](const Point&) { return d(rng); });
    const auto region = ball_nodes(g, {0.5, 0.5}, 0.3);
    const DiscreteFunction h = p_harmonic_replacement(u, region, p);
    const auto free = region_mask(g, region);
    EXPECT_LE(region_dirichlet(h, free, p), region_dirichlet(u, free, p));
  }
}

TEST(Replacement, RejectsRegionWithoutInterior) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 4);
  const std::vector<std::size_t> region{0};
  EXPECT_THROW(p_harmonic_replacement(DiscreteFunction(g), region, 2.0), Error);
}

TEST(DirichletGap, PHarmonicInputHasNoGap) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 16);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return 2.0 * x[0]; });
  const DirichletGap gap = dirichlet_gap(u, all_nodes(g), 3.0);
  EXPECT_NEAR(gap.lhs, 0.0, 1e-12);
  EXPECT_NEAR(gap.rhs, 0.0, 1e-12);
}

TEST(DirichletGap, SpikeGivesPositiveGap) {
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 8);
  for (double p : {2.0, 3.0}) {
    auto psi = DiscreteFunction::sample(g, [](const Point& x) { return x[0] + x[1]; });
    psi[g.index(4, 4)] += 0.5;
    const DirichletGap gap = dirichlet_gap(psi, all_nodes(g), p);
    EXPECT_GT(gap.lhs, 0.0);
    EXPECT_GT(gap.rhs, 0.0);
    EXPECT_GT(gap.lhs / gap.rhs, 0.0);
  }
}

TEST(DirichletGap, RandomPsiProperties) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int dim : {1, 2}) {
    const Domain dom = dim == 1 ? Domain::interval(0.0, 1.0) : Domain::rectangle(0.0, 1.0, 0.0, 1.0);
    const Grid g = build_grid(dom, dim == 1 ? 24 : 8);
    for (double p : {2.0, 3.0, 4.0}) {
      for (int t = 0; t < 5; ++t) {
        const auto psi = DiscreteFunction::sample(g, [&](const Point&) { return d(rng); });
        const DirichletGap gap = dirichlet_gap(psi, all_nodes(g), p);
        EXPECT_GE(gap.lhs, 0.0);
        if (p == 2.0) EXPECT_NEAR(gap.lhs, gap.rhs, 1e-10 * std::max(1.0, gap.rhs));
        EXPECT_GE(gap.lhs, std::pow(2.0, 2.0 - p) * gap.rhs * (1 - 1e-9));
      }
    }
  }
}
