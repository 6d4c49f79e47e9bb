#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fblab/solver.hpp"

using namespace fblab;

namespace {

ProblemSpec interval_spec(double a, double b, double pa, double pb, double p, double gamma, double lp,
                          double lm) {
  ProblemSpec s;
  s.domain = Domain::interval(a, b);
  s.boundary = BoundaryData::endpoints(pa, pb);
  s.p = p;
  s.gamma = gamma;
  s.lambda_plus = lp;
  s.lambda_minus = lm;
  return s;
}

double relative_sup_error(const DiscreteFunction& u, double (*exact)(double)) {
  double err = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double e = exact(u.grid().coords(k)[0]);
    err = std::max(err, std::abs(u[k] - e));
    ref = std::max(ref, std::abs(e));
  }
  return err / ref;
}

// Linear interpolation of the first sign change from <= 0 to > 0.
double zero_crossing_1d(const DiscreteFunction& u) {
  for (std::size_t k = 0; k + 1 < u.size(); ++k)
    if (u[k] <= 0.0 && u[k + 1] > 0.0) {
      const double x0 = u.grid().coords(k)[0], x1 = u.grid().coords(k + 1)[0];
      return x0 + (x1 - x0) * (-u[k]) / (u[k + 1] - u[k]);
    }
  return NAN;
}

// Kink of the broken line through (-1,-1), (a,0), (1,1) minimizing
// int u'^2 + lp |{u>0}| + lm |{u<=0}|: 1/(1-a)^2 - 1/(1+a)^2 = lp - lm.
double jet_kink(double lp, double lm) {
  double lo = -0.999, hi = 0.999;
  for (int i = 0; i < 200; ++i) {
    const double a = 0.5 * (lo + hi);
    const double g = 1.0 / ((1 - a) * (1 - a)) - 1.0 / ((1 + a) * (1 + a)) - (lp - lm);
    (g > 0 ? hi : lo) = a;
  }
  return 0.5 * (lo + hi);
}

void expect_monotone(const std::vector<TraceEntry>& trace) {
  for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k].energy, trace[k - 1].energy) << "entry " << k;
}

void expect_pinned(const DiscreteFunction& u, const ProblemSpec& s) {
  const DiscreteFunction phi = boundary_trace(s, u.grid());
  for (std::size_t k = 0; k < u.size(); ++k)
    if (u.grid().is_boundary(k)) EXPECT_EQ(u[k], phi[k]) << "node " << k;
}

}  // namespace

TEST(Minimize, ZeroDataGivesZero) {
  ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 0.0, 2.0, 0.5, 1.0, 0.0);
  const SolveReport r = minimize(s, 64);
  for (std::size_t k = 0; k < r.u.size(); ++k) EXPECT_EQ(r.u[k], 0.0);
  EXPECT_EQ(r.energy.total, 0.0);

  s.domain = Domain::rectangle(0.0, 1.0, 0.0, 1.0);
  s.boundary = BoundaryData::polynomial({});
  const SolveReport r2 = minimize(s, 16);
  EXPECT_EQ(r2.u.sup_norm(), 0.0);
  EXPECT_EQ(r2.energy.total, 0.0);
}

TEST(Minimize, ObstacleProfile) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, 0.0, 0.25, 2.0, 1.0, 1.0, 0.0);
  const SolveReport r = minimize(s, 256);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(relative_sup_error(r.u, [](double x) { return x > 0 ? 0.25 * x * x : 0.0; }), 0.02);
}

TEST(Minimize, PositiveSolutionWithoutFreeBoundary) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 1.0, 0.0);
  const SolveReport r = minimize(s, 128);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(relative_sup_error(r.u, [](double x) { return 0.25 * x * x + 0.75 * x; }), 0.02);
}

TEST(Minimize, OnePhaseProfileBelowOne) {
  for (double p : {2.0, 3.0})
    for (double gamma : {0.5, 0.75}) {
      const double c = profile_constant(p, gamma, 1.0), beta = growth_exponent(p, gamma);
      const ProblemSpec s = interval_spec(-1.0, 1.0, 0.0, c, p, gamma, 1.0, 0.0);
      const SolveReport r = minimize(s, 128);
      EXPECT_TRUE(r.converged) << p << " " << gamma;
      double err = 0.0;
      for (std::size_t k = 0; k < r.u.size(); ++k) {
        const double x = r.u.grid().coords(k)[0];
        err = std::max(err, std::abs(r.u[k] - (x > 0 ? c * std::pow(x, beta) : 0.0)));
      }
      EXPECT_LT(err / c, 0.02) << p << " " << gamma;
    }
}

TEST(Minimize, RejectsGammaZeroAndBadInit) {
  ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 0.0);
  try {
    minimize(s, 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedGamma);
  }
  s.gamma = 0.5;
  const Grid g = build_grid(s.domain, 16);
  const DiscreteFunction wrong = DiscreteFunction::sample(g, [](const Point& x) { return x[0] + 0.1; });
  try {
    minimize(s, g, {}, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidSpec);
  }
}

TEST(Minimize, IterationLimitIsReportedNotThrown) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, 0.0, 0.5, 3.0, 0.5, 1.0, 0.0);
  SolverParams prm;
  prm.max_iter = 1;
  prm.coarsest = 0;
  prm.polish_rounds = 0;
  const SolveReport r = minimize(s, 256, prm);
  EXPECT_FALSE(r.converged);
  EXPECT_LE(r.energy.total, r.initial_energy);
}

TEST(Minimize, InvariantsOnRandomInstances) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> bd(-1.0, 1.0), gm(0.2, 1.0), pp(2.0, 4.0), lm(0.0, 0.9);
  for (int t = 0; t < 12; ++t) {
    ProblemSpec s = interval_spec(0.0, 1.0, bd(rng), bd(rng), pp(rng), gm(rng), 1.0, lm(rng));
    if (t % 3 == 2) {
      s.domain = Domain::rectangle(0.0, 1.0, 0.0, 1.0);
      s.boundary = BoundaryData::polynomial({bd(rng), bd(rng), bd(rng), bd(rng), 0.0, bd(rng)});
    }
    if (t % 4 == 1) s.source = SourceSpec::constant(bd(rng));
    const Grid g = build_grid(s.domain, s.domain.dim() == 1 ? 64 : 12);
    const DiscreteFunction phi = boundary_trace(s, g);
    DiscreteFunction init = default_init(s, g);
    for (std::size_t k = 0; k < init.size(); ++k)
      if (!g.is_boundary(k)) init[k] += 0.3 * bd(rng);
    const SolveReport r = minimize(s, g, {}, init);
    expect_monotone(r.trace);
    expect_pinned(r.u, s);
    EXPECT_LE(r.energy.total, total_energy(init, s).total);
    EXPECT_TRUE(std::isfinite(r.sup_norm));
  }
}

TEST(Minimize, SupNormBoundedByBoundaryWithoutSource) {
  // Truncating at sup|phi| lowers every term when f = 0.
  for (double gamma : {0.3, 1.0}) {
    const ProblemSpec s = interval_spec(-1.0, 1.0, -0.7, 0.4, 2.5, gamma, 1.0, 0.4);
    const SolveReport r = minimize(s, 128);
    EXPECT_LE(r.sup_norm, 0.7);
  }
}

TEST(Minimize, IsDeterministic) {
  ProblemSpec s = interval_spec(-1.0, 1.0, 0.0, 0.3, 3.0, 0.5, 1.0, 0.2);
  s.source = SourceSpec::constant(-0.3);
  const SolveReport a = minimize(s, 128);
  const SolveReport b = minimize(s, 128);
  for (std::size_t k = 0; k < a.u.size(); ++k) EXPECT_EQ(a.u[k], b.u[k]);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].energy, b.trace[k].energy);
}

TEST(Minimize, ScaledGradientIsMonotone) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 3.0, 0.5, 1.0, 0.0);
  SolverParams prm;
  prm.method = SolverParams::Method::kScaledGradient;
  prm.max_iter = 200;
  const SolveReport r = minimize(s, 32, prm);
  expect_monotone(r.trace);
  EXPECT_LE(r.energy.total, r.initial_energy);
}

TEST(SolverParams, Validation) {
  SolverParams p;
  EXPECT_NO_THROW(p.validate());
  p.step_shrink = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = SolverParams{};
  p.tol_grad = 0.0;
  EXPECT_THROW(p.validate(), Error);
  p = SolverParams{};
  p.armijo = 0.0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(EpsilonSchedule, GeometricDownToFloor) {
  SolverParams p;
  const std::vector<double> e = epsilon_schedule(p, 2.0);
  ASSERT_GE(e.size(), 2u);
  EXPECT_DOUBLE_EQ(e.front(), 2e-2);
  EXPECT_EQ(e.back(), p.eps_min);
  for (std::size_t k = 1; k + 1 < e.size(); ++k) EXPECT_NEAR(e[k], e[k - 1] * 0.1, 1e-12 * e[k - 1]);
}

TEST(ContinuationSchedule, Validation) {
  ContinuationSchedule c;
  EXPECT_NO_THROW(c.validate());
  c.gammas = {0.5, 0.1};
  EXPECT_THROW(c.validate(), Error);
  c.gammas = {0.1, 0.5, 0.0};
  EXPECT_THROW(c.validate(), Error);
}

TEST(Continuation, NearlyEqualPhasesGiveAffineLimit) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, -1.0, 2.0, 2.0, 0.0, 1.0, 1.0 - 1e-6);
  const ContinuationReport r = continuation(s, build_grid(s.domain, 128));
  ASSERT_FALSE(r.failure.has_value());
  EXPECT_LT(relative_sup_error(r.final_report.u, [](double x) { return 0.5 + 1.5 * x; }), 1e-3);
}

TEST(Continuation, TwoPhaseJetKink) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, -1.0, 1.0, 2.0, 0.0, 2.0, 1.0);
  const Grid g = build_grid(s.domain, 256);
  const ContinuationReport r = continuation(s, g);
  ASSERT_FALSE(r.failure.has_value());
  const double a = jet_kink(2.0, 1.0);
  EXPECT_NEAR(4 * a, (1 - a * a) * (1 - a * a), 1e-12);
  EXPECT_NEAR(zero_crossing_1d(r.final_report.u), a, g.h());
}

TEST(Continuation, SymmetricDataKinkNearZero) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, -1.0, 1.0, 2.0, 0.0, 1.0 + 1e-3, 1.0);
  const Grid g = build_grid(s.domain, 128);
  const ContinuationReport r = continuation(s, g);
  ASSERT_FALSE(r.failure.has_value());
  EXPECT_NEAR(zero_crossing_1d(r.final_report.u), 0.0, g.h());
}

TEST(Continuation, WarmStartDominanceAndMonotoneTraces) {
  ProblemSpec s = interval_spec(-1.0, 1.0, -0.5, 1.0, 3.0, 0.0, 1.5, 0.5);
  s.source = SourceSpec::constant(0.2);
  const ContinuationReport r = continuation(s, build_grid(s.domain, 64));
  ASSERT_FALSE(r.failure.has_value());
  ASSERT_EQ(r.stages.size(), 6u);
  for (std::size_t k = 1; k < r.stages.size(); ++k) EXPECT_LE(r.stages[k].energy, r.stages[k].start_energy);
  expect_monotone(r.final_report.trace);
  expect_pinned(r.final_report.u, s);
  EXPECT_EQ(r.stages.back().gamma, 0.0);
  EXPECT_EQ(r.stages.back().j0, r.final_report.energy.total);
}

TEST(Continuation, RequiresGammaZeroTarget) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 0.5, 1.0, 0.0);
  EXPECT_THROW(continuation(s, build_grid(s.domain, 16)), Error);
}

TEST(TruncationAudit, IdentityBelowLevel) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 0.5, 1.0, 0.0);
  const Grid g = build_grid(s.domain, 32);
  const DiscreteFunction u = DiscreteFunction::sample(g, [](const Point& x) { return x[0] * x[0]; });
  const TruncationAudit a = truncation_audit(u, s, 1.0);
  EXPECT_EQ(a.energy, a.truncated_energy);
}

TEST(TruncationAudit, SpikeAboveLevelIsCut) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 1.0, 0.0);
  const Grid g = build_grid(s.domain, 32);
  DiscreteFunction u = DiscreteFunction::sample(g, [](const Point& x) { return x[0]; });
  u[16] = 2.0;
  const TruncationAudit a = truncation_audit(u, s, 1.0);
  EXPECT_LT(a.truncated_energy, a.energy);
  EXPECT_FALSE(local_minimality_check(u, s, 0, 0.0).pass);
}

TEST(TruncationAudit, ConvergedMinimizerPasses) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, -0.3, 1.0, 3.0, 0.5, 1.0, 0.2);
  const SolveReport r = minimize(s, 128);
  EXPECT_TRUE(truncation_audit(r.u, s, 2.0).pass(1e-10));
}

TEST(TruncationAudit, RejectsLowLevel) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 1.0, 0.0);
  const Grid g = build_grid(s.domain, 8);
  try {
    truncation_audit(DiscreteFunction(g), s, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidLevel);
  }
}

TEST(LocalMinimality, ConvexMinimizerPasses) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 1.0, 0.0);
  const SolveReport r = minimize(s, 64);
  const MinimalityCheck c = local_minimality_check(r.u, s, 200, 1e-3, 3);
  EXPECT_TRUE(c.pass) << c.worst_violation;
}

TEST(LocalMinimality, SpikeFails) {
  const ProblemSpec s = interval_spec(0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 1.0, 0.0);
  const SolveReport r = minimize(s, 64);
  DiscreteFunction u = r.u;
  u[20] += 0.5;
  const MinimalityCheck c = local_minimality_check(u, s, 2000, 0.1, 3);
  EXPECT_FALSE(c.pass);
  EXPECT_GT(c.worst_violation, 0.0);
}

TEST(LocalMinimality, ContinuationOutputPassesAtGridScale) {
  const ProblemSpec s = interval_spec(-1.0, 1.0, -1.0, 1.0, 2.0, 0.0, 2.0, 1.0);
  const Grid g = build_grid(s.domain, 128);
  const ContinuationReport r = continuation(s, g);
  ASSERT_FALSE(r.failure.has_value());
  const MinimalityCheck c = local_minimality_check(r.final_report.u, s, 500, g.h() * g.h(), 5);
  EXPECT_TRUE(c.pass) << c.worst_violation << " tol " << c.tolerance;
}
