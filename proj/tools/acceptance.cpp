// Runs every acceptance criterion at its stated tolerance and prints one
// pass/fail line per criterion, with the clauses indented below it.
// Exit status is 1 if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fblab/cli.hpp"
#include "fblab/diagnostics.hpp"
#include "fblab/energy.hpp"
#include "fblab/oracle.hpp"
#include "fblab/solver.hpp"

using namespace fblab;

namespace {

struct Clause {
  std::string text;
  bool pass;
};

struct Criterion {
  int id;
  std::string title;
  std::vector<Clause> clauses;
  double seconds = 0.0;
  double budget = 0.0;

  void add(bool pass, const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    clauses.push_back({buf, pass});
  }
  bool pass() const {
    for (const auto& c : clauses)
      if (!c.pass) return false;
    return budget <= 0.0 || seconds <= budget;
  }
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ProblemSpec interval(double left, double right, double p, double gamma, double lp, double lm) {
  ProblemSpec s;
  s.domain = Domain::interval(-1.0, 1.0);
  s.boundary = BoundaryData::endpoints(left, right);
  s.p = p;
  s.gamma = gamma;
  s.lambda_plus = lp;
  s.lambda_minus = lm;
  return s;
}

ProblemSpec jet_spec() { return interval(-1.0, 1.0, 2.0, 0.0, 2.0, 1.0); }

// Radii with no admissible interface point carry NaN and are skipped.
double rel_spread(const std::vector<double>& v) {
  double lo = INFINITY, hi = -INFINITY;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  return (hi - lo) / hi;
}

// Property (d) and (e) bookkeeping shared across criteria 1-3.
struct Audits {
  int solves = 0, monotone = 0, converged = 0, truncation_ok = 0;

  void record(const SolveReport& r, const ProblemSpec& spec) {
    ++solves;
    monotone += trace_monotone(r.trace) ? 1 : 0;
    if (!r.converged) return;
    ++converged;
    const auto a = truncation_audit(r.u, spec, boundary_sup(spec, r.u.grid()));
    truncation_ok += a.pass(1e-8 * std::abs(a.energy) + 1e-14) ? 1 : 0;
  }
  void record(const StageSummary& s) {
    ++solves;
    monotone += s.trace_monotone ? 1 : 0;
    if (!s.converged) return;
    ++converged;
    truncation_ok += s.truncated_energy >= s.energy - (1e-8 * std::abs(s.energy) + 1e-14) ? 1 : 0;
  }
};

// ---------------------------------------------------------------------------

Criterion alt_phillips(Audits& audits) {
  Criterion c{1, "one-phase power profiles at N=2048", {}, 0.0, 0.0};
  const int n = 2048;
  for (double p : {2.0, 3.0})
    for (double gamma : {0.25, 0.5, 0.75, 1.0}) {
      const auto t0 = Clock::now();
      const double cst = profile_constant(p, gamma, 1.0);
      const ProblemSpec s = interval(0.0, cst, p, gamma, 1.0, 0.0);
      const SolveReport r = minimize(s, n);
      const double secs = since(t0);
      audits.record(r, s);
      const auto ref = alt_phillips_profile(p, gamma, 1.0, 0.0, r.u.grid());
      double err = 0.0;
      for (std::size_t k = 0; k < r.u.size(); ++k) err = std::max(err, std::abs(r.u[k] - ref.u[k]));
      err /= ref.u.sup_norm();
      const auto fit = growth_fit(r.u, free_boundary(r.u), dyadic_radii(r.u.grid(), 2.0));
      const double beta = growth_exponent(p, gamma);
      const double rel = std::abs(fit.exponent / beta - 1.0);
      c.add(r.converged && err <= 0.02 && rel <= 0.05 && fit.r_squared >= 0.99 && secs <= 30.0,
            "p=%g gamma=%-4g sup error %.4f (<= 0.02), exponent %.4f vs %.4f rel %.4f (<= 0.05), r2 %.6f "
            "(>= 0.99), %.1f s (<= 30)",
            p, gamma, err, fit.exponent, beta, rel, fit.r_squared, secs);
    }
  return c;
}

Criterion obstacle(Audits& audits) {
  Criterion c{2, "obstacle limit: oscillation exponent", {}, 0.0, 0.0};
  const ProblemSpec s = interval(0.0, 0.25, 2.0, 1.0, 1.0, 0.0);
  const SolveReport r = minimize(s, 1024);
  audits.record(r, s);
  const RegularityReport reg = diagnose(r.u, s);
  const bool have = reg.oscillation.has_value();
  const double a = have ? reg.oscillation->alpha : NAN, r2 = have ? reg.oscillation->fit.r_squared : NAN;
  c.add(have && a >= 0.85, "alpha %.4f (>= 0.85) at N=1024", a);
  c.add(have && r2 >= 0.95, "r2 %.6f (>= 0.95)", r2);
  return c;
}

struct JetRuns {
  std::optional<ContinuationReport> n512, n1024, n2048;
};

Criterion jet(Audits& audits, JetRuns& runs) {
  Criterion c{3, "two-phase jet via continuation", {}, 0.0, 120.0};
  const ProblemSpec s = jet_spec();
  const auto t0 = Clock::now();
  runs.n1024 = continuation(s, build_grid(s.domain, 1024));
  const double t1024 = since(t0);
  const auto& rep = *runs.n1024;
  for (const auto& st : rep.stages) audits.record(st);
  const auto oracle = two_phase_jet_1d(s, 1024);
  const double a = oracle.parameter("a"), h = 2.0 / 1024;

  const RegularityReport reg = diagnose(rep.final_report.u, s);
  double kink = INFINITY;
  for (const auto& q : reg.free_boundary.points) kink = std::min(kink, std::abs(q.x[0] - a));
  c.add(!rep.failure && kink <= h, "kink distance %.3g cells (<= 1) from a = %.6f", kink / h, a);
  bool any = false;
  for (const auto& f : reg.flux) any = any || !f.skipped;
  const double jump = (s.lambda_plus - s.lambda_minus) / (s.p - 1.0);
  c.add(any && reg.max_flux_residual() <= 0.05 * jump, "flux residual %.4g (<= %.4g)", reg.max_flux_residual(),
        0.05 * jump);

  const std::size_t m = rep.stages.size();
  std::string js;
  bool within = m >= 3;
  for (std::size_t k = m >= 3 ? m - 3 : 0; k < m; ++k) {
    const double rel = std::abs(rep.stages[k].j0 / oracle.energy - 1.0);
    within = within && rel <= 0.01;
    char b[96];
    std::snprintf(b, sizeof b, "%s gamma=%g: %.5f (%.2f%%)", js.empty() ? "" : ",", rep.stages[k].gamma,
                  rep.stages[k].j0, 100 * rel);
    js += b;
  }
  c.add(within, "J0 of final three stages within 1%% of %.5f:%s", oracle.energy, js.c_str());

  const auto t2 = Clock::now();
  runs.n2048 = continuation(s, build_grid(s.domain, 2048));
  const double t2048 = since(t2);
  for (const auto& st : runs.n2048->stages) audits.record(st);
  const double l1 = modulus_of_continuity(rep.final_report.u, ModulusForm::kLipschitz).constant;
  const double l2 = modulus_of_continuity(runs.n2048->final_report.u, ModulusForm::kLipschitz).constant;
  c.add(std::abs(l2 / l1 - 1.0) <= 0.10, "Lipschitz %.5f at N=1024, %.5f at N=2048, change %.2f%% (<= 10%%)", l1,
        l2, 100 * std::abs(l2 / l1 - 1.0));
  c.seconds = t1024 + t2048;
  c.add(c.seconds <= c.budget, "runtime %.1f s (N=1024) + %.1f s (N=2048) (<= 120 s)", t1024, t2048);
  return c;
}

Criterion nondegeneracy(JetRuns& runs) {
  Criterion c{4, "nondegeneracy on the jet", {}, 0.0, 0.0};
  const ProblemSpec s = jet_spec();
  runs.n512 = continuation(s, build_grid(s.domain, 512));
  const auto oracle = two_phase_jet_1d(s, 1024);
  const double slope = jet_slope(s.p, s.lambda_plus, s.lambda_minus, oracle.parameter("m_minus"));
  std::vector<NondegeneracyResult> res;
  for (const auto* r : {&*runs.n512, &*runs.n1024}) {
    const DiscreteFunction& u = r->final_report.u;
    const auto fb = free_boundary(u);
    res.push_back(nondegeneracy_check(u, fb, dyadic_radii(u.grid(), 2.0)));
  }
  const int ns[] = {512, 1024};
  for (int k = 0; k < 2; ++k) {
    const auto& r = res[k];
    c.add(r.c_growth >= 0.5 * slope && r.c_sup >= 0.5 * slope,
          "N=%d: c_growth %.4f, c_sup %.4f (>= 0.5 * jet slope %.4f = %.4f)", ns[k], r.c_growth, r.c_sup, slope,
          0.5 * slope);
    const double sg = rel_spread(r.growth_by_radius), ss = rel_spread(r.sup_by_radius);
    std::size_t finite_sup = 0;
    for (double v : r.sup_by_radius) finite_sup += std::isfinite(v) ? 1 : 0;
    c.add(sg <= 0.2 && ss <= 0.2 && finite_sup >= 2,
          "N=%d: spread across radii: growth %.2f%% (%zu radii), sup %.2f%% (%zu radii) (<= 20%%)", ns[k],
          100 * sg, r.radii.size(), 100 * ss, finite_sup);
  }
  const double dg = std::abs(res[1].c_growth / res[0].c_growth - 1.0);
  const double ds = std::abs(res[1].c_sup / res[0].c_sup - 1.0);
  c.add(dg <= 0.2 && ds <= 0.2, "N 512 -> 1024: c_growth change %.2f%%, c_sup change %.2f%% (<= 20%%)", 100 * dg,
        100 * ds);
  return c;
}

Criterion properties(const Audits& audits) {
  Criterion c{5, "property suites", {}, 0.0, 60.0};
  const auto t0 = Clock::now();
  {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> mag(-6.0, 6.0), g(0.0, 1.0);
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
      const double a = std::pow(10.0, mag(rng)), b = std::pow(10.0, mag(rng));
      double gamma = g(rng);
      while (gamma == 0.0) gamma = g(rng);
      const auto F = [&](double v) { return potential_value(v, gamma, 1.0, 0.0); };
      bad += F(a + b) < F(a) + F(b) ? 0 : 1;
    }
    c.add(bad == 0, "(a) subadditivity violations: %d of 10000 triples", bad);
  }
  for (double p : {2.0, 3.0, 4.0}) {
    const auto probe = vector_monotonicity_probe(p, 100000, 11);
    const double bound = std::pow(2.0, 2.0 - p) * (1 - 1e-9);
    c.add(probe.min_ratio >= bound, "(b) p=%g: monotonicity min ratio %.12f (>= %.12f) over %zu pairs", p,
          probe.min_ratio, bound, probe.pairs);
  }
  {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    int negative = 0, mismatched = 0, total = 0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const int dim = t < 50 ? 1 : 2;
      const double p = 2.0 + t % 3;
      const Domain dom = dim == 1 ? Domain::interval(0.0, 1.0) : Domain::rectangle(0.0, 1.0, 0.0, 1.0);
      const Grid g = build_grid(dom, dim == 1 ? 24 : 8);
      std::vector<std::size_t> region(g.num_nodes());
      for (std::size_t k = 0; k < region.size(); ++k) region[k] = k;
      const auto psi = DiscreteFunction::sample(g, [&](const Point&) { return d(rng); });
      const DirichletGap gap = dirichlet_gap(psi, region, p);
      ++total;
      negative += gap.lhs >= 0.0 ? 0 : 1;
      if (p == 2.0) {
        const double e = std::abs(gap.lhs - gap.rhs) / std::max(1.0, gap.rhs);
        worst = std::max(worst, e);
        mismatched += e <= 1e-10 ? 0 : 1;
      }
    }
    c.add(negative == 0, "(c) dirichlet gap lhs < 0 in %d of %d random psi (1-D and 2-D)", negative, total);
    c.add(mismatched == 0, "(c) p=2: max |lhs - rhs| / max(1, rhs) = %.3g (<= 1e-10)", worst);
  }
  c.add(audits.converged > 0 && audits.truncation_ok == audits.converged,
        "(d) truncation audit passed on %d of %d converged minimizers from criteria 1-3", audits.truncation_ok,
        audits.converged);
  c.add(audits.monotone == audits.solves, "(e) energy trace monotone on %d of %d solves", audits.monotone,
        audits.solves);
  c.seconds = since(t0);
  c.add(c.seconds <= c.budget, "runtime %.1f s (<= 60 s; audits reuse the solves of criteria 1-3)", c.seconds);
  return c;
}

Criterion landscape() {
  Criterion c{6, "exponent landscape sweep", {}, 0.0, 120.0};
  const auto t0 = Clock::now();
  RunConfig one;
  one.problem = interval(0.0, 0.0, 2.0, 0.5, 1.0, 0.0);
  one.profile_boundary = 0.0;
  one.resolution = 512;
  one.sweep = SweepRequest{{2.0}, {0.25, 0.5, 0.75, 1.0}, {kInf}, 0.0};
  const auto rows = cli::run_sweep(one, 1);
  bool mono = true, ok = true;
  std::string col;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    ok = ok && rows[k].status == "ok";
    if (k > 0) mono = mono && rows[k].growth > rows[k - 1].growth;
    char b[64];
    std::snprintf(b, sizeof b, " %.4f", rows[k].growth);
    col += b;
  }
  c.add(ok && mono, "1-D one-phase growth column increasing in gamma {0.25,0.5,0.75,1}:%s", col.c_str());

  RunConfig two;
  two.problem.domain = Domain::rectangle(-1.0, 1.0, -1.0, 1.0);
  two.problem.boundary = BoundaryData::polynomial({0.0, 0.5, 0.0, 0.0, 0.0, 0.0});
  two.problem.p = 2.0;
  two.problem.gamma = 1.0;
  two.resolution = 8;
  two.sweep = SweepRequest{{2.0}, {0.5, 1.0}, {1.5, 2.0, 3.0, kInf}, 0.1};
  const auto rows2 = cli::run_sweep(two, 1);
  int right = 0, flagged = 0;
  for (const auto& r : rows2) {
    right += r.borderline == (r.q == 2.0) && r.status != "failed" ? 1 : 0;
    flagged += r.borderline ? 1 : 0;
  }
  c.add(right == static_cast<int>(rows2.size()), "2-D: borderline flag correct in %d of %zu cells (%d flagged, q = n = 2)",
        right, rows2.size(), flagged);
  c.seconds = since(t0);
  c.add(c.seconds <= c.budget, "runtime %.1f s (<= 120 s)", c.seconds);
  return c;
}

Criterion log_lipschitz() {
  Criterion c{7, "log-Lipschitz modulus on x log|x|", {}, 0.0, 0.0};
  auto sample = [](int n) {
    const Grid g = build_grid(Domain::interval(-1.0, 1.0), n);
    return DiscreteFunction::sample(g, [](const Point& x) { return x[0] == 0.0 ? 0.0 : x[0] * std::log(std::abs(x[0])); });
  };
  const auto u1 = sample(1024), u4 = sample(4096);
  const auto ll = modulus_of_continuity(u4, ModulusForm::kLogLipschitz);
  c.add(std::abs(ll.constant - 1.0) <= 0.1, "log-Lipschitz K = %.4f at N=4096 (within 10%% of 1)", ll.constant);
  const double l1 = modulus_of_continuity(u1, ModulusForm::kLipschitz).constant;
  const double l4 = modulus_of_continuity(u4, ModulusForm::kLipschitz).constant;
  c.add(l4 / l1 >= 1.5, "Lipschitz %.4f at N=1024, %.4f at N=4096, growth %.3fx (>= 1.5x)", l1, l4, l4 / l1);
  return c;
}

}  // namespace

int main() {
  Audits audits;
  JetRuns runs;
  const std::vector<std::pair<int, std::function<Criterion()>>> steps{
      {1, [&] { return alt_phillips(audits); }},
      {2, [&] { return obstacle(audits); }},
      {3, [&] { return jet(audits, runs); }},
      {4, [&] { return nondegeneracy(runs); }},
      {5, [&] { return properties(audits); }},
      {6, [] { return landscape(); }},
      {7, [] { return log_lipschitz(); }},
  };
  int failed = 0;
  for (const auto& [id, step] : steps) {
    const auto t0 = Clock::now();
    Criterion c{id, "did not complete", {}, 0.0, 0.0};
    try {
      c = step();
    } catch (const std::exception& e) {
      c.add(false, "error: %s", e.what());
    }
    const double secs = since(t0);
    std::printf("criterion %d: %s  %s (%.1f s)\n", c.id, c.pass() ? "PASS" : "FAIL", c.title.c_str(), secs);
    for (const auto& cl : c.clauses) std::printf("    [%s] %s\n", cl.pass ? "pass" : "FAIL", cl.text.c_str());
    std::fflush(stdout);
    failed += c.pass() ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(steps.size()) - failed, steps.size());
  return failed == 0 ? 0 : 1;
}
