#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fblab/config.hpp"
#include "fblab/diagnostics.hpp"
#include "fblab/oracle.hpp"
#include "fblab/plot.hpp"
#include "fblab/report.hpp"
#include "fblab/solver.hpp"

namespace fblab::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalError = 3, kCheckFailed = 4 };

struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::string> out;
  bool plot = false;
  bool check = false;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

struct CheckLine {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<=" or ">="
};

inline CheckLine check_le(std::string name, double v, double t) { return {std::move(name), v <= t, v, t, "<="}; }
inline CheckLine check_ge(std::string name, double v, double t) { return {std::move(name), v >= t, v, t, ">="}; }

inline Json to_json(const std::vector<CheckLine>& checks) {
  Json a = Json::array();
  for (const auto& c : checks)
    a.push_back({{"name", c.name},
                 {"pass", c.pass},
                 {"value", json_number(c.value)},
                 {"relation", c.relation},
                 {"threshold", c.threshold}});
  return a;
}

/// Everything a command produced, before it is written.
struct Outcome {
  int exit_code = kOk;
  ArtifactWriter files;
  std::vector<CheckLine> checks;
  std::vector<std::string> messages;
  explicit Outcome(std::filesystem::path dir) : files(std::move(dir)) {}
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace detail {

inline RunConfig load(const Invocation& inv) {
  RunConfig cfg = parse_config(load_json_file(inv.config_path));
  if (inv.seed) {
    cfg.seed = *inv.seed;
    cfg.solver.seed = cfg.seed;
    if (cfg.continuation)
      for (auto& prm : cfg.continuation->params) prm.seed = cfg.seed;
  }
  if (inv.out) cfg.output_dir = *inv.out;
  if (inv.plot) cfg.plot = true;
  return cfg;
}

inline Json header(const std::string& command, const RunConfig& cfg, const ProblemSpec& spec) {
  return {{"schema", kReportSchema},
          {"command", command},
          {"problem", to_json(spec)},
          {"resolution", cfg.resolution},
          {"seed", cfg.seed}};
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline DiagnoseOptions diagnose_options(const RunConfig& cfg, int threads) {
  DiagnoseOptions o;
  o.radii = cfg.diagnostics.radii;
  o.center = cfg.diagnostics.center;
  o.threads = threads;
  return o;
}

inline double relative_sup_error(const DiscreteFunction& u, const DiscreteFunction& ref) {
  double e = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) e = std::max(e, std::abs(u[k] - ref[k]));
  const double s = ref.sup_norm();
  return s > 0.0 ? e / s : e;
}

/// Fit CSVs, the regularity section and optional plots.
inline void add_regularity(Outcome& out, Json& report, const RegularityReport& reg, const ProblemSpec& spec,
                           const DiscreteFunction& u, bool plot) {
  report["regularity"] = to_json(reg, spec, u.grid().dim());
  std::vector<plot::Panel> panels{plot::profile_panel(u, "solution")};
  if (reg.growth) {
    write_fit_csv(out.files.open("growth.csv"), "sup_u_plus", reg.growth->radii, reg.growth->values);
    panels.push_back(plot::fit_panel(*reg.growth, "growth", "sup u+"));
  }
  if (reg.nondegeneracy) {
    write_fit_csv(out.files.open("nondegeneracy.csv"), "sup_over_r", reg.nondegeneracy->radii,
                  reg.nondegeneracy->sup_by_radius);
  }
  if (reg.oscillation) {
    write_fit_csv(out.files.open("oscillation.csv"), "mean_oscillation", reg.oscillation->fit.radii,
                  reg.oscillation->fit.values);
    panels.push_back(plot::fit_panel(reg.oscillation->fit, "gradient oscillation", "mean |grad u - avg|^p"));
  }
  if (plot) out.files.put("plots.svg", plot::render_svg(panels));
}

/// Checks shared by solve and diagnose.
inline void regularity_checks(Outcome& out, const RunConfig& cfg, const ProblemSpec& spec,
                              const DiscreteFunction& u, const RegularityReport& reg) {
  const auto& c = cfg.checks;
  if (spec.gamma > 0.0 && spec.lambda_minus == 0.0 && cfg.profile_boundary) {
    const auto ref = alt_phillips_profile(spec.p, spec.gamma, spec.lambda_plus, *cfg.profile_boundary, u.grid());
    out.checks.push_back(check_le("sup_error_vs_profile", relative_sup_error(u, ref.u), c.sup_error));
    const double beta = growth_exponent(spec.p, spec.gamma);
    const double got = reg.growth ? reg.growth->exponent : kInf;
    out.checks.push_back(check_le("growth_exponent_rel_error", std::abs(got / beta - 1.0), c.growth_tolerance));
    out.checks.push_back(check_ge("growth_r_squared", reg.growth ? reg.growth->r_squared : 0.0, c.min_r_squared));
  }
  if (spec.p == 2.0 && spec.gamma == 1.0 && std::isinf(spec.source.q)) {
    out.checks.push_back(check_ge("oscillation_alpha", reg.oscillation ? reg.oscillation->alpha : 0.0, c.min_alpha));
    out.checks.push_back(check_ge("oscillation_r_squared", reg.oscillation ? reg.oscillation->fit.r_squared : 0.0,
                                  c.min_r_squared_oscillation));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_solve(const RunConfig& cfg, const Invocation& inv, Outcome& out) {
  const ProblemSpec spec = cfg.problem_at(cfg.problem.p, cfg.problem.gamma);
  if (!(spec.gamma > 0.0)) throw Error(ErrorCode::kConfig, "solve needs gamma > 0; use continue for gamma = 0");
  const Grid grid = build_grid(spec.domain, cfg.resolution);
  const SolveReport rep = minimize(spec, grid, cfg.solver);

  Json report = detail::header("solve", cfg, spec);
  report["solver"] = to_json(cfg.solver);
  report["solve"] = to_json(rep);
  write_csv(out.files.open("solution.csv"), rep.u);
  write_trace_csv(out.files.open("trace.csv"), rep.trace);

  if (inv.check || cfg.plot) {
    const RegularityReport reg = diagnose(rep.u, spec, detail::diagnose_options(cfg, inv.threads));
    detail::add_regularity(out, report, reg, spec, rep.u, cfg.plot);
    if (inv.check) {
      out.checks.push_back(check_ge("trace_monotone", trace_monotone(rep.trace) ? 1.0 : 0.0, 1.0));
      detail::regularity_checks(out, cfg, spec, rep.u, reg);
    }
  }
  if (!rep.converged) {
    out.exit_code = kNumericalError;
    out.messages.push_back("solver did not converge");
  }
  report["checks"] = to_json(out.checks);
  out.files.put_json("report.json", report);
}

inline void cmd_continue(const RunConfig& cfg, const Invocation& inv, Outcome& out) {
  const ProblemSpec& spec = cfg.problem;
  if (spec.gamma != 0.0) throw Error(ErrorCode::kConfig, "continue targets gamma = 0; set problem.gamma to 0");
  const Grid grid = build_grid(spec.domain, cfg.resolution);
  std::vector<std::string> notes;
  ContinuationSchedule schedule;
  if (cfg.continuation) {
    schedule = *cfg.continuation;
  } else {
    schedule.params = {cfg.solver};
    notes.push_back("no continuation schedule given; default schedule applied");
  }
  const ContinuationReport rep = continuation(spec, grid, schedule);
  const DiscreteFunction& u = rep.final_report.u;

  Json report = detail::header("continue", cfg, spec);
  report["schedule"] = {{"gammas", schedule.gammas}, {"solver", to_json(schedule.stage(0))}};
  Json stages = Json::array();
  for (const auto& s : rep.stages) stages.push_back(to_json(s));
  report["stages"] = stages;
  report["final"] = to_json(rep.final_report);
  report["failure"] = rep.failure ? Json(*rep.failure) : Json(nullptr);
  write_csv(out.files.open("solution.csv"), u);
  write_trace_csv(out.files.open("trace.csv"), rep.final_report.trace);

  const RegularityReport reg = diagnose(u, spec, detail::diagnose_options(cfg, inv.threads));
  detail::add_regularity(out, report, reg, spec, u, cfg.plot);
  std::size_t evaluated = 0;
  for (const auto& f : reg.flux) evaluated += f.skipped ? 0 : 1;
  if (evaluated == 0) notes.push_back("flux section empty: no interior two-phase interface");
  std::size_t zero_cells = 0;
  for (std::size_t e = 0; e < grid.num_elements(); ++e) {
    const Element el = grid.element(e);
    bool zero = true;
    for (int k = 0; k < el.count; ++k) zero = zero && u[el.vertex[k]] == 0.0;
    zero_cells += zero ? 1 : 0;
  }
  report["zero_phase_cells"] = zero_cells;
  if (zero_cells == 0) notes.push_back("zero phase has empty interior");
  report["notes"] = notes;

  if (inv.check) {
    const double jump = (spec.lambda_plus - spec.lambda_minus) / (spec.p - 1.0);
    out.checks.push_back(check_le("flux_residual_fraction", evaluated ? reg.max_flux_residual() / jump : kInf,
                                  cfg.checks.flux_fraction));
    if (spec.domain.dim() == 1 && spec.boundary.kind == BoundaryData::Kind::kEndpoints &&
        spec.source.family == SourceSpec::Family::kZero && spec.boundary.left * spec.boundary.right < 0.0) {
      const auto jet = two_phase_jet_1d(spec, cfg.resolution);
      double kink = kInf;
      for (const auto& q : reg.free_boundary.points) kink = std::min(kink, std::abs(q.x[0] - jet.parameter("a")));
      out.checks.push_back(check_le("kink_distance_cells", kink / grid.h(), cfg.checks.kink_cells));
    }
  }
  if (rep.failure || !rep.final_report.converged) {
    out.exit_code = kNumericalError;
    out.messages.push_back(rep.failure ? *rep.failure : "final stage did not converge");
  }
  report["checks"] = to_json(out.checks);
  out.files.put_json("report.json", report);
}

inline void cmd_diagnose(const RunConfig& cfg, const Invocation& inv, Outcome& out) {
  if (!cfg.input_solution) throw Error(ErrorCode::kConfig, "diagnose needs input.solution");
  const ProblemSpec spec = cfg.problem_at(cfg.problem.p, cfg.problem.gamma);
  const Grid grid = build_grid(spec.domain, cfg.resolution);
  std::ifstream in(*cfg.input_solution);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open input solution " + *cfg.input_solution);
  DiscreteFunction u = [&] {
    try {
      return read_csv(in, grid);
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, std::string("input.solution: ") + e.what());
    }
  }();
  if (u.size() != grid.num_nodes()) throw Error(ErrorCode::kConfig, "input.solution: too few rows");

  Json report = detail::header("diagnose", cfg, spec);
  report["energy"] = to_json(total_energy(u, spec));
  const RegularityReport reg = diagnose(u, spec, detail::diagnose_options(cfg, inv.threads));
  detail::add_regularity(out, report, reg, spec, u, cfg.plot);
  if (inv.check) detail::regularity_checks(out, cfg, spec, u, reg);
  report["checks"] = to_json(out.checks);
  out.files.put_json("report.json", report);
}

inline void cmd_oracle(const RunConfig& cfg, const Invocation& inv, Outcome& out) {
  if (!cfg.oracle) throw Error(ErrorCode::kConfig, "oracle needs an 'oracle' section");
  const OracleRequest& req = *cfg.oracle;
  const ProblemSpec spec = cfg.problem_at(cfg.problem.p, cfg.problem.gamma);
  Json report = detail::header("oracle", cfg, spec);
  if (req.kind == OracleRequest::Kind::kBruteForce) {
    BruteForceOptions opt;
    opt.starts = req.starts;
    opt.seed = cfg.seed;
    opt.max_sweeps = req.max_sweeps;
    opt.threads = inv.threads;
    const auto bf = brute_force_minimizer_1d(spec, cfg.resolution, opt);
    report["oracle"] = {{"kind", to_string(req.kind)},
                        {"energy", bf.energy},
                        {"best_start", bf.best_start},
                        {"start_energies", json_numbers(bf.start_energies)}};
    write_csv(out.files.open("solution.csv"), bf.u);
    if (cfg.plot) out.files.put("plots.svg", plot::render_svg({plot::profile_panel(bf.u, "brute force")}));
  } else {
    if (spec.domain.dim() != 1) throw Error(ErrorCode::kConfig, "closed-form oracles are one-dimensional");
    const Grid grid = build_grid(spec.domain, cfg.resolution);
    const OracleSolution o =
        req.kind == OracleRequest::Kind::kAltPhillips
            ? alt_phillips_profile(spec.p, spec.gamma, spec.lambda_plus, req.fb_location, grid)
            : two_phase_jet_1d(spec.boundary.left, spec.boundary.right, spec, grid,
                               {req.scan_resolution, req.newton_steps});
    report["oracle"] = to_json(o);
    write_csv(out.files.open("solution.csv"), o.u);
    if (cfg.plot) out.files.put("plots.svg", plot::render_svg({plot::profile_panel(o.u, o.kind)}));
    if (inv.check && req.kind == OracleRequest::Kind::kTwoPhaseJet && std::isfinite(o.flux_residual)) {
      const double jump = (spec.lambda_plus - spec.lambda_minus) / (spec.p - 1.0);
      out.checks.push_back(
          check_le("flux_residual_fraction", std::abs(o.flux_residual) / jump, cfg.checks.flux_fraction));
    }
  }
  report["checks"] = to_json(out.checks);
  out.files.put_json("report.json", report);
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double p = 2.0, gamma = 0.0, q = kInf;
  std::optional<double> predicted_alpha;
  std::string regime;
  bool borderline = false;
  double expected_growth = std::numeric_limits<double>::quiet_NaN();
  double growth = std::numeric_limits<double>::quiet_NaN();
  double growth_r_squared = std::numeric_limits<double>::quiet_NaN();
  double oscillation_alpha = std::numeric_limits<double>::quiet_NaN();
  double flux_residual = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  std::string status = "ok";
  std::string error;
};

/// The problem of one sweep cell. Finite q with a nonzero amplitude uses
/// A |x - x0|^{-s} with s = 0.99 n / q centered in the domain.
inline ProblemSpec sweep_problem(const RunConfig& cfg, double p, double gamma, double q) {
  ProblemSpec s = cfg.problem_at(p, gamma);
  const int n = s.domain.dim();
  const double amp = cfg.sweep ? cfg.sweep->source_amplitude : 0.0;
  if (std::isfinite(q) && amp != 0.0) {
    const Point c{0.5 * (s.domain.lower(0) + s.domain.upper(0)),
                  n == 2 ? 0.5 * (s.domain.lower(1) + s.domain.upper(1)) : 0.0};
    s.source = SourceSpec::radial_power(amp, 0.99 * n / q, c, q);
  } else {
    s.source.q = q;
  }
  return s;
}

inline SweepRow sweep_cell(const RunConfig& cfg, double p, double gamma, double q) {
  SweepRow row;
  row.p = p;
  row.gamma = gamma;
  row.q = q;
  try {
    const ProblemSpec spec = sweep_problem(cfg, p, gamma, q);
    const int n = spec.domain.dim();
    row.borderline = q == n;
    if (gamma > 0.0) {
      row.expected_growth = growth_exponent(p, gamma);
      if (q > n) {
        const auto pred = predicted_alpha({p, gamma, q, n, std::nullopt});
        row.predicted_alpha = pred.alpha;
        row.regime = to_string(pred.regime);
      } else {
        row.regime = q == n ? "borderline" : "below_borderline";
      }
    } else {
      row.regime = "gamma_zero";
    }
    spec.validate();
    const Grid grid = build_grid(spec.domain, cfg.resolution);
    std::optional<DiscreteFunction> u;
    if (gamma > 0.0) {
      const SolveReport rep = minimize(spec, grid, cfg.solver);
      row.converged = rep.converged;
      u = rep.u;
    } else {
      ContinuationSchedule sch = cfg.continuation.value_or(ContinuationSchedule{});
      if (sch.params.empty()) sch.params = {cfg.solver};
      const ContinuationReport rep = continuation(spec, grid, sch);
      row.converged = !rep.failure && rep.final_report.converged;
      u = rep.final_report.u;
    }
    DiagnoseOptions opt;
    opt.radii = cfg.diagnostics.radii;
    opt.center = cfg.diagnostics.center;
    const RegularityReport reg = diagnose(*u, spec, opt);
    if (reg.growth) {
      row.growth = reg.growth->exponent;
      row.growth_r_squared = reg.growth->r_squared;
    }
    if (reg.oscillation) row.oscillation_alpha = reg.oscillation->alpha;
    bool any = false;
    for (const auto& f : reg.flux) any = any || !f.skipped;
    if (any) row.flux_residual = reg.max_flux_residual();
    if (!row.converged) row.status = "not_converged";
  } catch (const Error& e) {
    row.status = "failed";
    row.error = e.what();
  }
  return row;
}

/// Rows ordered p, then gamma, then q; cells run on at most `threads` workers.
inline std::vector<SweepRow> run_sweep(const RunConfig& cfg, int threads) {
  if (!cfg.sweep) throw Error(ErrorCode::kConfig, "sweep needs a 'sweep' section");
  const SweepRequest& s = *cfg.sweep;
  if (s.p.empty() || s.gamma.empty() || s.q.empty()) throw Error(ErrorCode::kConfig, "sweep lists are empty");
  struct Cell { double p, gamma, q; };
  std::vector<Cell> cells;
  for (double p : s.p)
    for (double g : s.gamma)
      for (double q : s.q) cells.push_back({p, g, q});
  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < cells.size();)
      rows[k] = sweep_cell(cfg, cells[k].p, cells[k].gamma, cells[k].q);
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(std::isnan(v) ? "nan" : "inf"); };
  os << "p,gamma,q,predicted_alpha,regime,borderline,expected_growth,growth,growth_r_squared,"
        "oscillation_alpha,flux_residual,converged,status\n";
  for (const auto& r : rows)
    os << num(r.p) << ',' << num(r.gamma) << ',' << num(r.q) << ','
       << (r.predicted_alpha ? num(*r.predicted_alpha) : "") << ',' << r.regime << ',' << r.borderline << ','
       << num(r.expected_growth) << ',' << num(r.growth) << ',' << num(r.growth_r_squared) << ','
       << num(r.oscillation_alpha) << ',' << num(r.flux_residual) << ',' << r.converged << ',' << r.status
       << '\n';
}

inline Json to_json(const SweepRow& r) {
  return {{"p", r.p},
          {"gamma", r.gamma},
          {"q", json_number(r.q)},
          {"predicted_alpha", r.predicted_alpha ? Json(*r.predicted_alpha) : Json(nullptr)},
          {"regime", r.regime},
          {"borderline", r.borderline},
          {"expected_growth", json_number(r.expected_growth)},
          {"growth", json_number(r.growth)},
          {"growth_r_squared", json_number(r.growth_r_squared)},
          {"oscillation_alpha", json_number(r.oscillation_alpha)},
          {"flux_residual", json_number(r.flux_residual)},
          {"converged", r.converged},
          {"status", r.status},
          {"error", r.error}};
}

inline void cmd_sweep(const RunConfig& cfg, const Invocation& inv, Outcome& out) {
  const auto rows = run_sweep(cfg, inv.threads);
  Json report = detail::header("sweep", cfg, cfg.problem);
  report["sweep"] = {{"p", cfg.sweep->p},
                     {"gamma", cfg.sweep->gamma},
                     {"q", json_numbers(cfg.sweep->q)},
                     {"source_amplitude", cfg.sweep->source_amplitude}};
  Json jr = Json::array();
  for (const auto& r : rows) jr.push_back(to_json(r));
  report["rows"] = jr;
  write_sweep_csv(out.files.open("sweep.csv"), rows);

  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status == "ok" ? 0 : 1;
  if (failed) out.messages.push_back(std::to_string(failed) + " sweep cell(s) failed or did not converge");
  if (inv.check) {
    for (const auto& r : rows) {
      if (!(r.gamma > 0.0) || !cfg.profile_boundary || cfg.problem.lambda_minus != 0.0) continue;
      std::ostringstream name;
      name << "growth_rel_error[p=" << r.p << ",gamma=" << r.gamma << ",q=" << r.q << "]";
      out.checks.push_back(
          check_le(name.str(), std::abs(r.growth / r.expected_growth - 1.0), cfg.checks.growth_tolerance));
    }
  }
  report["checks"] = to_json(out.checks);
  out.files.put_json("report.json", report);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Summarizes the report.json in the output directory and optionally
/// renders its solution and fits.
inline void cmd_report(const RunConfig& cfg, const Invocation&, Outcome& out) {
  const std::filesystem::path dir = cfg.output_dir;
  std::ifstream in(dir / "report.json");
  if (!in) throw Error(ErrorCode::kConfig, "no report.json in " + dir.string());
  Json rep;
  try {
    rep = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kConfig, std::string("report.json: ") + e.what());
  }
  if (rep.value("schema", "") != kReportSchema) throw Error(ErrorCode::kConfig, "report.json has another schema");
  std::ostringstream s;
  const std::string cmd = rep.value("command", "?");
  s << "command: " << cmd << '\n';
  auto line = [&](const char* label, const Json& j) {
    if (!j.is_null()) s << label << ": " << j.dump() << '\n';
  };
  if (rep.contains("solve")) {
    line("converged", rep["solve"]["converged"]);
    line("energy", rep["solve"]["energy"]["total"]);
  }
  if (rep.contains("final")) {
    line("converged", rep["final"]["converged"]);
    line("energy", rep["final"]["energy"]["total"]);
    line("stages", Json(rep["stages"].size()));
  }
  if (rep.contains("regularity")) {
    const Json& r = rep["regularity"];
    line("free_boundary_points", r["free_boundary"]["count"]);
    if (!r["growth"].is_null()) {
      line("growth_exponent", r["growth"]["exponent"]);
      line("growth_r_squared", r["growth"]["r_squared"]);
    }
    if (!r["oscillation"].is_null()) line("oscillation_alpha", r["oscillation"]["alpha"]);
    line("flux_max_abs_residual", r["flux"]["max_abs_residual"]);
    line("lipschitz", r["lipschitz"]["constant"]);
  }
  if (rep.contains("oracle")) line("oracle", rep["oracle"]["kind"]);
  if (rep.contains("rows")) line("sweep_rows", Json(rep["rows"].size()));
  if (rep.contains("checks"))
    for (const auto& c : rep["checks"])
      s << "check " << c["name"].get<std::string>() << ": " << (c["pass"].get<bool>() ? "pass" : "fail") << '\n';
  out.files.put("summary.txt", s.str());
  out.messages.push_back(s.str());

  if (cfg.plot && std::filesystem::exists(dir / "solution.csv")) {
    const Grid grid = build_grid(cfg.problem.domain, rep.value("resolution", cfg.resolution));
    std::ifstream sol(dir / "solution.csv");
    const DiscreteFunction u = read_csv(sol, grid);
    std::vector<plot::Panel> panels{plot::profile_panel(u, cmd + " solution")};
    if (rep.contains("regularity")) {
      auto fit = [](const Json& j) {
        FitResult f;
        auto get = [](const Json& v) { return v.is_number() ? v.get<double>() : std::nan(""); };
        f.exponent = get(j["exponent"]);
        f.constant = get(j["constant"]);
        f.r_squared = get(j["r_squared"]);
        for (const auto& v : j["radii"]) f.radii.push_back(get(v));
        for (const auto& v : j["values"]) f.values.push_back(get(v));
        f.degenerate = j["degenerate"].get<bool>();
        return f;
      };
      const Json& r = rep["regularity"];
      if (!r["growth"].is_null()) panels.push_back(plot::fit_panel(fit(r["growth"]), "growth", "sup u+"));
      if (!r["oscillation"].is_null())
        panels.push_back(plot::fit_panel(fit(r["oscillation"]), "gradient oscillation", "mean oscillation"));
    }
    out.files.put("plots.svg", plot::render_svg(panels));
  }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Runs one command and writes its artifacts. Returns the exit code.
inline int run(const Invocation& inv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  RunConfig cfg;
  try {
    cfg = detail::load(inv);
    if (inv.threads < 1) throw Error(ErrorCode::kConfig, "--threads must be >= 1");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  Outcome out(cfg.output_dir);
  try {
    if (inv.command == "solve")
      cmd_solve(cfg, inv, out);
    else if (inv.command == "continue")
      cmd_continue(cfg, inv, out);
    else if (inv.command == "diagnose")
      cmd_diagnose(cfg, inv, out);
    else if (inv.command == "oracle")
      cmd_oracle(cfg, inv, out);
    else if (inv.command == "sweep")
      cmd_sweep(cfg, inv, out);
    else if (inv.command == "report")
      cmd_report(cfg, inv, out);
    else
      throw Error(ErrorCode::kConfig, "unknown command '" + inv.command + "'");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfig ? kConfigError : kNumericalError;
  }
  if (inv.command != "report")
    out.files.put_json("metadata.json", {{"command", inv.command},
                                         {"config", inv.config_path},
                                         {"started_utc", detail::utc_now()},
                                         {"threads", inv.threads}});
  try {
    out.files.flush();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kNumericalError;
  }
  for (const auto& m : out.messages) os << m << (m.empty() || m.back() != '\n' ? "\n" : "");
  bool ok = true;
  for (const auto& c : out.checks) {
    os << "check " << c.name << ": " << (c.pass ? "pass" : "fail") << " (" << std::setprecision(6) << c.value
       << ' ' << c.relation << ' ' << c.threshold << ")\n";
    ok = ok && c.pass;
  }
  if (out.exit_code != kOk) return out.exit_code;
  return ok ? kOk : kCheckFailed;
}

}  // namespace fblab::cli
