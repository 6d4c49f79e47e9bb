#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fblab/error.hpp"
#include "fblab/model.hpp"
#include "fblab/solver.hpp"

namespace fblab {

using Json = nlohmann::json;

inline constexpr const char* kConfigSchema = "fblab-config/1";

/// Which analyses diagnose/continue run and on which radii.
struct DiagnosticsRequest {
  std::vector<double> radii;  // empty: dyadic from 4h
  std::optional<Point> center;
};

struct OracleRequest {
  enum class Kind { kAltPhillips, kTwoPhaseJet, kBruteForce };
  Kind kind = Kind::kAltPhillips;
  double fb_location = 0.0;
  double scan_resolution = 1e-4;
  int newton_steps = 3;
  int starts = 16;
  int max_sweeps = 5000;
};

inline const char* to_string(OracleRequest::Kind k) {
  switch (k) {
    case OracleRequest::Kind::kAltPhillips: return "alt_phillips_profile";
    case OracleRequest::Kind::kTwoPhaseJet: return "two_phase_jet_1d";
    case OracleRequest::Kind::kBruteForce: return "brute_force_minimizer_1d";
  }
  return "?";
}

struct SweepRequest {
  std::vector<double> p;
  std::vector<double> gamma;
  std::vector<double> q;
  /// Amplitude A of the source A|x - x0|^{-s} used for finite q, with
  /// s = 0.99 n / q. Zero keeps f = 0 and only declares q.
  double source_amplitude = 0.0;
};

/// Thresholds for --check. Unset entries use the defaults below.
struct CheckThresholds {
  double sup_error = 0.02;         // relative sup error against the profile oracle
  double growth_tolerance = 0.05;  // relative error of the growth exponent
  double min_r_squared = 0.99;     // growth fits
  double min_r_squared_oscillation = 0.95;
  double min_alpha = 0.85;               // oscillation exponent
  double flux_fraction = 0.05;           // of (λ₊ − λ₋)/(p − 1)
  double kink_cells = 1.0;               // kink distance to the jet oracle, in cells
};

struct RunConfig {
  ProblemSpec problem;
  int resolution = 64;
  /// Boundary data taken from the one-phase profile with this free boundary.
  std::optional<double> profile_boundary;
  SolverParams solver;
  std::optional<ContinuationSchedule> continuation;
  DiagnosticsRequest diagnostics;
  std::optional<OracleRequest> oracle;
  std::optional<SweepRequest> sweep;
  std::optional<std::string> input_solution;
  std::string output_dir = "out";
  bool plot = false;
  std::uint64_t seed = 0;
  CheckThresholds checks;

  /// Problem at (p, γ), re-deriving profile boundary data when requested.
  ProblemSpec problem_at(double p, double gamma) const {
    ProblemSpec s = problem;
    s.p = p;
    s.gamma = gamma;
    if (profile_boundary && gamma > 0.0) {
      const double c = profile_constant(p, gamma, s.lambda_plus);
      const double beta = growth_exponent(p, gamma);
      auto at = [&](double x) { return x > *profile_boundary ? c * std::pow(x - *profile_boundary, beta) : 0.0; };
      s.boundary = BoundaryData::endpoints(at(s.domain.lower(0)), at(s.domain.upper(0)));
    }
    return s;
  }
};

namespace detail {

inline void config_fail(const std::string& where, const std::string& msg) {
  throw Error(ErrorCode::kConfig, where + ": " + msg);
}

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) config_fail(where, "expected an object");
}

inline void reject_unknown(const Json& j, const std::string& where, std::set<std::string> allowed) {
  require_object(j, where);
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) config_fail(where, "unknown key '" + k + "'");
}

inline double get_number(const Json& j, const std::string& where) {
  if (!j.is_number()) config_fail(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) config_fail(where, "expected a finite number");
  return v;
}

/// A number, or "inf" / null for +infinity.
inline double get_extended(const Json& j, const std::string& where) {
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "inf"))
    return std::numeric_limits<double>::infinity();
  return get_number(j, where);
}

inline int get_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) config_fail(where, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    config_fail(where, "integer out of range");
  return static_cast<int>(v);
}

inline std::vector<double> get_numbers(const Json& j, const std::string& where, bool extended = false) {
  if (!j.is_array()) config_fail(where, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string w = where + "[" + std::to_string(k) + "]";
    out.push_back(extended ? get_extended(j[k], w) : get_number(j[k], w));
  }
  return out;
}

inline std::string single_key(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  require_object(j, where);
  if (j.size() != 1) config_fail(where, "expected exactly one of the variants");
  const std::string k = j.begin().key();
  if (!allowed.count(k)) config_fail(where, "unknown variant '" + k + "'");
  return k;
}

inline void parse_problem(const Json& j, RunConfig& cfg) {
  const std::string w = "problem";
  reject_unknown(j, w, {"p", "gamma", "lambda_plus", "lambda_minus", "domain", "boundary", "source", "resolution"});
  ProblemSpec& s = cfg.problem;
  if (j.contains("p")) s.p = get_number(j["p"], w + ".p");
  if (j.contains("gamma")) s.gamma = get_number(j["gamma"], w + ".gamma");
  if (j.contains("lambda_plus")) s.lambda_plus = get_number(j["lambda_plus"], w + ".lambda_plus");
  if (j.contains("lambda_minus")) s.lambda_minus = get_number(j["lambda_minus"], w + ".lambda_minus");
  if (j.contains("resolution")) cfg.resolution = get_int(j["resolution"], w + ".resolution");

  if (!j.contains("domain")) config_fail(w, "missing 'domain'");
  const std::string dk = single_key(j["domain"], w + ".domain", {"interval", "rectangle"});
  const auto dv = get_numbers(j["domain"][dk], w + ".domain." + dk);
  try {
    if (dk == "interval") {
      if (dv.size() != 2) config_fail(w + ".domain.interval", "expected [a, b]");
      s.domain = Domain::interval(dv[0], dv[1]);
    } else {
      if (dv.size() != 4) config_fail(w + ".domain.rectangle", "expected [x0, x1, y0, y1]");
      s.domain = Domain::rectangle(dv[0], dv[1], dv[2], dv[3]);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    config_fail(w + ".domain", e.what());
  }

  if (j.contains("boundary")) {
    const std::string bw = w + ".boundary";
    const std::string bk = single_key(j["boundary"], bw, {"endpoints", "polynomial", "alt_phillips"});
    if (bk == "endpoints") {
      const auto v = get_numbers(j["boundary"][bk], bw + ".endpoints");
      if (v.size() != 2) config_fail(bw + ".endpoints", "expected [left, right]");
      s.boundary = BoundaryData::endpoints(v[0], v[1]);
    } else if (bk == "polynomial") {
      const auto v = get_numbers(j["boundary"][bk], bw + ".polynomial");
      if (v.size() != 6) config_fail(bw + ".polynomial", "expected [c, x, y, xx, xy, yy]");
      s.boundary = BoundaryData::polynomial({v[0], v[1], v[2], v[3], v[4], v[5]});
    } else {
      const Json& a = j["boundary"][bk];
      reject_unknown(a, bw + ".alt_phillips", {"fb_location"});
      cfg.profile_boundary = a.contains("fb_location") ? get_number(a["fb_location"], bw + ".alt_phillips.fb_location") : 0.0;
    }
  }

  if (j.contains("source")) {
    const std::string sw = w + ".source";
    const std::string sk = single_key(j["source"], sw, {"zero", "constant", "radial_power"});
    const Json& v = j["source"][sk];
    if (sk == "zero") {
      reject_unknown(v, sw + ".zero", {"q"});
      s.source = SourceSpec::zero();
      if (v.contains("q")) s.source.q = get_extended(v["q"], sw + ".zero.q");
    } else if (sk == "constant") {
      reject_unknown(v, sw + ".constant", {"value", "q"});
      if (!v.contains("value")) config_fail(sw + ".constant", "missing 'value'");
      s.source = SourceSpec::constant(get_number(v["value"], sw + ".constant.value"),
                                      v.contains("q") ? get_extended(v["q"], sw + ".constant.q") : kInf);
    } else {
      reject_unknown(v, sw + ".radial_power", {"amplitude", "exponent", "center", "q"});
      for (const char* k : {"amplitude", "exponent", "q"})
        if (!v.contains(k)) config_fail(sw + ".radial_power", std::string("missing '") + k + "'");
      Point c{0.0, 0.0};
      if (v.contains("center")) {
        const auto cv = get_numbers(v["center"], sw + ".radial_power.center");
        if (cv.empty() || cv.size() > 2) config_fail(sw + ".radial_power.center", "expected [x] or [x, y]");
        c[0] = cv[0];
        if (cv.size() == 2) c[1] = cv[1];
      }
      s.source = SourceSpec::radial_power(get_number(v["amplitude"], sw + ".radial_power.amplitude"),
                                          get_number(v["exponent"], sw + ".radial_power.exponent"), c,
                                          get_extended(v["q"], sw + ".radial_power.q"));
    }
  }
}

inline SolverParams parse_solver(const Json& j, const std::string& w, SolverParams prm) {
  reject_unknown(j, w, {"method", "eps0", "eps_shrink", "eps_min", "initial_step", "step_shrink", "armijo",
                        "tol_energy", "tol_grad", "max_iter", "coarsest", "polish_trials", "polish_rounds",
                        "polish_tol"});
  if (j.contains("method")) {
    if (!j["method"].is_string()) config_fail(w + ".method", "expected a string");
    const std::string m = j["method"].get<std::string>();
    if (m == "metric_sweep")
      prm.method = SolverParams::Method::kMetricSweep;
    else if (m == "scaled_gradient")
      prm.method = SolverParams::Method::kScaledGradient;
    else
      config_fail(w + ".method", "unknown method '" + m + "'");
  }
  auto num = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = get_number(j[k], w + "." + k);
  };
  auto integer = [&](const char* k, int& dst) {
    if (j.contains(k)) dst = get_int(j[k], w + "." + k);
  };
  num("eps0", prm.eps0);
  num("eps_shrink", prm.eps_shrink);
  num("eps_min", prm.eps_min);
  num("initial_step", prm.initial_step);
  num("step_shrink", prm.step_shrink);
  num("armijo", prm.armijo);
  num("tol_energy", prm.tol_energy);
  num("tol_grad", prm.tol_grad);
  integer("max_iter", prm.max_iter);
  integer("coarsest", prm.coarsest);
  integer("polish_trials", prm.polish_trials);
  integer("polish_rounds", prm.polish_rounds);
  num("polish_tol", prm.polish_tol);
  return prm;
}

inline void parse_checks(const Json& j, CheckThresholds& c) {
  const std::string w = "checks";
  reject_unknown(j, w, {"sup_error", "growth_tolerance", "min_r_squared", "min_r_squared_oscillation",
                        "min_alpha", "flux_fraction", "kink_cells"});
  auto num = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = get_number(j[k], w + "." + k);
  };
  num("sup_error", c.sup_error);
  num("growth_tolerance", c.growth_tolerance);
  num("min_r_squared", c.min_r_squared);
  num("min_r_squared_oscillation", c.min_r_squared_oscillation);
  num("min_alpha", c.min_alpha);
  num("flux_fraction", c.flux_fraction);
  num("kink_cells", c.kink_cells);
}

}  // namespace detail

/// Parses and validates a configuration. Every failure is an Error with
/// code kConfig naming the offending key.
inline RunConfig parse_config(const Json& j) {
  using namespace detail;
  reject_unknown(j, "config", {"schema", "problem", "solver", "continuation", "diagnostics", "oracle", "sweep",
                               "input", "output", "checks", "seed"});
  if (!j.contains("schema") || !j["schema"].is_string() || j["schema"].get<std::string>() != kConfigSchema)
    config_fail("config.schema", std::string("expected \"") + kConfigSchema + "\"");
  if (!j.contains("problem")) config_fail("config", "missing 'problem'");

  RunConfig cfg;
  parse_problem(j["problem"], cfg);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0))
      config_fail("seed", "expected a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("solver")) cfg.solver = parse_solver(j["solver"], "solver", cfg.solver);

  if (j.contains("continuation")) {
    const Json& c = j["continuation"];
    reject_unknown(c, "continuation", {"gammas", "solver"});
    ContinuationSchedule sch;
    if (c.contains("gammas")) sch.gammas = get_numbers(c["gammas"], "continuation.gammas");
    sch.params = {c.contains("solver") ? parse_solver(c["solver"], "continuation.solver", cfg.solver) : cfg.solver};
    cfg.continuation = sch;
  }

  if (j.contains("diagnostics")) {
    const Json& d = j["diagnostics"];
    reject_unknown(d, "diagnostics", {"radii", "center"});
    if (d.contains("radii")) {
      if (d["radii"].is_string()) {
        if (d["radii"].get<std::string>() != "dyadic") config_fail("diagnostics.radii", "expected \"dyadic\" or a list");
      } else {
        cfg.diagnostics.radii = get_numbers(d["radii"], "diagnostics.radii");
        for (std::size_t k = 0; k < cfg.diagnostics.radii.size(); ++k)
          if (!(cfg.diagnostics.radii[k] > 0.0)) config_fail("diagnostics.radii", "radii must be positive");
      }
    }
    if (d.contains("center")) {
      const auto c = get_numbers(d["center"], "diagnostics.center");
      if (c.empty() || c.size() > 2) config_fail("diagnostics.center", "expected [x] or [x, y]");
      cfg.diagnostics.center = Point{c[0], c.size() == 2 ? c[1] : 0.0};
    }
  }

  if (j.contains("oracle")) {
    const Json& o = j["oracle"];
    reject_unknown(o, "oracle", {"kind", "fb_location", "scan_resolution", "newton_steps", "starts", "max_sweeps"});
    OracleRequest req;
    if (!o.contains("kind") || !o["kind"].is_string()) config_fail("oracle.kind", "expected a string");
    const std::string k = o["kind"].get<std::string>();
    if (k == "alt_phillips_profile")
      req.kind = OracleRequest::Kind::kAltPhillips;
    else if (k == "two_phase_jet_1d")
      req.kind = OracleRequest::Kind::kTwoPhaseJet;
    else if (k == "brute_force_minimizer_1d")
      req.kind = OracleRequest::Kind::kBruteForce;
    else
      config_fail("oracle.kind", "unknown oracle '" + k + "'");
    if (o.contains("fb_location")) req.fb_location = get_number(o["fb_location"], "oracle.fb_location");
    if (o.contains("scan_resolution")) req.scan_resolution = get_number(o["scan_resolution"], "oracle.scan_resolution");
    if (o.contains("newton_steps")) req.newton_steps = get_int(o["newton_steps"], "oracle.newton_steps");
    if (o.contains("starts")) req.starts = get_int(o["starts"], "oracle.starts");
    if (o.contains("max_sweeps")) req.max_sweeps = get_int(o["max_sweeps"], "oracle.max_sweeps");
    if (!(req.scan_resolution > 0.0 && req.scan_resolution < 0.5)) config_fail("oracle.scan_resolution", "must lie in (0, 0.5)");
    if (req.newton_steps < 0) config_fail("oracle.newton_steps", "must be >= 0");
    if (req.starts < 1) config_fail("oracle.starts", "must be >= 1");
    if (req.max_sweeps < 1) config_fail("oracle.max_sweeps", "must be >= 1");
    cfg.oracle = req;
  }

  if (j.contains("sweep")) {
    const Json& s = j["sweep"];
    reject_unknown(s, "sweep", {"p", "gamma", "q", "source_amplitude"});
    SweepRequest req;
    req.p = s.contains("p") ? get_numbers(s["p"], "sweep.p") : std::vector<double>{cfg.problem.p};
    req.gamma = s.contains("gamma") ? get_numbers(s["gamma"], "sweep.gamma") : std::vector<double>{cfg.problem.gamma};
    req.q = s.contains("q") ? get_numbers(s["q"], "sweep.q", true) : std::vector<double>{cfg.problem.source.q};
    if (s.contains("source_amplitude")) req.source_amplitude = get_number(s["source_amplitude"], "sweep.source_amplitude");
    if (req.p.empty() || req.gamma.empty() || req.q.empty()) config_fail("sweep", "parameter lists must be nonempty");
    for (double p : req.p)
      if (!(p >= 2.0)) config_fail("sweep.p", "entries must be >= 2");
    for (double g : req.gamma)
      if (!(g >= 0.0 && g <= 1.0)) config_fail("sweep.gamma", "entries must lie in [0, 1]");
    for (double q : req.q)
      if (!(q > 1.0)) config_fail("sweep.q", "entries must exceed 1");
    cfg.sweep = req;
  }

  if (j.contains("input")) {
    const Json& in = j["input"];
    reject_unknown(in, "input", {"solution"});
    if (!in.contains("solution") || !in["solution"].is_string()) config_fail("input.solution", "expected a path");
    cfg.input_solution = in["solution"].get<std::string>();
  }
  if (j.contains("output")) {
    const Json& o = j["output"];
    reject_unknown(o, "output", {"dir", "plot"});
    if (o.contains("dir")) {
      if (!o["dir"].is_string()) config_fail("output.dir", "expected a string");
      cfg.output_dir = o["dir"].get<std::string>();
    }
    if (o.contains("plot")) {
      if (!o["plot"].is_boolean()) config_fail("output.plot", "expected a boolean");
      cfg.plot = o["plot"].get<bool>();
    }
  }
  if (j.contains("checks")) parse_checks(j["checks"], cfg.checks);

  // Module invariants, before any compute.
  cfg.solver.seed = cfg.seed;
  if (cfg.continuation)
    for (auto& prm : cfg.continuation->params) prm.seed = cfg.seed;
  try {
    if (cfg.resolution < 2) throw Error(ErrorCode::kInvalidResolution, "resolution must be >= 2");
    if (cfg.profile_boundary && cfg.problem.domain.dim() != 1)
      throw Error(ErrorCode::kInvalidSpec, "alt_phillips boundary data needs an interval");
    cfg.problem_at(cfg.problem.p, cfg.problem.gamma).validate();
    if (!source_in_lq(cfg.problem.source, cfg.problem.domain.dim()))
      throw Error(ErrorCode::kInvalidSpec, "radial source is not in the declared L^q");
    cfg.solver.validate();
    if (cfg.continuation) cfg.continuation->validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    throw Error(ErrorCode::kConfig, e.what());
  }
  return cfg;
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kConfig, path + ": " + e.what());
  }
}

}  // namespace fblab
