#pragma once

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fblab/config.hpp"
#include "fblab/diagnostics.hpp"
#include "fblab/oracle.hpp"
#include "fblab/solver.hpp"

namespace fblab {

inline constexpr const char* kReportSchema = "fblab-report/1";

/// JSON has no inf/nan; they are written as the strings "inf", "-inf", "nan".
inline Json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline Json json_numbers(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

inline Json json_point(const Point& x, int dim) {
  return dim == 1 ? Json::array({json_number(x[0])}) : Json::array({json_number(x[0]), json_number(x[1])});
}

inline Json to_json(const Domain& d) {
  if (d.dim() == 1) return {{"interval", {d.lower(0), d.upper(0)}}};
  return {{"rectangle", {d.lower(0), d.upper(0), d.lower(1), d.upper(1)}}};
}

inline Json to_json(const ProblemSpec& s) {
  Json b;
  switch (s.boundary.kind) {
    case BoundaryData::Kind::kEndpoints: b = {{"endpoints", {s.boundary.left, s.boundary.right}}}; break;
    case BoundaryData::Kind::kPolynomial: b = {{"polynomial", s.boundary.poly}}; break;
    case BoundaryData::Kind::kNodal: b = {{"nodal", {{"count", s.boundary.nodal.size()}}}}; break;
  }
  Json f = {{"family", to_string(s.source.family)}, {"q", json_number(s.source.q)}};
  if (s.source.family == SourceSpec::Family::kConstant) f["value"] = s.source.value;
  if (s.source.family == SourceSpec::Family::kRadialPower) {
    f["amplitude"] = s.source.amplitude;
    f["exponent"] = s.source.exponent;
    f["center"] = json_point(s.source.center, s.domain.dim());
  }
  return {{"p", s.p},
          {"gamma", s.gamma},
          {"lambda_plus", s.lambda_plus},
          {"lambda_minus", s.lambda_minus},
          {"domain", to_json(s.domain)},
          {"boundary", b},
          {"source", f}};
}

inline Json to_json(const SolverParams& p) {
  return {{"method", to_string(p.method)}, {"eps0", p.eps0},           {"eps_shrink", p.eps_shrink},
          {"eps_min", p.eps_min},          {"initial_step", p.initial_step}, {"step_shrink", p.step_shrink},
          {"armijo", p.armijo},            {"tol_energy", p.tol_energy}, {"tol_grad", p.tol_grad},
          {"max_iter", p.max_iter},        {"coarsest", p.coarsest},     {"polish_trials", p.polish_trials},
          {"polish_rounds", p.polish_rounds}, {"polish_tol", p.polish_tol}, {"seed", p.seed}};
}

inline Json to_json(const EnergyBreakdown& e) {
  return {{"dirichlet", e.dirichlet}, {"potential", e.potential}, {"source", e.source}, {"total", e.total}};
}

inline bool trace_monotone(const std::vector<TraceEntry>& t) {
  for (std::size_t k = 1; k < t.size(); ++k)
    if (t[k].energy > t[k - 1].energy) return false;
  return true;
}

/// Solution values go to CSV; the report keeps scalars and the stage layout.
inline Json to_json(const SolveReport& r) {
  return {{"gamma", r.gamma},
          {"resolution", r.u.grid().cells_per_axis()},
          {"converged", r.converged},
          {"energy", to_json(r.energy)},
          {"initial_energy", r.initial_energy},
          {"iterations", r.trace.empty() ? 0 : r.trace.back().iteration},
          {"trace_monotone", trace_monotone(r.trace)},
          {"stage_epsilons", json_numbers(r.stage_epsilons)},
          {"stage_iterations", r.stage_iterations},
          {"grad_norm", json_number(r.grad_norm)},
          {"residual", {{"max", r.residual_max}, {"mean", r.residual_mean}, {"count", r.residual_count},
                        {"band", r.residual_band}}},
          {"sup_norm", r.sup_norm},
          {"w1p_norm", r.w1p_norm},
          {"levels", r.levels},
          {"zero_set_moves", r.zero_set_moves}};
}

inline Json to_json(const StageSummary& s) {
  return {{"gamma", s.gamma},         {"start_energy", s.start_energy}, {"energy", s.energy},
          {"j0", s.j0},               {"w1p_gap", json_number(s.w1p_gap)}, {"iterations", s.iterations},
          {"converged", s.converged}, {"trace_monotone", s.trace_monotone},
          {"truncated_energy", s.truncated_energy}};
}

inline Json to_json(const FitResult& f) {
  return {{"exponent", json_number(f.exponent)}, {"constant", json_number(f.constant)},
          {"r_squared", json_number(f.r_squared)}, {"radii", json_numbers(f.radii)},
          {"values", json_numbers(f.values)},       {"degenerate", f.degenerate}};
}

inline Json to_json(const NondegeneracyResult& n) {
  return {{"c_growth", json_number(n.c_growth)},
          {"c_sup", json_number(n.c_sup)},
          {"radii", json_numbers(n.radii)},
          {"growth_by_radius", json_numbers(n.growth_by_radius)},
          {"sup_by_radius", json_numbers(n.sup_by_radius)}};
}

inline Json to_json(const OscillationFit& o) {
  Json j = to_json(o.fit);
  j["alpha"] = json_number(o.alpha);
  j["bmo"] = o.bmo;
  return j;
}

inline Json to_json(const ModulusResult& m) {
  return {{"form", to_string(m.form)},
          {"alpha", m.alpha},
          {"constant", json_number(m.constant)},
          {"max_slope", json_number(m.max_slope)},
          {"pairs", m.pairs}};
}

inline Json flux_json(const std::vector<FluxSample>& flux, const ProblemSpec& spec, int dim) {
  Json pts = Json::array();
  double worst = 0.0;
  std::size_t used = 0;
  for (const auto& f : flux) {
    pts.push_back({{"x", json_point(f.x, dim)},
                   {"slope_plus", f.slope_plus},
                   {"slope_minus", f.slope_minus},
                   {"residual", f.residual},
                   {"skipped", f.skipped}});
    if (!f.skipped) {
      worst = std::max(worst, std::abs(f.residual));
      ++used;
    }
  }
  const double jump = (spec.lambda_plus - spec.lambda_minus) / (spec.p - 1.0);
  return {{"points", pts},
          {"evaluated", used},
          {"empty", used == 0},
          {"max_abs_residual", worst},
          {"jump", jump},
          {"relative", used ? json_number(worst / jump) : Json(nullptr)}};
}

inline Json to_json(const RegularityReport& r, const ProblemSpec& spec, int dim) {
  Json fb = Json::array();
  for (const auto& q : r.free_boundary.points)
    fb.push_back({{"x", json_point(q.x, dim)}, {"sides", {q.side_a, q.side_b}}});
  Json j = {{"free_boundary", {{"count", r.free_boundary.size()}, {"points", fb}}},
            {"flux", flux_json(r.flux, spec, dim)},
            {"lipschitz", to_json(r.lipschitz)},
            {"log_lipschitz", to_json(r.log_lipschitz)},
            {"notes", r.notes}};
  j["growth"] = r.growth ? to_json(*r.growth) : Json(nullptr);
  j["nondegeneracy"] = r.nondegeneracy ? to_json(*r.nondegeneracy) : Json(nullptr);
  j["oscillation"] = r.oscillation ? to_json(*r.oscillation) : Json(nullptr);
  j["oscillation_center"] = r.oscillation_center ? json_point(*r.oscillation_center, dim) : Json(nullptr);
  return j;
}

inline Json to_json(const OracleSolution& o) {
  Json params = Json::object();
  for (const auto& [k, v] : o.parameters) params[k] = json_number(v);
  return {{"kind", o.kind},
          {"parameters", params},
          {"energy", json_number(o.energy)},
          {"flux_residual", json_number(o.flux_residual)},
          {"note", o.note}};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_trace_csv(std::ostream& os, const std::vector<TraceEntry>& t) {
  os << "iteration,stage,epsilon,energy,grad_norm\n";
  for (const auto& e : t)
    os << e.iteration << ',' << e.stage << ',' << format_double(e.epsilon) << ',' << format_double(e.energy)
       << ',' << format_double(e.grad_norm) << '\n';
}

/// Columns `radius,<name>` for a fit's per-radius data.
inline void write_fit_csv(std::ostream& os, const std::string& name, const std::vector<double>& radii,
                          const std::vector<double>& values) {
  os << "radius," << name << '\n';
  for (std::size_t k = 0; k < radii.size(); ++k)
    os << format_double(radii[k]) << ',' << format_double(values[k]) << '\n';
}

/// Collects artifacts in memory and writes them in one pass, in name order.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::ostringstream& open(const std::string& name) {
    for (auto& [n, s] : files_)
      if (n == name) return *s;
    files_.emplace_back(name, std::make_unique<std::ostringstream>());
    return *files_.back().second;
  }
  void put(const std::string& name, const std::string& content) { open(name) << content; }
  void put_json(const std::string& name, const Json& j) { open(name) << j.dump(2) << '\n'; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : files_) out.push_back(f.first);
    std::sort(out.begin(), out.end());
    return out;
  }

  void flush() const {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir_.string() + ": " + ec.message());
    for (const auto& name : names())
      for (const auto& [n, s] : files_)
        if (n == name) {
          std::ofstream out(dir_ / n, std::ios::binary);
          out << s->str();
          if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir_ / n).string());
        }
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::unique_ptr<std::ostringstream>>> files_;
};

}  // namespace fblab
