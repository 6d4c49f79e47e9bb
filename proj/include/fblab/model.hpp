#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fblab/error.hpp"
#include "fblab/mesh.hpp"

namespace fblab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Source term f
// ---------------------------------------------------------------------------

struct SourceSpec {
  enum class Family { kZero, kConstant, kRadialPower, kGridded };

  Family family = Family::kZero;
  double value = 0.0;      // constant
  double amplitude = 0.0;  // radial power A |X - X0|^{-s}
  double exponent = 0.0;   // s
  Point center{0.0, 0.0};
  std::vector<double> nodal;  // gridded: one value per node
  double q = kInf;            // declared integrability

  static SourceSpec zero() { return {}; }
  static SourceSpec constant(double c, double q = kInf) {
    SourceSpec s;
    s.family = Family::kConstant;
    s.value = c;
    s.q = q;
    return s;
  }
  static SourceSpec radial_power(double amplitude, double s, Point center, double q) {
    SourceSpec src;
    src.family = Family::kRadialPower;
    src.amplitude = amplitude;
    src.exponent = s;
    src.center = center;
    src.q = q;
    return src;
  }
  static SourceSpec gridded(std::vector<double> values, double q = kInf) {
    SourceSpec s;
    s.family = Family::kGridded;
    s.nodal = std::move(values);
    s.q = q;
    return s;
  }

  bool is_zero() const { return family == Family::kZero; }
};

inline const char* to_string(SourceSpec::Family f) {
  switch (f) {
    case SourceSpec::Family::kZero: return "zero";
    case SourceSpec::Family::kConstant: return "constant";
    case SourceSpec::Family::kRadialPower: return "radial_power";
    case SourceSpec::Family::kGridded: return "gridded";
  }
  return "?";
}

/// Whether the declared q is consistent with the family on an n-dimensional domain.
/// Only the radial power family can fail: A|X|^{-s} is in L^q iff s q < n.
inline bool source_in_lq(const SourceSpec& f, int n) {
  if (f.family != SourceSpec::Family::kRadialPower || f.exponent == 0.0) return true;
  if (std::isinf(f.q)) return f.exponent <= 0.0;
  return f.exponent * f.q < n;
}

/// Point value of f; the radial power is held constant inside distance h of its center.
inline double source_value(const SourceSpec& f, const Point& x, double h) {
  switch (f.family) {
    case SourceSpec::Family::kZero: return 0.0;
    case SourceSpec::Family::kConstant: return f.value;
    case SourceSpec::Family::kRadialPower: {
      const double r = std::max(distance(x, f.center), h);
      return f.amplitude * std::pow(r, -f.exponent);
    }
    case SourceSpec::Family::kGridded:
      throw Error(ErrorCode::kInvalidSpec, "gridded sources have no point evaluation");
  }
  return 0.0;
}

/// f at every element barycenter.
inline std::vector<double> element_source(const SourceSpec& f, const Grid& grid) {
  std::vector<double> out(grid.num_elements(), 0.0);
  if (f.family == SourceSpec::Family::kZero) return out;
  if (f.family == SourceSpec::Family::kGridded) {
    if (f.nodal.size() != grid.num_nodes())
      throw Error(ErrorCode::kShapeMismatch, "gridded source does not match the grid");
    for (std::size_t e = 0; e < out.size(); ++e) {
      const Element el = grid.element(e);
      double s = 0.0;
      for (int k = 0; k < el.count; ++k) s += f.nodal[el.vertex[k]];
      out[e] = s / el.count;
    }
    return out;
  }
  for (std::size_t e = 0; e < out.size(); ++e)
    out[e] = source_value(f, grid.barycenter(e), grid.h());
  return out;
}

// ---------------------------------------------------------------------------
// Boundary data phi
// ---------------------------------------------------------------------------

/// Dirichlet data. Endpoint data is extended affinely into an interval;
/// polynomial data is c + cx x + cy y + cxx x^2 + cxy x y + cyy y^2;
/// nodal data gives one value per grid node (only boundary entries matter).
struct BoundaryData {
  enum class Kind { kEndpoints, kPolynomial, kNodal };

  Kind kind = Kind::kEndpoints;
  double left = 0.0;
  double right = 0.0;
  std::array<double, 6> poly{};  // c, x, y, xx, xy, yy
  std::vector<double> nodal;

  static BoundaryData endpoints(double l, double r) {
    BoundaryData b;
    b.kind = Kind::kEndpoints;
    b.left = l;
    b.right = r;
    return b;
  }
  static BoundaryData polynomial(std::array<double, 6> coefs) {
    BoundaryData b;
    b.kind = Kind::kPolynomial;
    b.poly = coefs;
    return b;
  }
  static BoundaryData from_nodes(std::vector<double> values) {
    BoundaryData b;
    b.kind = Kind::kNodal;
    b.nodal = std::move(values);
    return b;
  }
};

inline const char* to_string(BoundaryData::Kind k) {
  switch (k) {
    case BoundaryData::Kind::kEndpoints: return "endpoints";
    case BoundaryData::Kind::kPolynomial: return "polynomial";
    case BoundaryData::Kind::kNodal: return "nodal";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ProblemSpec
// ---------------------------------------------------------------------------

struct ProblemSpec {
  double p = 2.0;
  double gamma = 1.0;
  double lambda_plus = 1.0;
  double lambda_minus = 0.0;
  SourceSpec source;
  BoundaryData boundary;
  Domain domain = Domain::interval(0.0, 1.0);

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidSpec, m); };
    if (!(std::isfinite(p) && p >= 2.0)) fail("p must be a finite number >= 2");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
    if (!(std::isfinite(lambda_plus) && std::isfinite(lambda_minus)))
      fail("phase weights must be finite");
    if (!(lambda_minus >= 0.0)) fail("lambda_minus must be >= 0");
    if (!(lambda_plus > lambda_minus)) fail("need lambda_plus > lambda_minus");
    if (!(source.q > 1.0)) fail("declared source integrability q must exceed 1");
    if (boundary.kind == BoundaryData::Kind::kEndpoints && domain.dim() != 1)
      fail("endpoint boundary data needs an interval domain");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(boundary.left) || !finite(boundary.right)) fail("boundary data must be finite");
    for (double c : boundary.poly)
      if (!finite(c)) fail("boundary data must be finite");
    for (double c : boundary.nodal)
      if (!finite(c)) fail("boundary data must be finite");
    if (source.family == SourceSpec::Family::kConstant && !finite(source.value))
      fail("source must be finite");
    if (source.family == SourceSpec::Family::kRadialPower &&
        !(finite(source.amplitude) && finite(source.exponent) && source.exponent >= 0.0))
      fail("radial power source needs finite amplitude and exponent >= 0");
  }

  ProblemSpec with_gamma(double g) const {
    ProblemSpec s = *this;
    s.gamma = g;
    return s;
  }
};

/// phi evaluated at every node of `grid` (interior entries hold the natural
/// extension for endpoint/polynomial data).
inline DiscreteFunction boundary_trace(const ProblemSpec& spec, const Grid& grid) {
  const BoundaryData& b = spec.boundary;
  switch (b.kind) {
    case BoundaryData::Kind::kEndpoints: {
      const Domain& d = grid.domain();
      return DiscreteFunction::sample(grid, [&](const Point& x) {
        const double t = (x[0] - d.lower(0)) / d.length(0);
        return b.left + (b.right - b.left) * t;
      });
    }
    case BoundaryData::Kind::kPolynomial:
      return DiscreteFunction::sample(grid, [&](const Point& x) {
        const auto& c = b.poly;
        return c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[0] * x[0] + c[4] * x[0] * x[1] +
               c[5] * x[1] * x[1];
      });
    case BoundaryData::Kind::kNodal:
      return DiscreteFunction(grid, b.nodal);
  }
  return DiscreteFunction(grid);
}

/// sup over boundary nodes of |phi|.
inline double boundary_sup(const ProblemSpec& spec, const Grid& grid) {
  const DiscreteFunction phi = boundary_trace(spec, grid);
  double m = 0.0;
  for (std::size_t k = 0; k < phi.size(); ++k)
    if (grid.is_boundary(k)) m = std::max(m, std::abs(phi[k]));
  return m;
}

/// max - min of phi over boundary nodes.
inline double boundary_oscillation(const ProblemSpec& spec, const Grid& grid) {
  const DiscreteFunction phi = boundary_trace(spec, grid);
  double lo = kInf, hi = -kInf;
  for (std::size_t k = 0; k < phi.size(); ++k) {
    if (!grid.is_boundary(k)) continue;
    lo = std::min(lo, phi[k]);
    hi = std::max(hi, phi[k]);
  }
  return hi - lo;
}

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

/// F_gamma(v); for gamma = 0 the zero set belongs to the lambda_minus phase.
inline double potential_value(double v, double gamma, double lambda_plus, double lambda_minus) {
  if (gamma == 0.0) return v > 0.0 ? lambda_plus : lambda_minus;
  if (v > 0.0) return lambda_plus * std::pow(v, gamma);
  if (v < 0.0) return lambda_minus * std::pow(-v, gamma);
  return 0.0;
}

inline double potential_value(double v, const ProblemSpec& spec) {
  return potential_value(v, spec.gamma, spec.lambda_plus, spec.lambda_minus);
}

/// lambda_+ (((v+)^2 + eps^2)^{gamma/2} - eps^gamma) + lambda_- (same for v-).
inline double smoothed_potential(double v, double gamma, double lambda_plus, double lambda_minus,
                                 double eps) {
  if (eps == 0.0) return potential_value(v, gamma, lambda_plus, lambda_minus);
  const double base = std::pow(eps, gamma);
  if (v > 0.0) return lambda_plus * (std::pow(v * v + eps * eps, 0.5 * gamma) - base);
  if (v < 0.0) return lambda_minus * (std::pow(v * v + eps * eps, 0.5 * gamma) - base);
  return 0.0;
}

/// Derivative of the smoothed potential. At v = 0 the subgradient 0 is used.
inline double potential_slope(double v, double gamma, double lambda_plus, double lambda_minus,
                              double eps) {
  if (gamma == 0.0)
    throw Error(ErrorCode::kUnsupportedGamma,
                "F_0 is discontinuous; reach gamma = 0 through continuation");
  if (v == 0.0) return 0.0;
  const double lam = v > 0.0 ? lambda_plus : lambda_minus;
  if (eps == 0.0) {
    const double mag = gamma == 1.0 ? 1.0 : std::pow(std::abs(v), gamma - 1.0);
    return (v > 0.0 ? 1.0 : -1.0) * lam * gamma * mag;
  }
  return lam * gamma * v * std::pow(v * v + eps * eps, 0.5 * gamma - 1.0);
}

inline double potential_slope(double v, const ProblemSpec& spec, double eps) {
  return potential_slope(v, spec.gamma, spec.lambda_plus, spec.lambda_minus, eps);
}

// ---------------------------------------------------------------------------
// Regularity exponents
// ---------------------------------------------------------------------------

/// Hoelder exponent of gradients of p-harmonic functions; unknown in general,
/// so 1/(p-1) is only a default.
inline double default_alpha_p(double p) { return p == 2.0 ? 1.0 : 1.0 / (p - 1.0); }

struct ExponentInputs {
  double p = 2.0;
  double gamma = 1.0;
  double q = kInf;
  int n = 1;
  std::optional<double> alpha_p;

  double resolved_alpha_p() const { return alpha_p.value_or(default_alpha_p(p)); }
};

enum class AlphaRegime {
  kPHarmonicCeiling,    // min attained at alpha_p: any exponent below alpha_p
  kSingularAbsorption,  // gamma / (p - gamma)
  kSourceIntegrability  // (q - n) / ((p - 1) q)
};

inline const char* to_string(AlphaRegime r) {
  switch (r) {
    case AlphaRegime::kPHarmonicCeiling: return "p_harmonic_ceiling";
    case AlphaRegime::kSingularAbsorption: return "singular_absorption";
    case AlphaRegime::kSourceIntegrability: return "source_integrability";
  }
  return "?";
}

struct AlphaPrediction {
  double alpha = 0.0;
  AlphaRegime regime = AlphaRegime::kPHarmonicCeiling;
  double singular_term = 0.0;
  double source_term = 0.0;
};

inline AlphaPrediction predicted_alpha(const ExponentInputs& in) {
  if (!(in.gamma > 0.0 && in.gamma <= 1.0))
    throw Error(ErrorCode::kInvalidExponent, "predicted_alpha needs 0 < gamma <= 1");
  if (!(in.p >= 2.0)) throw Error(ErrorCode::kInvalidExponent, "p must be >= 2");
  if (in.n < 1) throw Error(ErrorCode::kInvalidExponent, "dimension must be >= 1");
  const double ap = in.resolved_alpha_p();
  if (!(ap > 0.0 && ap <= 1.0)) throw Error(ErrorCode::kInvalidExponent, "alpha_p must lie in (0, 1]");
  if (!(in.q > in.n))
    throw Error(ErrorCode::kBorderlineRegime,
                "q <= n: no C^{1,alpha} estimate; the Log-Lipschitz (gamma = 0) theory applies");
  AlphaPrediction out;
  out.singular_term = in.gamma / (in.p - in.gamma);
  out.source_term = std::isinf(in.q) ? 1.0 / (in.p - 1.0)
                                     : (in.q - in.n) / ((in.p - 1.0) * in.q);
  const double closed = std::min(out.singular_term, out.source_term);
  if (closed < ap) {
    out.alpha = closed;
    out.regime = out.singular_term <= out.source_term ? AlphaRegime::kSingularAbsorption
                                                      : AlphaRegime::kSourceIntegrability;
  } else {
    out.alpha = ap;
    out.regime = AlphaRegime::kPHarmonicCeiling;
  }
  return out;
}

/// Smallest q for which the source no longer limits the exponent.
inline double threshold_q(double p, int n, double gamma) {
  if (gamma >= 1.0) return kInf;
  return n * (p - gamma) / (p * (1.0 - gamma));
}

/// Growth rate p/(p - gamma) of one-phase profiles away from the free boundary.
inline double growth_exponent(double p, double gamma) { return p / (p - gamma); }

/// c with c (x+)^{p/(p-gamma)} solving the one-phase equation exactly.
inline double profile_constant(double p, double gamma, double lambda_plus) {
  if (gamma == 0.0)
    throw Error(ErrorCode::kUnsupportedGamma, "gamma = 0 has no power profile; use jet_slope");
  if (!(gamma > 0.0 && gamma <= 1.0 && lambda_plus > 0.0 && p >= 2.0))
    throw Error(ErrorCode::kInvalidSpec, "profile_constant needs 0 < gamma <= 1, lambda_plus > 0");
  const double num = lambda_plus * std::pow(p - gamma, p);
  const double den = std::pow(p, p) * (p - 1.0);
  return std::pow(num / den, 1.0 / (p - gamma));
}

/// Positive-phase slope balancing the flux across a gamma = 0 free boundary.
inline double jet_slope(double p, double lambda_plus, double lambda_minus, double m_minus) {
  if (!(lambda_plus > lambda_minus && lambda_minus >= 0.0))
    throw Error(ErrorCode::kInvalidSpec, "need lambda_plus > lambda_minus >= 0");
  return std::pow(std::pow(m_minus, p) + (lambda_plus - lambda_minus) / (p - 1.0), 1.0 / p);
}

}  // namespace fblab
