#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cop/error.hpp"
#include "cop/marginal.hpp"

namespace cop {

// ---------------------------------------------------------------------------
// Closed-form quantities

/// E-value of a risk ratio: (1 + sqrt(1 - rr)) / rr for rr < 1. Ratios above
/// one are evaluated through their reciprocal, which gives rr + sqrt(rr (rr - 1)).
template <std::floating_point T>
T evalue_point(T rr) {
  using std::sqrt;
  if (!(rr > T(0)) || !std::isfinite(static_cast<double>(rr)))
    throw Error(ErrorKind::Domain, "E-value requires a positive finite risk ratio");
  if (rr > T(1)) rr = T(1) / rr;
  return (T(1) + sqrt(T(1) - rr)) / rr;
}

/// E-value for the upper confidence limit: 1 when the interval reaches the
/// null, otherwise the point formula applied to the limit.
template <std::floating_point T>
T evalue_ul(T rr_ul) {
  if (!(rr_ul > T(0))) throw Error(ErrorKind::Domain, "E-value requires a positive upper limit");
  if (rr_ul >= T(1)) return T(1);
  return evalue_point(rr_ul);
}

/// Bias factor RR_UD * RR_EU / (RR_UD + RR_EU - 1); symmetric, >= 1.
template <std::floating_point T>
T bias_factor(T rr_ud, T rr_eu) {
  if (!(rr_ud >= T(1)) || !(rr_eu >= T(1)))
    throw Error(ErrorKind::Domain, "bias factor arguments must be >= 1");
  return rr_ud * rr_eu / ((rr_ud - T(1)) + rr_eu);
}

template <std::floating_point T>
T conservative_rr(T rr_m, T b) {
  if (!(rr_m > T(0))) throw Error(ErrorKind::Domain, "conservative RR requires rr > 0");
  if (!(b >= T(1))) throw Error(ErrorKind::Domain, "bias factor must be >= 1");
  return rr_m * b;
}

struct EvalueResult {
  double e_point = 1.0;
  double e_ul = 1.0;
  double rr_point = 1.0;
  std::optional<double> rr_ul;
  // Set when rr_point >= 1 and the E-value was taken on 1 / rr.
  bool reciprocal = false;
};

EvalueResult evalues(double rr_point, std::optional<double> rr_ul);

// ---------------------------------------------------------------------------
// Sensitivity specification

enum class SensitivityMode { CommonLogLinear, FixedPairOnly };

struct SensitivitySpec {
  double rr_ud_fix = 1.0;
  double rr_eu_fix = 1.0;
  double s1_fix = 0.0;
  double s2_fix = 1.0;
  double gamma = 0.0;
  SensitivityMode mode = SensitivityMode::CommonLogLinear;

  /// RR_UD = RR_EU = RR_U with log RR_U(s1, s2) = gamma (s2 - s1), calibrated
  /// so RR_U(s1_fix, s2_fix) = rr_u_fix.
  static SensitivitySpec common(double rr_u_fix, double s1_fix, double s2_fix);
  /// Separate magnitudes, valid at the fixed pair only.
  static SensitivitySpec fixed_pair(double rr_ud_fix, double rr_eu_fix, double s1_fix, double s2_fix);

  void validate() const;
  std::string hash() const;
};

double rru_at(const SensitivitySpec& spec, double s1, double s2);

/// B(s1, s2). In fixed-pair mode only the fixed pair itself is defined.
double bias_at(const SensitivitySpec& spec, double s1, double s2);

/// Anchored bound: point(s) * B(scent, s) for s >= scent and
/// point(s) / B(s, scent) below it, applied alike to the bands. Results are
/// clamped to [0, 1] with a warning per clamped value.
CurveEstimate conservative_risk_curve(const CurveEstimate& curve, double scent, const SensitivitySpec& spec);

/// Per-grid-point multipliers used by conservative_risk_curve.
Eigen::ArrayXd anchor_multipliers(const Eigen::ArrayXd& grid, double scent, const SensitivitySpec& spec);

struct SurfaceCell {
  double s1 = 0.0;
  double s2 = 0.0;
  double rr_u = 1.0;
  double b = 1.0;
};

/// RR_U and B over all grid pairs with s1 <= s2, rows ordered by s1 then s2.
std::vector<SurfaceCell> rru_surface(const SensitivitySpec& spec, const Eigen::ArrayXd& grid);

}  // namespace cop
