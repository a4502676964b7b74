#pragma once

#include <optional>
#include <span>

#include "cop/marginal.hpp"
#include "cop/riskreg.hpp"

namespace cop {

struct PlaceboRisk {
  double estimate = 0.0;
  RiskModel model;
  std::size_t n_at_risk = 0;
};

/// Covariate-only model fitted on the whole placebo arm (no weights) and
/// averaged over the placebo recipients at risk at the marker visit.
PlaceboRisk placebo_marginalized_risk(std::span<const ParticipantRecord> records, ModelFamily family,
                                      const Formula& covariate_terms, double t_horizon);

/// 1 - risk(s) / P(Y(0) = 1). Bands are not carried over: they must come from
/// a bootstrap that also resamples the placebo arm.
CurveEstimate cve_curve(const CurveEstimate& risk_curve, double placebo_risk);
CurveEstimate cve_curve(const CurveEstimate& risk_curve, const PlaceboRisk& placebo);

struct MediationProbe {
  double s = 0.0;
  double cve = 0.0;
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
  // CI contains zero; unset when the curve carries no bands.
  std::optional<bool> full_mediation_not_rejected;
};

/// CVE at the lowest grid point at or below the assay LLOD.
MediationProbe mediation_probe(const CurveEstimate& cve, double llod);

}  // namespace cop
