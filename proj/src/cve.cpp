#include "cop/cve.hpp"

#include "cop/csv.hpp"
#include "cop/error.hpp"

namespace cop {

PlaceboRisk placebo_marginalized_risk(std::span<const ParticipantRecord> records, ModelFamily family,
                                      const Formula& covariate_terms, double t_horizon) {
  for (const auto& t : covariate_terms)
    if (t == kMarkerTerm || t == kMarkerFactorTerm)
      throw Error(ErrorKind::Config, "placebo model must not include marker terms");
  std::vector<ParticipantRecord> placebo;
  for (const auto& r : records) {
    if (r.vaccine()) continue;
    if (family == ModelFamily::CaseCohortCox && (!r.survival || r.survival->time < 0.0)) continue;
    placebo.push_back(r);
  }
  if (placebo.empty()) throw Error(ErrorKind::Estimation, "placebo arm is empty");
  std::size_t events = 0;
  for (const auto& r : placebo) events += r.outcome;
  if (events == 0) throw Error(ErrorKind::Estimation, "placebo risk non-estimable: no placebo events");

  const std::vector<double> ones(placebo.size(), 1.0);
  PlaceboRisk out;
  out.model = fit_risk_model(family, placebo, ones, covariate_terms, t_horizon);
  double sum = 0.0;
  for (const auto& r : placebo) sum += out.model.risk_from_lp(out.model.encoding.covariate_part(out.model.beta, r.covariates));
  out.n_at_risk = placebo.size();
  out.estimate = sum / static_cast<double>(placebo.size());
  if (!(out.estimate > 0.0 && out.estimate < 1.0))
    throw Error(ErrorKind::Estimation, "placebo risk estimate outside (0,1)");
  return out;
}

CurveEstimate cve_curve(const CurveEstimate& risk_curve, double placebo_risk) {
  if (!(placebo_risk > 0.0)) throw Error(ErrorKind::Domain, "CVE requires a positive placebo risk");
  if (!is_risk_kind(risk_curve.kind)) throw Error(ErrorKind::Data, "CVE needs a risk curve");
  CurveEstimate out;
  out.grid = risk_curve.grid;
  out.kind = risk_curve.kind == CurveKind::MarginalizedRisk ? CurveKind::CveNaive : CurveKind::CveConservative;
  out.meta = risk_curve.meta;
  // The denominator is one scalar for every s.
  out.point = 1.0 - risk_curve.point / placebo_risk;
  return out;
}

CurveEstimate cve_curve(const CurveEstimate& risk_curve, const PlaceboRisk& placebo) {
  return cve_curve(risk_curve, placebo.estimate);
}

MediationProbe mediation_probe(const CurveEstimate& cve, double llod) {
  if (cve.size() == 0 || !(cve.grid(0) <= llod))
    throw Error(ErrorKind::Estimation, "mediation probe not evaluable: no grid point at or below LLOD " +
                                           csv::format(llod));
  MediationProbe p;
  p.s = cve.grid(0);
  p.cve = cve.point(0);
  if (cve.ci_lo && cve.ci_hi) {
    p.ci_lo = (*cve.ci_lo)(0);
    p.ci_hi = (*cve.ci_hi)(0);
    p.full_mediation_not_rejected = *p.ci_lo <= 0.0 && 0.0 <= *p.ci_hi;
  }
  return p;
}

}  // namespace cop
