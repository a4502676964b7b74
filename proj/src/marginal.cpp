#include "cop/marginal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cop/csv.hpp"
#include "cop/error.hpp"
#include "cop/quantile.hpp"

namespace cop {

const char* to_string(CurveKind kind) noexcept {
  switch (kind) {
    case CurveKind::MarginalizedRisk: return "marginalized-risk";
    case CurveKind::ControlledRiskBound: return "controlled-risk-bound";
    case CurveKind::CveNaive: return "cve-naive";
    case CurveKind::CveConservative: return "cve-conservative";
  }
  return "unknown";
}

bool is_risk_kind(CurveKind kind) noexcept {
  return kind == CurveKind::MarginalizedRisk || kind == CurveKind::ControlledRiskBound;
}

void CurveEstimate::validate() const {
  if (point.size() != grid.size()) throw Error(ErrorKind::Data, "curve: grid and estimates differ in length");
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (!(grid(i) > grid(i - 1))) throw Error(ErrorKind::Data, "curve: grid is not strictly increasing");
  if (is_risk_kind(kind) && ((point < 0.0).any() || (point > 1.0).any()))
    throw Error(ErrorKind::Data, "curve: risk estimate outside [0,1]");
  if (ci_lo && ci_hi) {
    if (ci_lo->size() != grid.size() || ci_hi->size() != grid.size())
      throw Error(ErrorKind::Data, "curve: band length mismatch");
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      // Tolerate round-off when a band collapses onto the estimate.
      const double tol = 1e-12 * (1.0 + std::abs(point(i)));
      if ((*ci_lo)(i) > point(i) + tol || point(i) > (*ci_hi)(i) + tol)
        throw Error(ErrorKind::Data, "curve: band does not bracket the estimate at s=" + csv::format(grid(i)));
    }
  }
}

Standardizer::Standardizer(const RiskModel& model, std::span<const ParticipantRecord> records,
                           const TwoPhaseDesign& design)
    : model_(&model) {
  std::vector<double> off, w;
  for (const auto& r : records) {
    if (!r.vaccine() || !r.phase_two()) continue;
    off.push_back(model.encoding.covariate_part(model.beta, r.covariates));
    w.push_back(design.weight(r));
  }
  if (off.empty()) throw Error(ErrorKind::Estimation, "marginalized risk: empty phase-two set");
  offsets_ = Eigen::Map<const Eigen::ArrayXd>(off.data(), static_cast<Eigen::Index>(off.size()));
  weights_ = Eigen::Map<const Eigen::ArrayXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

double Standardizer::risk(double s) const {
  const double m = model_->encoding.marker_part(model_->beta, s);
  double num = 0.0;
  for (Eigen::Index i = 0; i < offsets_.size(); ++i) num += weights_(i) * model_->risk_from_lp(m + offsets_(i));
  return num / weights_.sum();
}

std::pair<double, double> Standardizer::prediction_range(double s) const {
  const double m = model_->encoding.marker_part(model_->beta, s);
  double lo = 1.0, hi = 0.0;
  for (Eigen::Index i = 0; i < offsets_.size(); ++i) {
    const double r = model_->risk_from_lp(m + offsets_(i));
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return {lo, hi};
}

double marginalized_risk(const RiskModel& model, std::span<const ParticipantRecord> records,
                         const TwoPhaseDesign& design, double s) {
  return Standardizer(model, records, design).risk(s);
}

Eigen::ArrayXd default_grid(std::span<const ParticipantRecord> records, const TwoPhaseDesign& design,
                            std::size_t n, double lo_quantile, double hi_quantile) {
  if (n == 0) throw Error(ErrorKind::Config, "grid needs at least one point");
  if (!(lo_quantile >= 0.0 && lo_quantile < hi_quantile && hi_quantile <= 1.0))
    throw Error(ErrorKind::Config, "grid quantiles must satisfy 0 <= lo < hi <= 1");
  const auto p2 = phase_two_vaccine(records);
  if (p2.empty()) throw Error(ErrorKind::Estimation, "no phase-two vaccine records");
  const auto m = markers_of(p2);
  const auto w = design_weights(p2, design);
  const std::vector<double> probs{lo_quantile, hi_quantile};
  const auto q = weighted_quantiles(m, w, probs);
  if (n == 1) return Eigen::ArrayXd::Constant(1, q[0]);
  if (!(q[1] > q[0])) throw Error(ErrorKind::Data, "marker quantiles coincide; cannot build a grid");
  return Eigen::ArrayXd::LinSpaced(static_cast<Eigen::Index>(n), q[0], q[1]);
}

CurveEstimate marginalized_risk_curve(const RiskModel& model, std::span<const ParticipantRecord> records,
                                      const TwoPhaseDesign& design, const Eigen::ArrayXd& grid) {
  const auto p2 = phase_two_vaccine(records);
  if (p2.empty()) throw Error(ErrorKind::Estimation, "marginalized risk: empty phase-two set");
  const auto m = markers_of(p2);
  const auto [lo_it, hi_it] = std::minmax_element(m.begin(), m.end());

  CurveEstimate curve;
  curve.kind = CurveKind::MarginalizedRisk;
  std::vector<double> kept, trimmed;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (grid(i) < *lo_it || grid(i) > *hi_it) trimmed.push_back(grid(i));
    else kept.push_back(grid(i));
  }
  if (!trimmed.empty()) {
    std::ostringstream msg;
    msg << "support violation: trimmed grid points outside observed marker range [" << csv::format(*lo_it) << ", "
        << csv::format(*hi_it) << "]:";
    for (double t : trimmed) msg << ' ' << csv::format(t);
    curve.meta.warnings.push_back(msg.str());
  }
  if (kept.empty()) throw Error(ErrorKind::Data, "no grid point lies within the observed marker range");

  const Standardizer st(model, p2, design);
  curve.grid = Eigen::Map<const Eigen::ArrayXd>(kept.data(), static_cast<Eigen::Index>(kept.size()));
  curve.point.resize(curve.grid.size());
  for (Eigen::Index i = 0; i < curve.grid.size(); ++i) curve.point(i) = st.risk(curve.grid(i));
  curve.validate();
  return curve;
}

double risk_ratio(double r1, double r2) {
  if (!(r1 > 0.0)) throw Error(ErrorKind::Estimation, "risk ratio non-estimable: reference risk is zero");
  return r2 / r1;
}

double odds_ratio(double r1, double r2) {
  if (!(r1 > 0.0 && r1 < 1.0 && r2 > 0.0 && r2 < 1.0))
    throw Error(ErrorKind::Estimation, "odds ratio non-estimable: a marginalized risk is 0 or 1");
  return (r2 / (1.0 - r2)) / (r1 / (1.0 - r1));
}

double marginalized_rr(const RiskModel& model, std::span<const ParticipantRecord> records,
                       const TwoPhaseDesign& design, double s1, double s2) {
  if (!(s1 < s2)) throw Error(ErrorKind::Domain, "marginalized RR requires s1 < s2");
  const Standardizer st(model, records, design);
  return risk_ratio(st.risk(s1), st.risk(s2));
}

double marginalized_or(const RiskModel& model, std::span<const ParticipantRecord> records,
                       const TwoPhaseDesign& design, double s1, double s2) {
  if (!(s1 < s2)) throw Error(ErrorKind::Domain, "marginalized OR requires s1 < s2");
  const Standardizer st(model, records, design);
  return odds_ratio(st.risk(s1), st.risk(s2));
}

ScentResult find_scent(const CurveEstimate& curve, double overall_risk) {
  if (curve.size() == 0) throw Error(ErrorKind::Data, "empty curve");
  ScentResult res;
  res.gap = std::abs(curve.point(0) - overall_risk);
  for (Eigen::Index i = 1; i < curve.size(); ++i) {
    const double gap = std::abs(curve.point(i) - overall_risk);
    if (gap < res.gap) {
      res.gap = gap;
      res.index = i;
    }
  }
  res.s = curve.grid(res.index);
  if (overall_risk > 0.0 && res.gap > 0.1 * overall_risk) {
    std::ostringstream msg;
    msg << "anchor mismatch: closest marginalized risk differs from overall risk " << csv::format(overall_risk)
        << " by " << csv::format(res.gap / overall_risk * 100.0) << "%";
    res.warning = msg.str();
  }
  return res;
}

}  // namespace cop
