#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cop/dataset.hpp"
#include "cop/riskreg.hpp"

namespace cop {

enum class CurveKind { MarginalizedRisk, ControlledRiskBound, CveNaive, CveConservative };

const char* to_string(CurveKind kind) noexcept;
bool is_risk_kind(CurveKind kind) noexcept;

struct CurveMeta {
  std::optional<double> scent;
  std::string sensitivity_hash;
  std::size_t bootstrap_replicates = 0;
  std::vector<std::string> warnings;
};

struct CurveEstimate {
  Eigen::ArrayXd grid;
  Eigen::ArrayXd point;
  std::optional<Eigen::ArrayXd> ci_lo;
  std::optional<Eigen::ArrayXd> ci_hi;
  CurveKind kind = CurveKind::MarginalizedRisk;
  CurveMeta meta;

  Eigen::Index size() const noexcept { return grid.size(); }
  // Throws Error(Data) if the grid is not strictly increasing, risks leave
  // [0,1] or bands do not bracket the point estimate.
  void validate() const;
};

/// Phase-two vaccine recipients prepared for repeated standardization:
/// each record's covariate contribution to the linear predictor and its
/// 1 / pi-hat weight.
class Standardizer {
 public:
  Standardizer(const RiskModel& model, std::span<const ParticipantRecord> records,
               const TwoPhaseDesign& design);

  // sum_i w_i r(s, X_i) / sum_i w_i
  double risk(double s) const;
  // Unweighted range of r(s, X_i) over the phase-two records.
  std::pair<double, double> prediction_range(double s) const;
  std::size_t size() const noexcept { return static_cast<std::size_t>(offsets_.size()); }

 private:
  const RiskModel* model_;
  Eigen::ArrayXd offsets_;
  Eigen::ArrayXd weights_;
};

double marginalized_risk(const RiskModel& model, std::span<const ParticipantRecord> records,
                         const TwoPhaseDesign& design, double s);

/// Evenly spaced grid between weighted marker quantiles of the phase-two
/// vaccine arm (default 101 points over [2.5%, 97.5%]).
Eigen::ArrayXd default_grid(std::span<const ParticipantRecord> records, const TwoPhaseDesign& design,
                            std::size_t n = 101, double lo_quantile = 0.025, double hi_quantile = 0.975);

/// Grid points outside the observed phase-two marker range are dropped and
/// listed in a warning.
CurveEstimate marginalized_risk_curve(const RiskModel& model, std::span<const ParticipantRecord> records,
                                      const TwoPhaseDesign& design, const Eigen::ArrayXd& grid);

double marginalized_rr(const RiskModel& model, std::span<const ParticipantRecord> records,
                       const TwoPhaseDesign& design, double s1, double s2);
double marginalized_or(const RiskModel& model, std::span<const ParticipantRecord> records,
                       const TwoPhaseDesign& design, double s1, double s2);

// Same contrasts from already-computed marginalized risks.
double risk_ratio(double r1, double r2);
double odds_ratio(double r1, double r2);

struct ScentResult {
  double s = 0.0;
  Eigen::Index index = 0;
  double gap = 0.0;  // |r_M(s) - overall risk|
  std::optional<std::string> warning;
};

/// Grid point whose marginalized risk is closest to the overall vaccine-arm
/// risk; ties go to the smaller marker value. A relative gap above 10% is
/// reported as a warning.
ScentResult find_scent(const CurveEstimate& curve, double overall_risk);

}  // namespace cop
