#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cop/dataset.hpp"
#include "cop/solvers.hpp"
#include "cop/types.hpp"

namespace cop {

enum class ModelFamily { WeightedLogistic, CaseCohortCox };

const char* to_string(ModelFamily family) noexcept;
ModelFamily parse_family(const std::string& text);

/// Ordered term names. "marker" enters linearly, "marker_cat" as a factor of
/// tertile codes; any other name refers to a covariate.
using Formula = std::vector<std::string>;

inline constexpr const char* kMarkerTerm = "marker";
inline constexpr const char* kMarkerFactorTerm = "marker_cat";

enum class TermKind { MarkerLinear, MarkerFactor, Numeric, Categorical };

struct EncodedTerm {
  std::string name;
  TermKind kind = TermKind::Numeric;
  // Non-reference levels; the reference is the first level seen in sort order.
  std::vector<std::string> levels;
  std::string reference;
  std::vector<double> marker_levels;  // marker_cat codes, reference excluded
  double marker_reference = 0.0;
};

/// Design-matrix encoding fixed at fit time so predictions use the same
/// dummy coding. Categorical references are the lexicographically first level.
class DesignEncoding {
 public:
  DesignEncoding() = default;
  DesignEncoding(std::span<const ParticipantRecord> records, const Formula& formula, bool intercept);

  const std::vector<EncodedTerm>& terms() const noexcept { return terms_; }
  bool has_intercept() const noexcept { return intercept_; }
  bool has_marker() const noexcept;
  std::size_t columns() const noexcept { return names_.size(); }
  const std::vector<std::string>& column_names() const noexcept { return names_; }

  Eigen::RowVectorXd row(double marker, const Covariates& x) const;
  Eigen::MatrixXd matrix(std::span<const ParticipantRecord> records) const;

  // Split of the linear predictor into marker and covariate parts (the
  // intercept belongs to the covariate part).
  double marker_part(const Eigen::VectorXd& beta, double marker) const;
  double covariate_part(const Eigen::VectorXd& beta, const Covariates& x) const;

 private:
  void fill_marker(double marker, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) const;
  void fill_covariates(const Covariates& x, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) const;

  std::vector<EncodedTerm> terms_;
  std::vector<std::string> names_;
  std::vector<std::size_t> offsets_;
  bool intercept_ = false;
};

struct ConvergenceInfo {
  int iterations = 0;
  double score_norm = 0.0;  // standardized scale, weights normalized to mean 1
  double loglik = 0.0;
  bool converged = false;
};

/// Weighted Breslow cumulative baseline hazard as a right-continuous step
/// function; zero before the first event time.
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> cumhaz;

  double at(double t) const;
};

struct RiskModel {
  ModelFamily family = ModelFamily::WeightedLogistic;
  DesignEncoding encoding;
  Eigen::VectorXd beta;  // original scale, aligned with encoding.column_names()
  std::optional<BaselineHazard> baseline;
  double t_horizon = 0.0;
  ConvergenceInfo convergence;

  std::map<std::string, double> coefficients() const;
  double linear_predictor(double marker, const Covariates& x) const;
  // Risk at the analysis horizon for a given linear predictor.
  double risk_from_lp(double eta) const;
  // Survival family only: risk by time t.
  double risk_at_time(double eta, double t) const;
};

double predict_risk(const RiskModel& model, double marker, const Covariates& x);

/// Fits on exactly the supplied records with the supplied weights.
RiskModel fit_weighted_logistic(std::span<const ParticipantRecord> records,
                                std::span<const double> weights, const Formula& formula,
                                const solvers::NewtonOptions& options = {});

/// IPW fit on the phase-two vaccine recipients with weights 1 / pi-hat.
RiskModel fit_weighted_logistic(std::span<const ParticipantRecord> records,
                                const TwoPhaseDesign& design, const Formula& formula,
                                const solvers::NewtonOptions& options = {});

/// Weighted Cox fit with follow-up administratively censored at t_horizon.
/// An empty formula gives the weighted Nelson-Aalen baseline.
RiskModel fit_casecohort_cox(std::span<const ParticipantRecord> records,
                             std::span<const double> weights, const Formula& formula,
                             double t_horizon, const solvers::NewtonOptions& options = {});

RiskModel fit_casecohort_cox(std::span<const ParticipantRecord> records,
                             const TwoPhaseDesign& design, const Formula& formula, double t_horizon,
                             const solvers::NewtonOptions& options = {});

RiskModel fit_risk_model(ModelFamily family, std::span<const ParticipantRecord> records,
                         std::span<const double> weights, const Formula& formula, double t_horizon);

}  // namespace cop
