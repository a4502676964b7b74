#pragma once

#include <compare>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cop/types.hpp"

namespace cop {

/// Column mapping for trial CSV files. Either `outcome` or the `time` and
/// `event` pair (with `t_horizon`) must be given.
struct TrialSchema {
  std::string id = "id";
  std::string arm = "arm";
  std::optional<std::string> outcome;
  std::optional<std::string> time;
  std::optional<std::string> event;
  std::optional<double> t_horizon;
  std::string sampled = "sampled";
  std::string marker = "marker";
  std::vector<std::string> covariates;
  std::set<std::string> categorical;
  std::optional<std::string> design_stratum;
  std::optional<std::string> weight;

  static TrialSchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct RowError {
  std::size_t line = 0;
  std::string id;
  std::string message;
};

struct LoadResult {
  std::vector<ParticipantRecord> records;
  std::vector<RowError> errors;
  // Lexicographically ordered levels of each categorical covariate.
  std::map<std::string, std::vector<std::string>> levels;
};

LoadResult parse_trial_csv(std::istream& in, const TrialSchema& schema);
LoadResult load_trial_csv(const std::filesystem::path& path, const TrialSchema& schema);

/// Serializes records with the column layout described by `schema`.
std::string write_trial_csv(std::span<const ParticipantRecord> records, const TrialSchema& schema);

struct StratumKey {
  bool is_case = false;
  std::string design;
  auto operator<=>(const StratumKey&) const = default;
};

std::string to_string(const StratumKey& key);

/// Estimated phase-two sampling probabilities pi(x, y) for the vaccine arm.
struct TwoPhaseDesign {
  std::map<StratumKey, double> pi_hat;
  std::map<StratumKey, std::size_t> n_total;
  std::map<StratumKey, std::size_t> n_sampled;
  bool uses_design_strata = false;

  StratumKey stratum_of(const ParticipantRecord& r) const;
  double pi(const ParticipantRecord& r) const;
  // 1 / pi, unless the record carries an explicit weight.
  double weight(const ParticipantRecord& r) const;
};

TwoPhaseDesign estimate_sampling_probs(std::span<const ParticipantRecord> records,
                                       bool use_design_strata = false);

std::vector<ParticipantRecord> phase_two_vaccine(std::span<const ParticipantRecord> records);
std::vector<ParticipantRecord> arm_records(std::span<const ParticipantRecord> records, Arm arm);
std::vector<double> design_weights(std::span<const ParticipantRecord> records,
                                   const TwoPhaseDesign& design);
std::vector<double> markers_of(std::span<const ParticipantRecord> records);

struct CohortSummary {
  std::size_t n_total = 0;
  std::size_t n_vaccine = 0;
  std::size_t n_placebo = 0;
  std::size_t n_cases_vaccine = 0;
  std::size_t n_cases_placebo = 0;
  std::size_t n_phase2 = 0;
  double overall_vaccine_risk = 0.0;
  std::map<double, double> marker_quantiles;
};

CohortSummary summarize_cohort(std::span<const ParticipantRecord> records,
                               const TwoPhaseDesign& design);

struct TertileCoding {
  double cut_low = 0.0;
  double cut_high = 0.0;
  std::vector<ParticipantRecord> records;

  int category(double marker) const noexcept;
};

/// Cuts at the weighted 1/3 and 2/3 quantiles of phase-two vaccine markers;
/// values equal to a cut fall in the lower category. Markers of the returned
/// copy are replaced by their category 0, 1 or 2.
TertileCoding tertile_code(std::span<const ParticipantRecord> records,
                           const TwoPhaseDesign& design);

std::vector<ParticipantRecord> apply_tertile_cuts(std::span<const ParticipantRecord> records,
                                                  double cut_low, double cut_high);

/// Maps each record to a level label of one covariate. Categorical covariates
/// use their labels (lexicographic order); numeric ones with at most ten
/// distinct values use the formatted values, otherwise a split at the median.
class CovariateStratifier {
 public:
  CovariateStratifier(std::span<const ParticipantRecord> records, std::string name);

  const std::string& name() const noexcept { return name_; }
  const std::vector<std::string>& levels() const noexcept { return levels_; }
  std::string level_of(const ParticipantRecord& r) const;

 private:
  std::string name_;
  std::vector<std::string> levels_;
  std::optional<double> split_;
};

struct PositivityRow {
  std::string covariate;
  std::string level;
  std::size_t n = 0;
  double min = 0, q05 = 0, q50 = 0, q95 = 0, max = 0;
  std::optional<double> coverage;  // share of the pooled 5%-95% range
  bool flagged = false;
};

/// Marker spread within each covariate stratum of the phase-two vaccine arm.
/// The first row is the pooled summary (covariate "(pooled)").
std::vector<PositivityRow> positivity_report(std::span<const ParticipantRecord> records,
                                             const TwoPhaseDesign& design,
                                             std::span<const std::string> covariates,
                                             double min_coverage = 0.80);

}  // namespace cop
