#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>

namespace cop {

enum class Arm : int { Placebo = 0, Vaccine = 1 };

// Numeric covariates hold a double, categorical ones their level label.
using CovariateValue = std::variant<double, std::string>;
using Covariates = std::map<std::string, CovariateValue, std::less<>>;

struct SurvivalTime {
  double time = 0.0;  // days since marker visit
  bool event = false;
};

/// One trial participant. `marker` is the log10 biomarker, only observed for
/// records in phase two (`sampled`).
struct ParticipantRecord {
  std::string id;
  Arm arm = Arm::Vaccine;
  Covariates covariates;
  std::optional<double> marker;
  bool sampled = false;
  bool outcome = false;
  std::optional<SurvivalTime> survival;
  std::optional<double> weight_override;
  std::string design_stratum;

  bool vaccine() const noexcept { return arm == Arm::Vaccine; }
  bool phase_two() const noexcept { return sampled && marker.has_value(); }
};

// Throws Error(Row) when the record breaks a record-level invariant.
void validate_record(const ParticipantRecord& record);

std::string covariate_label(const CovariateValue& value);

}  // namespace cop
