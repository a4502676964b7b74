#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cop/bootstrap.hpp"
#include "cop/dataset.hpp"

namespace cop {

/// One non-reference level of a covariate against its reference level.
struct ConfounderRow {
  std::string covariate;
  std::string level;
  std::string reference;
  std::size_t n_level = 0;      // vaccine recipients at this level
  std::size_t n_reference = 0;
  bool estimable = true;
  double outcome_rr = 0.0;      // P(Y=1 | level) / P(Y=1 | reference), vaccine arm
  double marker_diff = 0.0;     // IPW mean marker at level minus reference
  std::optional<double> rr_lo, rr_hi, diff_lo, diff_hi;
  std::string note;
};

/// Covariate associations with the outcome (all vaccine recipients) and with
/// the marker (phase-two vaccine recipients, weighted by 1 / pi-hat). The
/// first level in sort order is the reference. With a bootstrap plan the rows
/// also carry percentile intervals.
std::vector<ConfounderRow> confounder_association_table(std::span<const ParticipantRecord> records,
                                                        const TwoPhaseDesign& design,
                                                        std::span<const std::string> covariates,
                                                        const std::optional<BootstrapPlan>& plan = std::nullopt);

}  // namespace cop
