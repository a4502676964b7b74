#include "cop/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cop/error.hpp"

namespace cop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct LevelStats {
  double n = 0, cases = 0;      // vaccine arm, phase one
  double w = 0, wm = 0;         // phase two, weighted marker sum
};

// Statistics for every (covariate, non-reference level) pair, RR then mean
// difference, using level sets fixed on the original data.
Eigen::VectorXd association_stats(std::span<const ParticipantRecord> records,
                                  const std::vector<CovariateStratifier>& strat, bool use_design_strata) {
  const auto design = estimate_sampling_probs(records, use_design_strata);
  std::size_t width = 0;
  for (const auto& st : strat) width += 2 * (st.levels().size() - 1);
  Eigen::VectorXd out(static_cast<Eigen::Index>(width));
  Eigen::Index pos = 0;
  for (const auto& st : strat) {
    std::vector<LevelStats> acc(st.levels().size());
    for (const auto& r : records) {
      if (!r.vaccine()) continue;
      const auto label = st.level_of(r);
      auto it = std::find(st.levels().begin(), st.levels().end(), label);
      if (it == st.levels().end()) continue;
      auto& a = acc[static_cast<std::size_t>(it - st.levels().begin())];
      a.n += 1;
      a.cases += r.outcome ? 1 : 0;
      if (r.phase_two()) {
        const double w = design.weight(r);
        a.w += w;
        a.wm += w * *r.marker;
      }
    }
    const auto& ref = acc.front();
    for (std::size_t k = 1; k < acc.size(); ++k) {
      const auto& a = acc[k];
      const double r_ref = ref.n > 0 ? ref.cases / ref.n : kNaN;
      const double r_lvl = a.n > 0 ? a.cases / a.n : kNaN;
      out(pos++) = r_ref > 0 ? r_lvl / r_ref : kNaN;
      out(pos++) = (a.w > 0 && ref.w > 0) ? a.wm / a.w - ref.wm / ref.w : kNaN;
    }
  }
  return out;
}

}  // namespace

std::vector<ConfounderRow> confounder_association_table(std::span<const ParticipantRecord> records,
                                                        const TwoPhaseDesign& design,
                                                        std::span<const std::string> covariates,
                                                        const std::optional<BootstrapPlan>& plan) {
  const auto vaccine = arm_records(records, Arm::Vaccine);
  std::vector<ConfounderRow> rows;
  std::vector<CovariateStratifier> strat;
  for (const auto& name : covariates) {
    CovariateStratifier st(vaccine, name);
    if (st.levels().size() < 2) {
      ConfounderRow row;
      row.covariate = name;
      row.level = st.levels().empty() ? "" : st.levels().front();
      row.reference = row.level;
      row.n_level = row.n_reference = vaccine.size();
      row.estimable = false;
      row.outcome_rr = row.marker_diff = kNaN;
      row.note = "not estimable: single level";
      rows.push_back(row);
      continue;
    }
    strat.push_back(st);
  }
  if (strat.empty()) return rows;

  const auto point = association_stats(records, strat, design.uses_design_strata);
  std::optional<BootstrapResult> boot;
  if (plan) {
    boot = run_bootstrap(records, *plan, [&](std::span<const ParticipantRecord> sample) {
      return association_stats(sample, strat, design.uses_design_strata);
    });
  }

  Eigen::Index pos = 0;
  for (const auto& st : strat) {
    std::vector<std::size_t> counts(st.levels().size(), 0);
    for (const auto& r : vaccine) {
      auto it = std::find(st.levels().begin(), st.levels().end(), st.level_of(r));
      if (it != st.levels().end()) ++counts[static_cast<std::size_t>(it - st.levels().begin())];
    }
    for (std::size_t k = 1; k < st.levels().size(); ++k) {
      ConfounderRow row;
      row.covariate = st.name();
      row.level = st.levels()[k];
      row.reference = st.levels().front();
      row.n_level = counts[k];
      row.n_reference = counts.front();
      row.outcome_rr = point(pos);
      row.marker_diff = point(pos + 1);
      if (!std::isfinite(row.outcome_rr)) row.note = "outcome RR not estimable (no reference cases)";
      if (!std::isfinite(row.marker_diff)) {
        if (!row.note.empty()) row.note += "; ";
        row.note += "marker difference not estimable (empty phase-two level)";
      }
      if (boot) {
        auto fin = [](double v) { return std::isfinite(v) ? std::optional<double>(v) : std::nullopt; };
        row.rr_lo = fin(boot->ci_lo(pos));
        row.rr_hi = fin(boot->ci_hi(pos));
        row.diff_lo = fin(boot->ci_lo(pos + 1));
        row.diff_hi = fin(boot->ci_hi(pos + 1));
      }
      pos += 2;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace cop
