#include "cop/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "cop/csv.hpp"
#include "cop/error.hpp"
#include "cop/quantile.hpp"

namespace cop {

void validate_record(const ParticipantRecord& r) {
  if (r.id.empty()) throw Error(ErrorKind::Row, "empty participant id");
  if (r.marker && !r.sampled) throw Error(ErrorKind::Row, "marker without sampling");
  if (r.marker && !std::isfinite(*r.marker)) throw Error(ErrorKind::Row, "marker is not finite");
  if (r.survival && !(r.survival->time >= 0.0))
    throw Error(ErrorKind::Row, "survival time must be nonnegative");
  if (r.weight_override && !(*r.weight_override > 0.0))
    throw Error(ErrorKind::Row, "weight override must be positive");
}

std::string covariate_label(const CovariateValue& value) {
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  return csv::format(std::get<double>(value));
}

// ---------------------------------------------------------------------------
// Schema

TrialSchema TrialSchema::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Schema, "schema must be a JSON object");
  TrialSchema s;
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) throw Error(ErrorKind::Schema, std::string("schema field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  try {
    if (auto v = opt_string("id")) s.id = *v;
    if (auto v = opt_string("arm")) s.arm = *v;
    if (auto v = opt_string("sampled")) s.sampled = *v;
    if (auto v = opt_string("marker")) s.marker = *v;
    s.outcome = opt_string("outcome");
    s.time = opt_string("time");
    s.event = opt_string("event");
    s.design_stratum = opt_string("design_stratum");
    s.weight = opt_string("weight");
    if (j.contains("t_horizon") && !j.at("t_horizon").is_null()) s.t_horizon = j.at("t_horizon").get<double>();
    if (j.contains("covariates")) s.covariates = j.at("covariates").get<std::vector<std::string>>();
    if (j.contains("categorical")) {
      for (const auto& c : j.at("categorical").get<std::vector<std::string>>()) s.categorical.insert(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("invalid schema: ") + e.what());
  }
  if (s.time.has_value() != s.event.has_value())
    throw Error(ErrorKind::Schema, "schema must name both 'time' and 'event' or neither");
  if (!s.outcome && !s.time) throw Error(ErrorKind::Schema, "schema needs an 'outcome' column or 'time' and 'event'");
  if (!s.outcome && !s.t_horizon)
    throw Error(ErrorKind::Schema, "deriving the outcome from time and event requires 't_horizon'");
  if (s.t_horizon && !(*s.t_horizon > 0.0)) throw Error(ErrorKind::Schema, "t_horizon must be positive");
  for (const auto& c : s.categorical)
    if (std::find(s.covariates.begin(), s.covariates.end(), c) == s.covariates.end())
      throw Error(ErrorKind::Schema, "categorical column '" + c + "' is not listed in covariates");
  return s;
}

nlohmann::json TrialSchema::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["arm"] = arm;
  if (outcome) j["outcome"] = *outcome;
  if (time) j["time"] = *time;
  if (event) j["event"] = *event;
  if (t_horizon) j["t_horizon"] = *t_horizon;
  j["sampled"] = sampled;
  j["marker"] = marker;
  j["covariates"] = covariates;
  j["categorical"] = std::vector<std::string>(categorical.begin(), categorical.end());
  if (design_stratum) j["design_stratum"] = *design_stratum;
  if (weight) j["weight"] = *weight;
  return j;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

double parse_number(const std::string& text, const std::string& what) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (first == last || ec != std::errc() || ptr != last || !std::isfinite(value))
    throw Error(ErrorKind::Row, "non-numeric " + what + " '" + text + "'");
  return value;
}

bool parse_flag(const std::string& text, const std::string& what) {
  if (text == "1" || text == "true" || text == "TRUE" || text == "True") return true;
  if (text == "0" || text == "false" || text == "FALSE" || text == "False") return false;
  throw Error(ErrorKind::Row, "invalid " + what + " '" + text + "' (expected 0/1)");
}

Arm parse_arm(const std::string& text) {
  if (text == "1" || text == "vaccine") return Arm::Vaccine;
  if (text == "0" || text == "placebo") return Arm::Placebo;
  throw Error(ErrorKind::Row, "invalid arm '" + text + "' (expected 1=vaccine or 0=placebo)");
}

std::size_t require(const csv::Table& t, const std::string& name) {
  auto c = t.column(name);
  if (!c) throw Error(ErrorKind::Schema, "missing required column '" + name + "'");
  return *c;
}

}  // namespace

LoadResult parse_trial_csv(std::istream& in, const TrialSchema& schema) {
  const csv::Table table = csv::read(in);

  const std::size_t c_id = require(table, schema.id);
  const std::size_t c_arm = require(table, schema.arm);
  const std::size_t c_sampled = require(table, schema.sampled);
  const std::size_t c_marker = require(table, schema.marker);
  const std::optional<std::size_t> c_outcome =
      schema.outcome ? std::optional(require(table, *schema.outcome)) : std::nullopt;
  const std::optional<std::size_t> c_time =
      schema.time ? std::optional(require(table, *schema.time)) : std::nullopt;
  const std::optional<std::size_t> c_event =
      schema.event ? std::optional(require(table, *schema.event)) : std::nullopt;
  const std::optional<std::size_t> c_stratum =
      schema.design_stratum ? std::optional(require(table, *schema.design_stratum)) : std::nullopt;
  const std::optional<std::size_t> c_weight =
      schema.weight ? std::optional(require(table, *schema.weight)) : std::nullopt;
  std::vector<std::size_t> c_cov;
  for (const auto& name : schema.covariates) c_cov.push_back(require(table, name));

  LoadResult result;
  std::unordered_set<std::string> seen;
  std::map<std::string, std::set<std::string>> levels;

  for (std::size_t row = 0; row < table.rows.size(); ++row) {
    const auto& f = table.rows[row];
    ParticipantRecord r;
    try {
      if (f.size() != table.header.size())
        throw Error(ErrorKind::Row, "expected " + std::to_string(table.header.size()) + " fields, found " +
                                        std::to_string(f.size()));
      r.id = f[c_id];
      if (r.id.empty()) throw Error(ErrorKind::Row, "empty participant id");
      if (seen.count(r.id)) throw Error(ErrorKind::Row, "duplicate participant id");
      r.arm = parse_arm(f[c_arm]);
      r.sampled = parse_flag(f[c_sampled], "sampled flag");
      if (!f[c_marker].empty()) r.marker = parse_number(f[c_marker], "marker");
      if (c_time) {
        SurvivalTime st;
        st.time = parse_number(f[*c_time], "time");
        st.event = parse_flag(f[*c_event], "event flag");
        r.survival = st;
      }
      if (c_outcome) {
        r.outcome = parse_flag(f[*c_outcome], "outcome");
      } else {
        r.outcome = r.survival->event && r.survival->time <= *schema.t_horizon;
      }
      for (std::size_t k = 0; k < c_cov.size(); ++k) {
        const std::string& name = schema.covariates[k];
        const std::string& cell = f[c_cov[k]];
        if (cell.empty()) throw Error(ErrorKind::Row, "missing covariate '" + name + "'");
        if (schema.categorical.count(name)) {
          r.covariates.emplace(name, cell);
        } else {
          r.covariates.emplace(name, parse_number(cell, "covariate '" + name + "'"));
        }
      }
      if (c_stratum) r.design_stratum = f[*c_stratum];
      if (c_weight && !f[*c_weight].empty()) r.weight_override = parse_number(f[*c_weight], "weight");
      validate_record(r);
    } catch (const Error& e) {
      result.errors.push_back({table.lines[row], r.id, e.what()});
      continue;
    }
    for (const auto& [name, value] : r.covariates)
      if (const auto* s = std::get_if<std::string>(&value)) levels[name].insert(*s);
    seen.insert(r.id);
    result.records.push_back(std::move(r));
  }
  for (auto& [name, set] : levels) result.levels[name] = std::vector<std::string>(set.begin(), set.end());
  return result;
}

LoadResult load_trial_csv(const std::filesystem::path& path, const TrialSchema& schema) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::Io, "input file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return parse_trial_csv(in, schema);
}

std::string write_trial_csv(std::span<const ParticipantRecord> records, const TrialSchema& schema) {
  std::vector<std::string> header{schema.id, schema.arm};
  if (schema.outcome) header.push_back(*schema.outcome);
  if (schema.time) {
    header.push_back(*schema.time);
    header.push_back(*schema.event);
  }
  header.push_back(schema.sampled);
  header.push_back(schema.marker);
  for (const auto& c : schema.covariates) header.push_back(c);
  if (schema.design_stratum) header.push_back(*schema.design_stratum);
  if (schema.weight) header.push_back(*schema.weight);

  csv::Writer w(header);
  for (const auto& r : records) {
    std::vector<std::string> f{r.id, r.vaccine() ? "1" : "0"};
    if (schema.outcome) f.push_back(r.outcome ? "1" : "0");
    if (schema.time) {
      if (!r.survival) throw Error(ErrorKind::Data, "record " + r.id + " has no survival time");
      f.push_back(csv::format(r.survival->time));
      f.push_back(r.survival->event ? "1" : "0");
    }
    f.push_back(r.sampled ? "1" : "0");
    f.push_back(csv::format(r.marker));
    for (const auto& c : schema.covariates) {
      auto it = r.covariates.find(c);
      if (it == r.covariates.end()) throw Error(ErrorKind::Data, "record " + r.id + " lacks covariate " + c);
      f.push_back(covariate_label(it->second));
    }
    if (schema.design_stratum) f.push_back(r.design_stratum);
    if (schema.weight) f.push_back(csv::format(r.weight_override));
    w.row(f);
  }
  return w.str();
}

// ---------------------------------------------------------------------------
// Two-phase design

std::string to_string(const StratumKey& key) {
  std::string s = key.is_case ? "case" : "non-case";
  if (!key.design.empty()) s += "/" + key.design;
  return s;
}

StratumKey TwoPhaseDesign::stratum_of(const ParticipantRecord& r) const {
  return {r.outcome, uses_design_strata ? r.design_stratum : std::string()};
}

double TwoPhaseDesign::pi(const ParticipantRecord& r) const {
  const auto key = stratum_of(r);
  auto it = pi_hat.find(key);
  if (it == pi_hat.end())
    throw Error(ErrorKind::Data, "no sampling probability for stratum '" + to_string(key) + "'");
  return it->second;
}

double TwoPhaseDesign::weight(const ParticipantRecord& r) const {
  if (r.weight_override) return *r.weight_override;
  return 1.0 / pi(r);
}

TwoPhaseDesign estimate_sampling_probs(std::span<const ParticipantRecord> records,
                                       bool use_design_strata) {
  TwoPhaseDesign d;
  d.uses_design_strata = use_design_strata;
  for (const auto& r : records) {
    if (!r.vaccine()) continue;
    const auto key = d.stratum_of(r);
    ++d.n_total[key];
    auto& sampled = d.n_sampled[key];
    if (r.phase_two()) ++sampled;
  }
  for (const auto& [key, total] : d.n_total) {
    if (key.is_case) {
      d.pi_hat[key] = 1.0;
      continue;
    }
    const std::size_t s = d.n_sampled[key];
    if (s == 0)
      throw Error(ErrorKind::Data,
                  "positivity of sampling violated: stratum '" + to_string(key) + "' has no sampled non-cases");
    d.pi_hat[key] = static_cast<double>(s) / static_cast<double>(total);
  }
  return d;
}

std::vector<ParticipantRecord> phase_two_vaccine(std::span<const ParticipantRecord> records) {
  std::vector<ParticipantRecord> out;
  for (const auto& r : records)
    if (r.vaccine() && r.phase_two()) out.push_back(r);
  return out;
}

std::vector<ParticipantRecord> arm_records(std::span<const ParticipantRecord> records, Arm arm) {
  std::vector<ParticipantRecord> out;
  for (const auto& r : records)
    if (r.arm == arm) out.push_back(r);
  return out;
}

std::vector<double> design_weights(std::span<const ParticipantRecord> records,
                                   const TwoPhaseDesign& design) {
  std::vector<double> w;
  w.reserve(records.size());
  for (const auto& r : records) w.push_back(design.weight(r));
  return w;
}

std::vector<double> markers_of(std::span<const ParticipantRecord> records) {
  std::vector<double> m;
  m.reserve(records.size());
  for (const auto& r : records) {
    if (!r.marker) throw Error(ErrorKind::Data, "record " + r.id + " has no marker");
    m.push_back(*r.marker);
  }
  return m;
}

CohortSummary summarize_cohort(std::span<const ParticipantRecord> records,
                               const TwoPhaseDesign& design) {
  CohortSummary s;
  s.n_total = records.size();
  for (const auto& r : records) {
    if (r.vaccine()) {
      ++s.n_vaccine;
      if (r.outcome) ++s.n_cases_vaccine;
      if (r.phase_two()) ++s.n_phase2;
    } else {
      ++s.n_placebo;
      if (r.outcome) ++s.n_cases_placebo;
    }
  }
  if (s.n_vaccine == 0) throw Error(ErrorKind::Data, "no vaccine-arm records");
  s.overall_vaccine_risk = static_cast<double>(s.n_cases_vaccine) / static_cast<double>(s.n_vaccine);
  if (s.n_phase2 > 0) {
    const auto p2 = phase_two_vaccine(records);
    const auto m = markers_of(p2);
    const auto w = design_weights(p2, design);
    const std::vector<double> probs{0.025, 0.05, 0.15, 0.25, 0.5, 0.75, 0.85, 0.95, 0.975};
    const auto q = weighted_quantiles(m, w, probs);
    for (std::size_t i = 0; i < probs.size(); ++i) s.marker_quantiles[probs[i]] = q[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Tertiles

int TertileCoding::category(double marker) const noexcept {
  if (marker <= cut_low) return 0;
  if (marker <= cut_high) return 1;
  return 2;
}

std::vector<ParticipantRecord> apply_tertile_cuts(std::span<const ParticipantRecord> records,
                                                  double cut_low, double cut_high) {
  TertileCoding coding{cut_low, cut_high, {}};
  std::vector<ParticipantRecord> out(records.begin(), records.end());
  for (auto& r : out)
    if (r.marker) r.marker = static_cast<double>(coding.category(*r.marker));
  return out;
}

TertileCoding tertile_code(std::span<const ParticipantRecord> records, const TwoPhaseDesign& design) {
  const auto p2 = phase_two_vaccine(records);
  const auto m = markers_of(p2);
  const std::set<double> distinct(m.begin(), m.end());
  if (distinct.size() < 3)
    throw Error(ErrorKind::Data, "degenerate marker: fewer than 3 distinct phase-two values");
  const auto w = design_weights(p2, design);
  const std::vector<double> probs{1.0 / 3.0, 2.0 / 3.0};
  const auto cuts = weighted_quantiles(m, w, probs);
  TertileCoding t;
  t.cut_low = cuts[0];
  t.cut_high = cuts[1];
  t.records = apply_tertile_cuts(records, t.cut_low, t.cut_high);
  return t;
}

// ---------------------------------------------------------------------------
// Covariate strata and positivity

CovariateStratifier::CovariateStratifier(std::span<const ParticipantRecord> records, std::string name)
    : name_(std::move(name)) {
  std::set<std::string> labels;
  std::set<double> numbers;
  bool categorical = false;
  for (const auto& r : records) {
    auto it = r.covariates.find(name_);
    if (it == r.covariates.end()) continue;
    if (const auto* s = std::get_if<std::string>(&it->second)) {
      categorical = true;
      labels.insert(*s);
    } else {
      numbers.insert(std::get<double>(it->second));
    }
  }
  if (categorical) {
    levels_.assign(labels.begin(), labels.end());
  } else if (numbers.size() <= 10) {
    for (double v : numbers) levels_.push_back(csv::format(v));
  } else {
    std::vector<double> all;
    for (const auto& r : records)
      if (auto it = r.covariates.find(name_); it != r.covariates.end()) all.push_back(std::get<double>(it->second));
    std::sort(all.begin(), all.end());
    split_ = all[(all.size() - 1) / 2];
    levels_ = {"<=" + csv::format(*split_), ">" + csv::format(*split_)};
  }
}

std::string CovariateStratifier::level_of(const ParticipantRecord& r) const {
  auto it = r.covariates.find(name_);
  if (it == r.covariates.end()) throw Error(ErrorKind::Data, "record " + r.id + " lacks covariate " + name_);
  if (split_) return std::get<double>(it->second) <= *split_ ? levels_[0] : levels_[1];
  return covariate_label(it->second);
}

namespace {

PositivityRow describe(const std::string& covariate, const std::string& level, const std::vector<double>& m,
                       const std::vector<double>& w) {
  PositivityRow row;
  row.covariate = covariate;
  row.level = level;
  row.n = m.size();
  if (m.empty()) return row;
  const std::vector<double> probs{0.05, 0.5, 0.95};
  const auto q = weighted_quantiles(m, w, probs);
  row.q05 = q[0];
  row.q50 = q[1];
  row.q95 = q[2];
  row.min = *std::min_element(m.begin(), m.end());
  row.max = *std::max_element(m.begin(), m.end());
  return row;
}

}  // namespace

std::vector<PositivityRow> positivity_report(std::span<const ParticipantRecord> records,
                                             const TwoPhaseDesign& design,
                                             std::span<const std::string> covariates,
                                             double min_coverage) {
  const auto p2 = phase_two_vaccine(records);
  if (p2.empty()) throw Error(ErrorKind::Data, "positivity report: no phase-two vaccine records");
  const auto m = markers_of(p2);
  const auto w = design_weights(p2, design);

  std::vector<PositivityRow> rows;
  PositivityRow pooled = describe("(pooled)", "(all)", m, w);
  pooled.coverage = 1.0;
  rows.push_back(pooled);
  const double lo = pooled.q05, hi = pooled.q95;

  const auto vaccine = arm_records(records, Arm::Vaccine);
  for (const auto& name : covariates) {
    CovariateStratifier strat(vaccine, name);
    for (const auto& level : strat.levels()) {
      std::vector<double> ms, ws;
      for (std::size_t i = 0; i < p2.size(); ++i) {
        if (strat.level_of(p2[i]) != level) continue;
        ms.push_back(m[i]);
        ws.push_back(w[i]);
      }
      PositivityRow row = describe(name, level, ms, ws);
      if (row.n > 0) {
        double cov;
        if (hi > lo) {
          cov = std::max(0.0, std::min(row.max, hi) - std::max(row.min, lo)) / (hi - lo);
        } else {
          cov = (row.min <= lo && row.max >= hi) ? 1.0 : 0.0;
        }
        row.coverage = cov;
        row.flagged = cov < min_coverage;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace cop
