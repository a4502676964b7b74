#include "cop/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "cop/bootstrap.hpp"
#include "cop/error.hpp"

namespace cop::sim {

namespace {

double inv_link(Link link, double eta) {
  if (link == Link::Logit) return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
  return -std::expm1(-std::exp(eta));
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

const char* link_name(Link l) { return l == Link::Logit ? "logit" : "cloglog"; }

Link parse_link(const std::string& s) {
  if (s == "logit") return Link::Logit;
  if (s == "cloglog") return Link::Cloglog;
  throw Error(ErrorKind::Config, "unknown link '" + s + "' (expected logit or cloglog)");
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw Error(ErrorKind::Config, "unknown key '" + k + "' in " + where);
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

// Posterior P(U = 1 | S = s, X = x) in the vaccine arm.
double p_u1_given_s(const SimScenario& sc, double s, std::size_t x) {
  const auto& u = *sc.unmeasured;
  const double a = u.p_u1[x] * normal_pdf((s - sc.marker_mean_at(x, 1)) / sc.marker_sd);
  const double b = (1.0 - u.p_u1[x]) * normal_pdf((s - sc.marker_mean_at(x, 0)) / sc.marker_sd);
  return a / (a + b);
}

}  // namespace

void SimScenario::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, "invalid scenario: " + m); };
  if (n == 0) fail("n must be positive");
  if (!(vaccine_fraction > 0.0 && vaccine_fraction < 1.0)) fail("vaccine_fraction must lie in (0,1)");
  const std::size_t k = levels.size();
  if (k == 0 || k > 5) fail("covariate needs between 1 and 5 levels");
  if (x_probs.size() != k || x_coef.size() != k || marker_mean.size() != k)
    fail("probs, outcome_coef and marker mean must have one entry per level");
  if (std::set<std::string>(levels.begin(), levels.end()).size() != k) fail("duplicate covariate level");
  double total = 0.0;
  for (double p : x_probs) {
    if (!(p >= 0.0 && p <= 1.0)) fail("covariate probabilities must lie in [0,1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("covariate probabilities must sum to 1");
  if (unmeasured) {
    if (unmeasured->p_u1.size() != k) fail("p_u1 needs one entry per covariate level");
    for (double p : unmeasured->p_u1)
      if (!(p >= 0.0 && p <= 1.0)) fail("p_u1 must lie in [0,1]");
  }
  if (!(marker_sd > 0.0)) fail("marker sd must be positive");
  if (!(placebo_value < llod)) fail("placebo_value must lie below llod");
  if (!(t_horizon > 0.0)) fail("t_horizon must be positive");
  if (!(subsample_rate > 0.0 && subsample_rate <= 1.0)) fail("subsample_rate must lie in (0,1]");
  for (double v : {marker_coef, marker_center, vaccine_intercept, placebo_intercept})
    if (!std::isfinite(v)) fail("outcome coefficients must be finite");
}

double SimScenario::marker_mean_at(std::size_t x, int u) const {
  return marker_mean[x] + (u && unmeasured ? unmeasured->marker_shift : 0.0);
}

double SimScenario::vaccine_risk(double s, std::size_t x, int u) const {
  double eta = vaccine_intercept + x_coef[x] + marker_coef * (s - marker_center);
  if (u && unmeasured) eta += unmeasured->outcome_coef;
  return inv_link(link, eta);
}

double SimScenario::placebo_risk(std::size_t x, int u) const {
  double eta = placebo_intercept + x_coef[x];
  if (u && unmeasured) eta += unmeasured->outcome_coef;
  return inv_link(link, eta);
}

double SimScenario::joint_prob(std::size_t x, int u) const {
  if (!unmeasured) return u == 0 ? x_probs[x] : 0.0;
  const double p1 = unmeasured->p_u1[x];
  return x_probs[x] * (u ? p1 : 1.0 - p1);
}

SimScenario SimScenario::from_json(const nlohmann::json& j) {
  SimScenario sc;
  try {
    check_keys(j, {"name", "n", "seed", "vaccine_fraction", "covariate", "unmeasured", "marker", "outcome",
                   "subsample_rate"},
               "scenario");
    read(j, "name", sc.name);
    read(j, "n", sc.n);
    read(j, "seed", sc.seed);
    read(j, "vaccine_fraction", sc.vaccine_fraction);
    read(j, "subsample_rate", sc.subsample_rate);
    if (j.contains("covariate")) {
      const auto& c = j.at("covariate");
      check_keys(c, {"name", "levels", "probs", "outcome_coef"}, "covariate");
      read(c, "name", sc.covariate);
      read(c, "levels", sc.levels);
      read(c, "probs", sc.x_probs);
      read(c, "outcome_coef", sc.x_coef);
    }
    if (j.contains("unmeasured") && !j.at("unmeasured").is_null()) {
      const auto& u = j.at("unmeasured");
      check_keys(u, {"p_u1", "marker_shift", "outcome_coef"}, "unmeasured");
      UnmeasuredLaw law;
      read(u, "p_u1", law.p_u1);
      read(u, "marker_shift", law.marker_shift);
      read(u, "outcome_coef", law.outcome_coef);
      sc.unmeasured = law;
    }
    if (j.contains("marker")) {
      const auto& m = j.at("marker");
      check_keys(m, {"mean", "sd", "llod", "placebo_value"}, "marker");
      read(m, "mean", sc.marker_mean);
      read(m, "sd", sc.marker_sd);
      read(m, "llod", sc.llod);
      if (m.contains("placebo_value"))
        sc.placebo_value = m.at("placebo_value").get<double>();
      else
        sc.placebo_value = sc.llod - std::log10(2.0);
    }
    if (j.contains("outcome")) {
      const auto& o = j.at("outcome");
      check_keys(o, {"link", "marker_coef", "marker_center", "vaccine_intercept", "placebo_intercept", "t_horizon"},
                 "outcome");
      if (o.contains("link")) sc.link = parse_link(o.at("link").get<std::string>());
      read(o, "marker_coef", sc.marker_coef);
      read(o, "marker_center", sc.marker_center);
      read(o, "vaccine_intercept", sc.vaccine_intercept);
      read(o, "placebo_intercept", sc.placebo_intercept);
      read(o, "t_horizon", sc.t_horizon);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid scenario JSON: ") + e.what());
  }
  sc.validate();
  return sc;
}

nlohmann::json SimScenario::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["n"] = n;
  j["seed"] = seed;
  j["vaccine_fraction"] = vaccine_fraction;
  j["covariate"] = {{"name", covariate}, {"levels", levels}, {"probs", x_probs}, {"outcome_coef", x_coef}};
  if (unmeasured)
    j["unmeasured"] = {{"p_u1", unmeasured->p_u1},
                       {"marker_shift", unmeasured->marker_shift},
                       {"outcome_coef", unmeasured->outcome_coef}};
  else
    j["unmeasured"] = nullptr;
  j["marker"] = {{"mean", marker_mean}, {"sd", marker_sd}, {"llod", llod}, {"placebo_value", placebo_value}};
  j["outcome"] = {{"link", link_name(link)},
                  {"marker_coef", marker_coef},
                  {"marker_center", marker_center},
                  {"vaccine_intercept", vaccine_intercept},
                  {"placebo_intercept", placebo_intercept},
                  {"t_horizon", t_horizon}};
  j["subsample_rate"] = subsample_rate;
  return j;
}

// ---------------------------------------------------------------------------
// Presets. Intercepts were solved numerically: placebo risk 0.06 at the
// horizon in every preset; vaccine-arm risk 0.021 (VE 0.65) for strong-cop
// and 0.03 for null-marker.

SimScenario null_marker() {
  SimScenario sc;
  sc.name = "null-marker";
  sc.n = 5000;
  sc.seed = 20240101;
  sc.marker_coef = 0.0;
  sc.placebo_intercept = -2.8728754772534932;
  sc.vaccine_intercept = -3.5831816199343645;
  return sc;
}

SimScenario strong_cop() {
  SimScenario sc;
  sc.name = "strong-cop";
  sc.n = 20000;
  sc.seed = 20240202;
  sc.marker_coef = -1.5;
  sc.placebo_intercept = -2.8728754772534932;
  sc.vaccine_intercept = -4.381679676313481;
  return sc;
}

SimScenario confounded() {
  SimScenario sc;
  sc.name = "confounded";
  sc.n = 10000;
  sc.seed = 20240303;
  sc.unmeasured = UnmeasuredLaw{{0.4, 0.4, 0.4}, 0.5, -std::log(3.8)};
  sc.marker_coef = -0.6;
  sc.placebo_intercept = -2.5146328622998646;
  sc.vaccine_intercept = -3.2;
  return sc;
}

std::vector<std::string> preset_names() { return {"null-marker", "strong-cop", "confounded"}; }

SimScenario preset(const std::string& name) {
  if (name == "null-marker") return null_marker();
  if (name == "strong-cop") return strong_cop();
  if (name == "confounded") return confounded();
  throw Error(ErrorKind::Config, "unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------

TrialSchema trial_schema(const SimScenario& scenario) {
  TrialSchema s;
  s.id = "id";
  s.arm = "arm";
  s.outcome = "y";
  s.time = "time";
  s.event = "event";
  s.t_horizon = scenario.t_horizon;
  s.sampled = "sampled";
  s.marker = "marker";
  s.covariates = {scenario.covariate};
  s.categorical = {scenario.covariate};
  return s;
}

std::vector<ParticipantRecord> generate_trial(const SimScenario& sc) {
  sc.validate();
  std::vector<ParticipantRecord> out(sc.n);
  const int width = static_cast<int>(std::to_string(sc.n).size());
  std::vector<double> cum(sc.x_probs.size());
  std::partial_sum(sc.x_probs.begin(), sc.x_probs.end(), cum.begin());

  for (std::size_t i = 0; i < sc.n; ++i) {
    std::mt19937_64 rng(stream_seed(sc.seed, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double u_arm = unif(rng), u_x = unif(rng), u_u = unif(rng);
    const double z = normal(rng);
    const double u_t = unif(rng), u_m = unif(rng);

    auto& r = out[i];
    std::string id = std::to_string(i + 1);
    r.id = "P" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    r.arm = u_arm < sc.vaccine_fraction ? Arm::Vaccine : Arm::Placebo;
    std::size_t x = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u_x) - cum.begin());
    x = std::min(x, sc.levels.size() - 1);
    const int u = sc.unmeasured && u_u < sc.unmeasured->p_u1[x] ? 1 : 0;
    r.covariates[sc.covariate] = sc.levels[x];

    const double s = sc.marker_mean_at(x, u) + sc.marker_sd * z;
    const double risk = r.vaccine() ? sc.vaccine_risk(s, x, u) : sc.placebo_risk(x, u);
    const double rate = -std::log1p(-risk) / sc.t_horizon;
    const double t = rate > 0 ? -std::log1p(-u_t) / rate : std::numeric_limits<double>::infinity();
    r.outcome = t <= sc.t_horizon;
    r.survival = SurvivalTime{r.outcome ? t : sc.t_horizon, r.outcome};
    r.sampled = r.outcome || u_m < sc.subsample_rate;
    if (r.sampled) r.marker = r.vaccine() ? s : sc.placebo_value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truth by enumeration

double true_controlled_risk(const SimScenario& sc, double s) {
  double total = 0.0;
  for (std::size_t x = 0; x < sc.levels.size(); ++x)
    for (int u = 0; u < sc.u_levels(); ++u) total += sc.joint_prob(x, u) * sc.vaccine_risk(s, x, u);
  return total;
}

double true_placebo_risk(const SimScenario& sc) {
  double total = 0.0;
  for (std::size_t x = 0; x < sc.levels.size(); ++x)
    for (int u = 0; u < sc.u_levels(); ++u) total += sc.joint_prob(x, u) * sc.placebo_risk(x, u);
  return total;
}

double true_vaccine_risk(const SimScenario& sc) {
  // Composite Simpson over +-10 sd per mixture component.
  constexpr int kIntervals = 4000;
  double total = 0.0;
  for (std::size_t x = 0; x < sc.levels.size(); ++x)
    for (int u = 0; u < sc.u_levels(); ++u) {
      const double p = sc.joint_prob(x, u);
      if (p == 0.0) continue;
      const double mu = sc.marker_mean_at(x, u), lo = -10.0, h = 20.0 / kIntervals;
      double acc = 0.0;
      for (int k = 0; k <= kIntervals; ++k) {
        const double z = lo + k * h;
        const double c = (k == 0 || k == kIntervals) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        acc += c * normal_pdf(z) * sc.vaccine_risk(mu + sc.marker_sd * z, x, u);
      }
      total += p * acc * h / 3.0;
    }
  return total;
}

double true_marker_quantile(const SimScenario& sc, double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::Domain, "quantile level must lie in (0,1)");
  auto cdf = [&](double s) {
    double c = 0.0;
    for (std::size_t x = 0; x < sc.levels.size(); ++x)
      for (int u = 0; u < sc.u_levels(); ++u)
        c += sc.joint_prob(x, u) * normal_cdf((s - sc.marker_mean_at(x, u)) / sc.marker_sd);
    return c;
  };
  double lo = *std::min_element(sc.marker_mean.begin(), sc.marker_mean.end()) - 12.0 * sc.marker_sd;
  double hi = *std::max_element(sc.marker_mean.begin(), sc.marker_mean.end()) + 12.0 * sc.marker_sd;
  if (sc.unmeasured) {
    lo -= std::abs(sc.unmeasured->marker_shift);
    hi += std::abs(sc.unmeasured->marker_shift);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double true_marginalized_risk(const SimScenario& sc, double s) {
  if (!sc.unmeasured) return true_controlled_risk(sc, s);
  double total = 0.0;
  for (std::size_t x = 0; x < sc.levels.size(); ++x) {
    const double q = p_u1_given_s(sc, s, x);
    total += sc.x_probs[x] * (q * sc.vaccine_risk(s, x, 1) + (1.0 - q) * sc.vaccine_risk(s, x, 0));
  }
  return total;
}

double TruthTables::rr_c(double s1, double s2, const SimScenario& scenario) const {
  return true_controlled_risk(scenario, s2) / true_controlled_risk(scenario, s1);
}

TruthTables truth_tables(const SimScenario& sc, const Eigen::ArrayXd& grid) {
  TruthTables t;
  t.grid = grid;
  t.placebo_risk = true_placebo_risk(sc);
  t.rc.resize(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) t.rc(i) = true_controlled_risk(sc, grid(i));
  t.cve = 1.0 - t.rc / t.placebo_risk;
  return t;
}

ConfoundingStrength confounding_strength(const SimScenario& sc, double s1, double s2) {
  ConfoundingStrength cs;
  if (!sc.unmeasured) return cs;
  for (std::size_t x = 0; x < sc.levels.size(); ++x) {
    for (double s : {s1, s2}) {
      const double r0 = sc.vaccine_risk(s, x, 0), r1 = sc.vaccine_risk(s, x, 1);
      cs.rr_ud = std::max({cs.rr_ud, r1 / r0, r0 / r1});
    }
    const double a = p_u1_given_s(sc, s1, x), b = p_u1_given_s(sc, s2, x);
    cs.rr_eu = std::max({cs.rr_eu, a / b, b / a, (1.0 - a) / (1.0 - b), (1.0 - b) / (1.0 - a)});
  }
  return cs;
}

}  // namespace cop::sim
