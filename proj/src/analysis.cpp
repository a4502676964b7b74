#include "cop/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "cop/csv.hpp"
#include "cop/error.hpp"
#include "cop/quantile.hpp"

namespace cop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* mode_name(MarkerMode m) { return m == MarkerMode::Tertile ? "tertile" : "quantitative"; }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw Error(ErrorKind::Config, "unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <class T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

RiskModel fit_vaccine(ModelFamily family, std::span<const ParticipantRecord> records, const TwoPhaseDesign& design,
                      const Formula& formula, double t_horizon) {
  if (family == ModelFamily::WeightedLogistic) {
    RiskModel m = fit_weighted_logistic(records, design, formula);
    m.t_horizon = t_horizon;
    return m;
  }
  return fit_casecohort_cox(records, design, formula, t_horizon);
}

// Everything a replicate holds fixed at its original-data value.
struct Fixed {
  ModelFamily family = ModelFamily::WeightedLogistic;
  double t_horizon = 0.0;
  bool tertile_mode = false;
  bool use_design_strata = false;
  Formula formula;
  Formula tertile_formula;
  Formula covariates;
  Eigen::ArrayXd grid;
  double s1 = 0.0, s2 = 0.0;
  double cut_low = 0.0, cut_high = 0.0;
  std::optional<Eigen::ArrayXd> mult;  // anchored bias multipliers
};

struct Stats {
  Eigen::ArrayXd rm, rc, cve_n, cve_c;
  double r1 = 0, r2 = 0, rr_m = 0, or_m = 0;
  double rt0 = 0, rt2 = 0, rr_tert = 0;
  double p0 = 0, ve = 0;
};

struct Extras {
  TwoPhaseDesign design;
  RiskModel model;
  RiskModel tertile_model;
  PlaceboRisk placebo;
};

Stats compute_stats(std::span<const ParticipantRecord> records, const Fixed& f, Extras* extras = nullptr) {
  Stats st;
  const auto design = estimate_sampling_probs(records, f.use_design_strata);
  const auto tert = apply_tertile_cuts(records, f.cut_low, f.cut_high);
  std::span<const ParticipantRecord> work = f.tertile_mode ? std::span<const ParticipantRecord>(tert) : records;

  RiskModel model = fit_vaccine(f.family, work, design, f.formula, f.t_horizon);
  const Standardizer stdz(model, work, design);
  st.rm.resize(f.grid.size());
  for (Eigen::Index i = 0; i < f.grid.size(); ++i) st.rm(i) = stdz.risk(f.grid(i));
  st.r1 = stdz.risk(f.s1);
  st.r2 = stdz.risk(f.s2);
  st.rr_m = risk_ratio(st.r1, st.r2);
  st.or_m = odds_ratio(st.r1, st.r2);

  RiskModel tmodel = f.tertile_mode ? model : fit_vaccine(f.family, tert, design, f.tertile_formula, f.t_horizon);
  const Standardizer tstd(tmodel, tert, design);
  st.rt0 = tstd.risk(0.0);
  st.rt2 = tstd.risk(2.0);
  st.rr_tert = risk_ratio(st.rt0, st.rt2);

  PlaceboRisk placebo = placebo_marginalized_risk(records, f.family, f.covariates, f.t_horizon);
  st.p0 = placebo.estimate;
  std::size_t nv = 0, cases = 0;
  for (const auto& r : records)
    if (r.vaccine()) {
      ++nv;
      cases += r.outcome;
    }
  st.ve = 1.0 - (static_cast<double>(cases) / static_cast<double>(nv)) / st.p0;

  st.cve_n = 1.0 - st.rm / st.p0;
  if (f.mult) {
    st.rc = (st.rm * *f.mult).min(1.0).max(0.0);
    st.cve_c = 1.0 - st.rc / st.p0;
  }
  if (extras) {
    extras->design = design;
    extras->model = std::move(model);
    extras->tertile_model = std::move(tmodel);
    extras->placebo = std::move(placebo);
  }
  return st;
}

// Positions of each statistic in the flattened replicate vector.
struct Layout {
  Eigen::Index g = 0;
  bool bound = false;

  Eigen::Index rm() const { return 0; }
  Eigen::Index rc() const { return g; }
  Eigen::Index cve_n() const { return bound ? 2 * g : g; }
  Eigen::Index cve_c() const { return 3 * g; }
  Eigen::Index scalars() const { return bound ? 4 * g : 2 * g; }
  Eigen::Index size() const { return scalars() + 9; }
};

enum Scalar : Eigen::Index { kR1, kR2, kRR, kOR, kRT0, kRT2, kRRT, kP0, kVE };

Eigen::VectorXd flatten(const Stats& st, const Layout& lay) {
  Eigen::VectorXd v(lay.size());
  v.segment(lay.rm(), lay.g) = st.rm.matrix();
  v.segment(lay.cve_n(), lay.g) = st.cve_n.matrix();
  if (lay.bound) {
    v.segment(lay.rc(), lay.g) = st.rc.matrix();
    v.segment(lay.cve_c(), lay.g) = st.cve_c.matrix();
  }
  const Eigen::Index o = lay.scalars();
  v(o + kR1) = st.r1;
  v(o + kR2) = st.r2;
  v(o + kRR) = st.rr_m;
  v(o + kOR) = st.or_m;
  v(o + kRT0) = st.rt0;
  v(o + kRT2) = st.rt2;
  v(o + kRRT) = st.rr_tert;
  v(o + kP0) = st.p0;
  v(o + kVE) = st.ve;
  return v;
}

std::vector<std::string> column_names(const Layout& lay) {
  std::vector<std::string> names(static_cast<std::size_t>(lay.size()));
  for (Eigen::Index i = 0; i < lay.g; ++i) {
    const auto k = std::to_string(i);
    names[static_cast<std::size_t>(lay.rm() + i)] = "rm_" + k;
    names[static_cast<std::size_t>(lay.cve_n() + i)] = "cve_naive_" + k;
    if (lay.bound) {
      names[static_cast<std::size_t>(lay.rc() + i)] = "rc_bound_" + k;
      names[static_cast<std::size_t>(lay.cve_c() + i)] = "cve_cons_" + k;
    }
  }
  const char* scalars[] = {"r_m_s1", "r_m_s2", "rr_m", "or_m", "r_m_tertile_lower", "r_m_tertile_upper",
                           "rr_m_tertile", "placebo_risk", "ve_overall"};
  for (Eigen::Index k = 0; k < 9; ++k) names[static_cast<std::size_t>(lay.scalars() + k)] = scalars[k];
  return names;
}

void attach_bands(CurveEstimate& curve, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, Eigen::Index offset,
                  std::size_t replicates, std::vector<std::string>& warnings) {
  const Eigen::Index g = curve.size();
  curve.ci_lo = lo.segment(offset, g).array();
  curve.ci_hi = hi.segment(offset, g).array();
  curve.meta.bootstrap_replicates = replicates;
  std::size_t outside = 0;
  for (Eigen::Index i = 0; i < g; ++i) {
    const double tol = 1e-12 * (1.0 + std::abs(curve.point(i)));
    if ((*curve.ci_lo)(i) > curve.point(i) + tol || curve.point(i) > (*curve.ci_hi)(i) + tol) ++outside;
  }
  if (outside > 0)
    warnings.push_back(std::string(to_string(curve.kind)) + ": percentile band excludes the point estimate at " +
                       std::to_string(outside) + " grid points");
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void AnalysisOptions::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
  if (family == ModelFamily::CaseCohortCox && !(t_horizon > 0.0)) fail("the cox family needs a positive t_horizon");
  for (const auto& c : covariates)
    if (c == kMarkerTerm || c == kMarkerFactorTerm) fail("covariates must not include marker terms");
  const auto [q1, q2] = contrast_quantiles;
  if (!(q1 > 0.0 && q1 < q2 && q2 < 1.0)) fail("contrast quantiles must lie in (0,1) and be ordered");
  if (grid.values.empty()) {
    if (grid.n < 1) fail("grid needs at least one point");
    if (!(grid.lo_quantile >= 0.0 && grid.lo_quantile <= grid.hi_quantile && grid.hi_quantile <= 1.0))
      fail("grid quantiles must be ordered within [0,1]");
  } else {
    for (std::size_t i = 1; i < grid.values.size(); ++i)
      if (!(grid.values[i] > grid.values[i - 1])) fail("grid values must be strictly increasing");
  }
  const auto& s = sensitivity;
  if (!(s.rr_ud_fix >= 1.0 && s.rr_eu_fix >= 1.0)) fail("sensitivity magnitudes must be >= 1");
  if (s.mode == SensitivityMode::CommonLogLinear && s.rr_ud_fix != s.rr_eu_fix)
    fail("common sensitivity mode requires rr_ud_fix = rr_eu_fix");
  if (s.s1_fix.has_value() != s.s2_fix.has_value()) fail("give both s1_fix and s2_fix or neither");
  if (s.s1_fix && !(*s.s1_fix < *s.s2_fix)) fail("s1_fix must be below s2_fix");
  if (s.s1_fix_quantile.has_value() != s.s2_fix_quantile.has_value())
    fail("give both s1_fix_quantile and s2_fix_quantile or neither");
  if (s.s1_fix_quantile && !(*s.s1_fix_quantile > 0.0 && *s.s1_fix_quantile < *s.s2_fix_quantile &&
                             *s.s2_fix_quantile < 1.0))
    fail("sensitivity fixed-pair quantiles must lie in (0,1) and be ordered");
  if (!(positivity_fraction > 0.0 && positivity_fraction <= 1.0)) fail("positivity fraction must lie in (0,1]");
  if (bootstrap) bootstrap->validate();
}

AnalysisConfig AnalysisConfig::from_json(const json& j, const fs::path& base_dir) {
  AnalysisConfig c;
  auto& o = c.options;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  try {
    check_keys(j,
               {"trial_csv", "schema", "output_dir", "family", "t_horizon", "covariates", "marker_mode", "grid",
                "sensitivity", "bootstrap", "contrast_quantiles", "positivity", "llod", "use_design_strata",
                "keep_replicates"},
               "analysis config");
    for (const char* key : {"trial_csv", "schema", "output_dir"})
      if (!j.contains(key)) throw Error(ErrorKind::Config, std::string("analysis config lacks '") + key + "'");
    c.trial_csv = resolve(j.at("trial_csv").get<std::string>());
    c.schema_json = resolve(j.at("schema").get<std::string>());
    c.output_dir = resolve(j.at("output_dir").get<std::string>());
    if (j.contains("family")) o.family = parse_family(j.at("family").get<std::string>());
    read(j, "t_horizon", o.t_horizon);
    read(j, "covariates", o.covariates);
    if (j.contains("marker_mode")) {
      const auto m = j.at("marker_mode").get<std::string>();
      if (m == "quantitative")
        o.marker_mode = MarkerMode::Quantitative;
      else if (m == "tertile")
        o.marker_mode = MarkerMode::Tertile;
      else
        throw Error(ErrorKind::Config, "unknown marker_mode '" + m + "'");
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      check_keys(g, {"n", "lo_quantile", "hi_quantile", "values"}, "grid");
      read(g, "n", o.grid.n);
      read(g, "lo_quantile", o.grid.lo_quantile);
      read(g, "hi_quantile", o.grid.hi_quantile);
      read(g, "values", o.grid.values);
    }
    if (j.contains("sensitivity")) {
      const auto& s = j.at("sensitivity");
      check_keys(s,
                 {"mode", "rr_u_fix", "rr_ud_fix", "rr_eu_fix", "s1_fix_quantile", "s2_fix_quantile", "s1_fix",
                  "s2_fix"},
                 "sensitivity");
      auto& sc = o.sensitivity;
      if (s.contains("rr_u_fix")) {
        if (s.contains("rr_ud_fix") || s.contains("rr_eu_fix"))
          throw Error(ErrorKind::Config, "give rr_u_fix or rr_ud_fix/rr_eu_fix, not both");
        sc.rr_ud_fix = sc.rr_eu_fix = s.at("rr_u_fix").get<double>();
      } else if (s.contains("rr_ud_fix") || s.contains("rr_eu_fix")) {
        if (!s.contains("rr_ud_fix") || !s.contains("rr_eu_fix"))
          throw Error(ErrorKind::Config, "rr_ud_fix and rr_eu_fix go together");
        sc.rr_ud_fix = s.at("rr_ud_fix").get<double>();
        sc.rr_eu_fix = s.at("rr_eu_fix").get<double>();
        sc.mode = SensitivityMode::FixedPairOnly;
      }
      if (s.contains("mode")) {
        const auto m = s.at("mode").get<std::string>();
        if (m == "common")
          sc.mode = SensitivityMode::CommonLogLinear;
        else if (m == "fixed-pair")
          sc.mode = SensitivityMode::FixedPairOnly;
        else
          throw Error(ErrorKind::Config, "unknown sensitivity mode '" + m + "'");
      }
      read_opt(s, "s1_fix_quantile", sc.s1_fix_quantile);
      read_opt(s, "s2_fix_quantile", sc.s2_fix_quantile);
      read_opt(s, "s1_fix", sc.s1_fix);
      read_opt(s, "s2_fix", sc.s2_fix);
    }
    if (j.contains("bootstrap")) {
      const auto& b = j.at("bootstrap");
      if (b.is_null()) {
        o.bootstrap.reset();
      } else {
        check_keys(b, {"replicates", "seed", "threads", "level", "confounder_table"}, "bootstrap");
        BootstrapPlan plan;
        read(b, "replicates", plan.n_replicates);
        read(b, "seed", plan.seed);
        read(b, "threads", plan.threads);
        read(b, "level", plan.level);
        read(b, "confounder_table", o.bootstrap_confounder_table);
        if (plan.n_replicates == 0)
          o.bootstrap.reset();
        else
          o.bootstrap = plan;
      }
    }
    if (j.contains("contrast_quantiles")) {
      const auto q = j.at("contrast_quantiles").get<std::vector<double>>();
      if (q.size() != 2) throw Error(ErrorKind::Config, "contrast_quantiles needs two values");
      o.contrast_quantiles = {q[0], q[1]};
    }
    if (j.contains("positivity")) {
      const auto& p = j.at("positivity");
      check_keys(p, {"covariates", "min_coverage"}, "positivity");
      read_opt(p, "covariates", o.positivity_covariates);
      read(p, "min_coverage", o.positivity_fraction);
    }
    read_opt(j, "llod", o.llod);
    read(j, "use_design_strata", o.use_design_strata);
    read(j, "keep_replicates", o.keep_replicates);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("invalid analysis config: ") + e.what());
  }
  if (o.bootstrap) o.bootstrap->use_design_strata = o.use_design_strata;
  return c;
}

AnalysisConfig AnalysisConfig::from_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::Io, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(csv::read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

json AnalysisConfig::to_json() const {
  const auto& o = options;
  json j;
  j["family"] = o.family == ModelFamily::WeightedLogistic ? "logistic" : "cox";
  j["t_horizon"] = o.t_horizon;
  j["covariates"] = o.covariates;
  j["marker_mode"] = mode_name(o.marker_mode);
  j["grid"] = {{"n", o.grid.n}, {"lo_quantile", o.grid.lo_quantile}, {"hi_quantile", o.grid.hi_quantile},
               {"values", o.grid.values}};
  json s = {{"mode", o.sensitivity.mode == SensitivityMode::CommonLogLinear ? "common" : "fixed-pair"},
            {"rr_ud_fix", o.sensitivity.rr_ud_fix},
            {"rr_eu_fix", o.sensitivity.rr_eu_fix}};
  if (o.sensitivity.s1_fix_quantile) {
    s["s1_fix_quantile"] = *o.sensitivity.s1_fix_quantile;
    s["s2_fix_quantile"] = *o.sensitivity.s2_fix_quantile;
  }
  if (o.sensitivity.s1_fix) {
    s["s1_fix"] = *o.sensitivity.s1_fix;
    s["s2_fix"] = *o.sensitivity.s2_fix;
  }
  j["sensitivity"] = s;
  if (o.bootstrap)
    j["bootstrap"] = {{"replicates", o.bootstrap->n_replicates},
                      {"seed", o.bootstrap->seed},
                      {"level", o.bootstrap->level},
                      {"confounder_table", o.bootstrap_confounder_table}};
  else
    j["bootstrap"] = nullptr;
  j["contrast_quantiles"] = {o.contrast_quantiles.first, o.contrast_quantiles.second};
  j["positivity"] = {{"covariates", o.positivity_covariates ? *o.positivity_covariates : o.covariates},
                     {"min_coverage", o.positivity_fraction}};
  j["llod"] = o.llod ? json(*o.llod) : json(nullptr);
  j["use_design_strata"] = o.use_design_strata;
  j["keep_replicates"] = o.keep_replicates;
  return j;
}

const ContrastRow* AnalysisResult::find(const std::string& contrast, const std::string& quantity) const {
  for (const auto& r : contrasts)
    if (r.contrast == contrast && r.quantity == quantity) return &r;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Pipeline

AnalysisResult analyze(std::span<const ParticipantRecord> records, const AnalysisOptions& options) {
  options.validate();
  AnalysisResult res;
  auto& warn = res.warnings;

  res.design = estimate_sampling_probs(records, options.use_design_strata);
  res.summary = summarize_cohort(records, res.design);
  if (res.summary.n_phase2 == 0) throw Error(ErrorKind::Estimation, "no phase-two vaccine records");
  const auto pos_covs = options.positivity_covariates ? *options.positivity_covariates : options.covariates;
  res.positivity = positivity_report(records, res.design, pos_covs, options.positivity_fraction);
  for (const auto& row : res.positivity)
    if (row.flagged)
      warn.push_back("positivity: marker range in " + row.covariate + "=" + row.level + " covers only " +
                     csv::format(row.coverage.value_or(0.0)) + " of the pooled 5%-95% range");
  std::optional<BootstrapPlan> conf_plan;
  if (options.bootstrap && options.bootstrap_confounder_table) conf_plan = options.bootstrap;
  res.confounders = confounder_association_table(records, res.design, options.covariates, conf_plan);

  res.tertiles = tertile_code(records, res.design);
  const bool tertile_mode = options.marker_mode == MarkerMode::Tertile;

  Fixed fx;
  fx.family = options.family;
  fx.t_horizon = options.t_horizon;
  fx.tertile_mode = tertile_mode;
  fx.use_design_strata = options.use_design_strata;
  fx.covariates = options.covariates;
  fx.formula.push_back(tertile_mode ? kMarkerFactorTerm : kMarkerTerm);
  fx.tertile_formula.push_back(kMarkerFactorTerm);
  for (const auto& c : options.covariates) {
    fx.formula.push_back(c);
    fx.tertile_formula.push_back(c);
  }
  fx.cut_low = res.tertiles.cut_low;
  fx.cut_high = res.tertiles.cut_high;

  // Vaccine-arm model and the evaluation grid.
  std::span<const ParticipantRecord> work = tertile_mode ? std::span<const ParticipantRecord>(res.tertiles.records)
                                                         : records;
  const RiskModel model0 = fit_vaccine(options.family, work, res.design, fx.formula, options.t_horizon);
  Eigen::ArrayXd grid;
  if (tertile_mode) {
    grid = Eigen::ArrayXd::LinSpaced(3, 0.0, 2.0);
  } else if (!options.grid.values.empty()) {
    grid = Eigen::Map<const Eigen::ArrayXd>(options.grid.values.data(),
                                            static_cast<Eigen::Index>(options.grid.values.size()));
  } else {
    grid = default_grid(records, res.design, options.grid.n, options.grid.lo_quantile, options.grid.hi_quantile);
  }
  res.rm = marginalized_risk_curve(model0, work, res.design, grid);
  for (const auto& w : res.rm.meta.warnings) warn.push_back(w);
  if (res.rm.size() == 0) throw Error(ErrorKind::Estimation, "no grid point lies within the observed marker range");
  fx.grid = res.rm.grid;

  res.scent = find_scent(res.rm, res.summary.overall_vaccine_risk);
  if (res.scent.warning) warn.push_back(*res.scent.warning);
  res.rm.meta.scent = res.scent.s;

  // Contrast points and the sensitivity specification.
  const auto p2 = phase_two_vaccine(records);
  const auto p2m = markers_of(p2);
  const auto p2w = design_weights(p2, res.design);
  if (tertile_mode) {
    fx.s1 = 0.0;
    fx.s2 = 2.0;
  } else {
    const double probs[] = {options.contrast_quantiles.first, options.contrast_quantiles.second};
    const auto q = weighted_quantiles(p2m, p2w, probs);
    fx.s1 = q[0];
    fx.s2 = q[1];
    if (!(fx.s1 < fx.s2)) throw Error(ErrorKind::Data, "contrast quantiles coincide; marker too discrete");
  }
  res.s1 = fx.s1;
  res.s2 = fx.s2;

  const auto& sc = options.sensitivity;
  double sf1 = fx.s1, sf2 = fx.s2;
  if (tertile_mode) {
    if (sc.s1_fix || sc.s1_fix_quantile) warn.push_back("tertile mode: sensitivity fixed pair set to codes 0 and 2");
  } else if (sc.s1_fix) {
    sf1 = *sc.s1_fix;
    sf2 = *sc.s2_fix;
  } else if (sc.s1_fix_quantile) {
    const double probs[] = {*sc.s1_fix_quantile, *sc.s2_fix_quantile};
    const auto q = weighted_quantiles(p2m, p2w, probs);
    sf1 = q[0];
    sf2 = q[1];
  }
  res.spec = sc.mode == SensitivityMode::CommonLogLinear ? SensitivitySpec::common(sc.rr_ud_fix, sf1, sf2)
                                                         : SensitivitySpec::fixed_pair(sc.rr_ud_fix, sc.rr_eu_fix, sf1, sf2);
  if (res.spec.mode == SensitivityMode::CommonLogLinear) {
    res.rc_bound = conservative_risk_curve(res.rm, res.scent.s, res.spec);
    for (const auto& w : res.rc_bound->meta.warnings)
      if (std::find(warn.begin(), warn.end(), w) == warn.end()) warn.push_back(w);
    fx.mult = anchor_multipliers(fx.grid, res.scent.s, res.spec);
    res.surface = rru_surface(res.spec, fx.grid);
  } else {
    warn.push_back("fixed-pair sensitivity: no controlled-risk bound curve or RR_U surface");
  }

  // Point estimates through the same code path as every replicate.
  Extras ex;
  const Stats pt = compute_stats(records, fx, &ex);
  res.model = std::move(ex.model);
  res.tertile_model = std::move(ex.tertile_model);
  res.placebo = std::move(ex.placebo);
  res.cve_naive = cve_curve(res.rm, res.placebo);
  if (res.rc_bound) res.cve_cons = cve_curve(*res.rc_bound, res.placebo);

  const Layout lay{fx.grid.size(), fx.mult.has_value()};
  res.replicate_columns = column_names(lay);
  Eigen::VectorXd lo, hi;
  if (options.bootstrap) {
    res.bootstrap = run_bootstrap(records, *options.bootstrap, [&](std::span<const ParticipantRecord> sample) {
      return flatten(compute_stats(sample, fx), lay);
    });
    for (const auto& w : res.bootstrap->warnings) warn.push_back(w);
    lo = res.bootstrap->ci_lo;
    hi = res.bootstrap->ci_hi;
    const std::size_t n_ok = options.bootstrap->n_replicates - res.bootstrap->n_failed;
    attach_bands(res.rm, lo, hi, lay.rm(), n_ok, warn);
    attach_bands(res.cve_naive, lo, hi, lay.cve_n(), n_ok, warn);
    if (res.rc_bound) {
      attach_bands(*res.rc_bound, lo, hi, lay.rc(), n_ok, warn);
      attach_bands(*res.cve_cons, lo, hi, lay.cve_c(), n_ok, warn);
    }
  }

  auto ci = [&](Eigen::Index k, ContrastRow& row) {
    if (!res.bootstrap) return;
    const Eigen::Index i = lay.scalars() + k;
    if (std::isfinite(lo(i))) row.ci_lo = lo(i);
    if (std::isfinite(hi(i))) row.ci_hi = hi(i);
  };
  auto add = [&](const std::string& contrast, double s1, double s2, const std::string& quantity, double estimate,
                 std::optional<Eigen::Index> k = std::nullopt) -> ContrastRow& {
    ContrastRow row{contrast, s1, s2, quantity, estimate, std::nullopt, std::nullopt};
    if (k) ci(*k, row);
    res.contrasts.push_back(row);
    return res.contrasts.back();
  };
  // RR, bound and E-values for one contrast.
  auto ratio_block = [&](const std::string& name, double s1, double s2, double rr, Eigen::Index k,
                         std::optional<double> b) {
    const auto& rr_row = add(name, s1, s2, "rr_m", rr, k);
    const auto rr_lo = rr_row.ci_lo, rr_hi = rr_row.ci_hi;
    if (b) {
      add(name, s1, s2, "bias_factor", *b);
      auto& bound = add(name, s1, s2, "rr_c_bound", conservative_rr(rr, *b));
      if (rr_lo) bound.ci_lo = *rr_lo * *b;
      if (rr_hi) bound.ci_hi = *rr_hi * *b;
    }
    std::optional<double> limit;
    if (rr <= 1.0 && rr_hi) limit = *rr_hi;
    if (rr > 1.0 && rr_lo) limit = 1.0 / *rr_lo;
    const auto ev = evalues(rr, limit);
    add(name, s1, s2, "e_value_point", ev.e_point);
    if (limit) add(name, s1, s2, "e_value_ul", ev.e_ul);
    if (ev.reciprocal) {
      add(name, s1, s2, "e_value_reciprocal", 1.0);
      warn.push_back(name + ": RR_M >= 1, E-values computed on the reciprocal");
    }
  };

  const double b_fix = bias_factor(res.spec.rr_ud_fix, res.spec.rr_eu_fix);
  if (!tertile_mode) {
    std::ostringstream name;
    name << "quantile_" << csv::format(options.contrast_quantiles.first) << "_vs_"
         << csv::format(options.contrast_quantiles.second);
    add(name.str(), fx.s1, fx.s2, "r_m_s1", pt.r1, kR1);
    add(name.str(), fx.s1, fx.s2, "r_m_s2", pt.r2, kR2);
    add(name.str(), fx.s1, fx.s2, "or_m", pt.or_m, kOR);
    std::optional<double> b;
    try {
      b = bias_at(res.spec, fx.s1, fx.s2);
    } catch (const Error&) {
      warn.push_back("fixed-pair sensitivity: the contrast pair differs from the fixed pair, no RR_C bound");
    }
    ratio_block(name.str(), fx.s1, fx.s2, pt.rr_m, kRR, b);
  }
  const std::string tname = "tertile_upper_vs_lower";
  add(tname, 0.0, 2.0, "cut_low", res.tertiles.cut_low);
  add(tname, 0.0, 2.0, "cut_high", res.tertiles.cut_high);
  add(tname, 0.0, 2.0, "r_m_lower", pt.rt0, kRT0);
  add(tname, 0.0, 2.0, "r_m_upper", pt.rt2, kRT2);
  ratio_block(tname, 0.0, 2.0, pt.rr_tert, kRRT, b_fix);
  add("placebo", 0.0, 0.0, "placebo_risk", pt.p0, kP0);
  add("placebo", 0.0, 0.0, "ve_overall", pt.ve, kVE);

  if (options.llod) {
    try {
      res.probe = mediation_probe(res.cve_naive, *options.llod);
      const auto& p = *res.probe;
      auto& row = add("mediation", p.s, p.s, "cve_at_llod", p.cve);
      row.ci_lo = p.ci_lo;
      row.ci_hi = p.ci_hi;
      if (p.full_mediation_not_rejected)
        add("mediation", p.s, p.s, "full_mediation_not_rejected", *p.full_mediation_not_rejected ? 1.0 : 0.0);
    } catch (const Error& e) {
      warn.push_back(e.what());
    }
  }

  res.rm.meta.warnings = warn;
  if (res.rc_bound) res.rc_bound->meta.scent = res.scent.s;
  return res;
}

// ---------------------------------------------------------------------------
// Output files

namespace {

std::string curve_csv(const CurveEstimate& c, const char* value_col, const char* flag_col,
                      const std::function<bool(double)>& flag) {
  csv::Writer w({"s", value_col, "ci_lo", "ci_hi", "kind", flag_col});
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    std::optional<double> lo, hi;
    if (c.ci_lo) lo = (*c.ci_lo)(i);
    if (c.ci_hi) hi = (*c.ci_hi)(i);
    w.row({csv::format(c.grid(i)), csv::format(c.point(i)), csv::format(lo), csv::format(hi), to_string(c.kind),
           flag(c.grid(i)) ? "1" : "0"});
  }
  return w.str();
}

}  // namespace

std::map<std::string, std::string> render_outputs(const AnalysisResult& r, const AnalysisOptions& options) {
  std::map<std::string, std::string> out;

  {
    csv::Writer w({"quantity", "value"});
    const auto& s = r.summary;
    w.row({"n_total", std::to_string(s.n_total)});
    w.row({"n_vaccine", std::to_string(s.n_vaccine)});
    w.row({"n_placebo", std::to_string(s.n_placebo)});
    w.row({"n_cases_vaccine", std::to_string(s.n_cases_vaccine)});
    w.row({"n_cases_placebo", std::to_string(s.n_cases_placebo)});
    w.row({"n_phase2", std::to_string(s.n_phase2)});
    w.row({"overall_vaccine_risk", csv::format(s.overall_vaccine_risk)});
    for (const auto& [p, q] : s.marker_quantiles) w.row({"marker_q" + csv::format(p), csv::format(q)});
    w.row({"scent", csv::format(r.scent.s)});
    w.row({"scent_gap", csv::format(r.scent.gap)});
    w.row({"contrast_s1", csv::format(r.s1)});
    w.row({"contrast_s2", csv::format(r.s2)});
    w.row({"sensitivity_s1_fix", csv::format(r.spec.s1_fix)});
    w.row({"sensitivity_s2_fix", csv::format(r.spec.s2_fix)});
    w.row({"sensitivity_gamma", csv::format(r.spec.gamma)});
    out["cohort_summary.csv"] = w.str();
  }
  {
    csv::Writer w({"id", "stratum", "n_stratum", "n_sampled", "pi_hat", "phase_two", "weight"});
    for (const auto& rec : r.tertiles.records) {
      if (!rec.vaccine()) continue;
      const auto key = r.design.stratum_of(rec);
      w.row({rec.id, to_string(key), std::to_string(r.design.n_total.at(key)),
             std::to_string(r.design.n_sampled.at(key)), csv::format(r.design.pi_hat.at(key)),
             rec.phase_two() ? "1" : "0", csv::format(rec.phase_two() ? r.design.weight(rec) : 0.0)});
    }
    out["weights.csv"] = w.str();
  }
  {
    csv::Writer w({"covariate", "level", "n", "min", "q05", "q50", "q95", "max", "coverage", "flagged"});
    for (const auto& p : r.positivity) {
      const bool empty = p.n == 0;
      auto num = [&](double v) { return empty ? std::string() : csv::format(v); };
      w.row({p.covariate, p.level, std::to_string(p.n), num(p.min), num(p.q05), num(p.q50), num(p.q95), num(p.max),
             csv::format(p.coverage), p.flagged ? "1" : "0"});
    }
    out["positivity.csv"] = w.str();
  }
  {
    csv::Writer w({"covariate", "level", "reference", "n_level", "n_reference", "outcome_rr", "rr_ci_lo", "rr_ci_hi",
                   "marker_diff", "diff_ci_lo", "diff_ci_hi", "note"});
    for (const auto& c : r.confounders)
      w.row({c.covariate, c.level, c.reference, std::to_string(c.n_level), std::to_string(c.n_reference),
             csv::format(c.outcome_rr), csv::format(c.rr_lo), csv::format(c.rr_hi), csv::format(c.marker_diff),
             csv::format(c.diff_lo), csv::format(c.diff_hi), c.note});
    out["confounder_table.csv"] = w.str();
  }

  const double scent = r.scent.s;
  auto at_scent = [scent](double s) { return s == scent; };
  const double llod = options.llod.value_or(-std::numeric_limits<double>::infinity());
  auto below_llod = [llod](double s) { return s <= llod; };
  auto empty_curve = [](const char* value_col, const char* flag_col) {
    return csv::Writer({"s", value_col, "ci_lo", "ci_hi", "kind", flag_col}).str();
  };
  out["curve_rm.csv"] = curve_csv(r.rm, "estimate", "scent_flag", at_scent);
  out["curve_rc_bound.csv"] =
      r.rc_bound ? curve_csv(*r.rc_bound, "estimate", "scent_flag", at_scent) : empty_curve("estimate", "scent_flag");
  out["curve_cve_naive.csv"] = curve_csv(r.cve_naive, "cve", "llod_flag", below_llod);
  out["curve_cve_cons.csv"] =
      r.cve_cons ? curve_csv(*r.cve_cons, "cve", "llod_flag", below_llod) : empty_curve("cve", "llod_flag");

  {
    csv::Writer w({"contrast", "s1", "s2", "quantity", "estimate", "ci_lo", "ci_hi"});
    for (const auto& c : r.contrasts)
      w.row({c.contrast, csv::format(c.s1), csv::format(c.s2), c.quantity, csv::format(c.estimate),
             csv::format(c.ci_lo), csv::format(c.ci_hi)});
    out["contrasts.csv"] = w.str();
  }
  {
    csv::Writer w({"s1", "s2", "rr_u", "b"});
    for (const auto& c : r.surface) w.row({csv::format(c.s1), csv::format(c.s2), csv::format(c.rr_u), csv::format(c.b)});
    out["surface_rru.csv"] = w.str();
  }
  if (options.keep_replicates && r.bootstrap) {
    std::vector<std::string> header{"replicate", "ok"};
    header.insert(header.end(), r.replicate_columns.begin(), r.replicate_columns.end());
    csv::Writer w(header);
    const auto& m = r.bootstrap->replicates;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<std::string> f{std::to_string(i), r.bootstrap->ok[static_cast<std::size_t>(i)] ? "1" : "0"};
      for (Eigen::Index j = 0; j < m.cols(); ++j) f.push_back(csv::format(m(i, j)));
      w.row(f);
    }
    out["replicates.csv"] = w.str();
  }
  return out;
}

RunSummary run_analysis(const AnalysisConfig& config) {
  if (!fs::exists(config.schema_json)) throw Error(ErrorKind::Io, "schema file not found: " + config.schema_json.string());
  const std::string schema_text = csv::read_text(config.schema_json);
  TrialSchema schema;
  try {
    schema = TrialSchema::from_json(json::parse(schema_text));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, "schema " + config.schema_json.string() + " is not valid JSON: " + e.what());
  }
  if (!fs::exists(config.trial_csv)) throw Error(ErrorKind::Io, "trial file not found: " + config.trial_csv.string());
  const std::string trial_text = csv::read_text(config.trial_csv);
  std::istringstream in(trial_text);
  const auto loaded = parse_trial_csv(in, schema);
  if (!loaded.errors.empty()) {
    const auto& e = loaded.errors.front();
    throw Error(ErrorKind::Row, std::to_string(loaded.errors.size()) + " rejected rows in " +
                                    config.trial_csv.string() + "; first at line " + std::to_string(e.line) +
                                    " (id '" + e.id + "'): " + e.message);
  }

  AnalysisConfig effective = config;
  auto& opts = effective.options;
  if (!(opts.t_horizon > 0.0) && schema.t_horizon) opts.t_horizon = *schema.t_horizon;

  RunSummary run;
  run.result = analyze(loaded.records, opts);
  auto files = render_outputs(run.result, opts);

  json manifest;
  manifest["tool"] = "cvecop";
  manifest["version"] = COP_VERSION;
  manifest["config"] = effective.to_json();
  manifest["config_hash"] = csv::hex(csv::fnv1a(effective.to_json().dump()));
  manifest["inputs"] = {
      {"trial_csv", {{"name", config.trial_csv.filename().string()}, {"fnv1a", csv::hex(csv::fnv1a(trial_text))}}},
      {"schema", {{"name", config.schema_json.filename().string()}, {"fnv1a", csv::hex(csv::fnv1a(schema_text))}}}};
  manifest["schema"] = schema.to_json();
  manifest["seed"] = opts.bootstrap ? json(opts.bootstrap->seed) : json(nullptr);
  const auto& res = run.result;
  manifest["bootstrap"] = res.bootstrap ? json{{"replicates", opts.bootstrap->n_replicates},
                                               {"failed", res.bootstrap->n_failed}}
                                        : json(nullptr);
  manifest["scent"] = res.scent.s;
  manifest["anchoring"] = "r_C(s_cent) = r_M(s_cent) assumed at the grid point closest to the overall vaccine risk";
  manifest["sensitivity_hash"] = res.spec.hash();
  manifest["tertile_ties"] = "values equal to a cut point go to the lower tertile";
  manifest["model"] = {{"family", to_string(res.model.family)},
                       {"coefficients", res.model.coefficients()},
                       {"iterations", res.model.convergence.iterations},
                       {"score_norm", res.model.convergence.score_norm}};
  manifest["warnings"] = res.warnings;
  json hashes = json::object();
  for (const auto& [name, body] : files) hashes[name] = csv::hex(csv::fnv1a(body));
  manifest["outputs"] = hashes;

  fs::create_directories(config.output_dir);
  for (const auto& [name, body] : files) {
    csv::write_atomic(config.output_dir / name, body);
    run.written.push_back(config.output_dir / name);
  }
  csv::write_atomic(config.output_dir / "run_manifest.json", manifest.dump(2) + "\n");
  run.written.push_back(config.output_dir / "run_manifest.json");
  return run;
}

}  // namespace cop
