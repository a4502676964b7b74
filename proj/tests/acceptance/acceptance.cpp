// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when all pass).
//
//   acceptance            criterion 5 in smoke mode (50 x 200, band [88, 100]%)
//   acceptance --full     criterion 5 at 300 x 500 with band [93, 97]%
//   acceptance --only 4   run a single criterion

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "cop/analysis.hpp"
#include "cop/bootstrap.hpp"
#include "cop/csv.hpp"
#include "cop/marginal.hpp"
#include "cop/quantile.hpp"
#include "cop/riskreg.hpp"
#include "cop/sensitivity.hpp"
#include "cop/sim.hpp"

#include "../oracles.hpp"

namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kBiasTol = 2.0 * std::numeric_limits<double>::epsilon();
constexpr double kEvalueRelTol = 1e-12;
constexpr double kRecoveryTol = 0.01;
constexpr double kBoundValidity = 0.95;
constexpr double kIdentityTol = 1e-12;
constexpr double kAnchorTol = 0.0;
constexpr double kLogisticTol = 1e-8;
constexpr double kCoxScoreTol = 1e-6;
constexpr double kDuplicationTol = 1e-6;
constexpr double kEvalueFloor = 2.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

unsigned worker_threads() { return std::max(2u, std::thread::hardware_concurrency()); }

std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

cop::AnalysisOptions cox_options(double t_horizon, std::size_t replicates, std::uint64_t seed) {
  cop::AnalysisOptions o;
  o.family = cop::ModelFamily::CaseCohortCox;
  o.t_horizon = t_horizon;
  o.covariates = {"x"};
  o.llod = 1.5;
  if (replicates == 0) {
    o.bootstrap.reset();
  } else {
    cop::BootstrapPlan plan;
    plan.n_replicates = replicates;
    plan.seed = seed;
    plan.threads = worker_threads();
    o.bootstrap = plan;
  }
  o.bootstrap_confounder_table = false;
  return o;
}

// Largest |(1 - CVE(s_j)) / (1 - CVE(s_i)) - r_M(s_j) / r_M(s_i)| over grid pairs.
double identity_gap(const Eigen::ArrayXd& rm, const Eigen::ArrayXd& cve) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < rm.size(); ++i)
    for (Eigen::Index j = i + 1; j < rm.size(); ++j) {
      const double lhs = (1.0 - cve(j)) / (1.0 - cve(i));
      const double rhs = cop::risk_ratio(rm(i), rm(j));
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  return worst;
}

// Identity gap over the point curves and every bootstrap replicate.
double identity_gap(const cop::AnalysisResult& r) {
  double worst = identity_gap(r.rm.point, r.cve_naive.point);
  if (r.bootstrap) {
    const auto& m = r.bootstrap->replicates;
    const Eigen::Index g = r.rm.size();
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      if (!r.bootstrap->ok[static_cast<std::size_t>(k)]) continue;
      const Eigen::ArrayXd rm = m.row(k).segment(0, g).transpose().array();
      const Eigen::ArrayXd cve = m.row(k).segment(r.rc_bound ? 2 * g : g, g).transpose().array();
      worst = std::max(worst, identity_gap(rm, cve));
    }
  }
  return worst;
}

// Analyses collected for criterion 6.
std::vector<std::pair<std::string, double>> g_identity;

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const double b = cop::bias_factor(4.0, 4.0);
  const double exact = 16.0 / 7.0;
  const double err = std::abs(b - exact);
  return {err <= kBiasTol * exact, "B(4,4)=" + fmt(b, 17) + " |B-16/7|=" + fmt(err, 3)};
}

Outcome criterion2() {
  using hp = boost::multiprecision::cpp_dec_float_50;
  std::mt19937_64 rng(424242);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    double rr = unif(rng);
    while (rr == 0.0) rr = unif(rng);
    const hp x(rr);
    const hp ref = (hp(1) + boost::multiprecision::sqrt(hp(1) - x)) / x;
    const double got = cop::evalue_point(rr);
    const double rel = static_cast<double>(boost::multiprecision::abs((hp(got) - ref) / ref));
    worst = std::max(worst, rel);
  }
  bool ul_ok = true;
  for (double ul : {1.0, 1.0000001, 1.2, 3.0, 1e6}) ul_ok = ul_ok && cop::evalue_ul(ul) == 1.0;
  return {worst <= kEvalueRelTol && ul_ok,
          "max rel err over 1000 draws=" + fmt(worst, 3) + ", e_ul(>=1)==1: " + (ul_ok ? "yes" : "no")};
}

Outcome criterion3() {
  auto sc = cop::sim::strong_cop();
  sc.n = 50000;
  sc.subsample_rate = 0.2;
  sc.seed = 31;
  const auto records = cop::sim::generate_trial(sc);
  const auto design = cop::estimate_sampling_probs(records);
  const auto model = cop::fit_casecohort_cox(records, design, {"marker", "x"}, sc.t_horizon);
  const auto grid = cop::default_grid(records, design);
  const auto curve = cop::marginalized_risk_curve(model, records, design, grid);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < curve.size(); ++i)
    worst = std::max(worst, std::abs(curve.point(i) - oracle::controlled_risk(sc, curve.grid(i))));
  const bool full_grid = curve.size() == 101;
  return {full_grid && worst <= kRecoveryTol,
          "n=50000, grid points=" + std::to_string(curve.size()) + ", max |r_M - r_C|=" + fmt(worst, 4)};
}

Outcome criterion4() {
  const auto base = cop::sim::confounded();
  constexpr int kReps = 300;
  // realized strengths of the scenario at its true 15th/85th percentiles
  const double t1 = cop::sim::true_marker_quantile(base, 0.15);
  const double t2 = cop::sim::true_marker_quantile(base, 0.85);
  const auto realized = cop::sim::confounding_strength(base, t1, t2);
  const bool within_cap = realized.rr_ud <= 4.0 && realized.rr_eu <= 4.0;

  int covered = 0;
  double max_ud = 1.0, max_eu = 1.0;
  for (int rep = 0; rep < kReps; ++rep) {
    auto sc = base;
    sc.n = 10000;
    sc.seed = base.seed + 1000 + static_cast<std::uint64_t>(rep);
    const auto records = cop::sim::generate_trial(sc);
    const auto design = cop::estimate_sampling_probs(records);
    const auto p2 = cop::phase_two_vaccine(records);
    const auto q = cop::weighted_quantiles(cop::markers_of(p2), cop::design_weights(p2, design),
                                           std::vector<double>{0.15, 0.85});
    const auto model = cop::fit_casecohort_cox(records, design, {"marker", "x"}, sc.t_horizon);
    const double rr_m = cop::marginalized_rr(model, records, design, q[0], q[1]);
    const double bound = cop::conservative_rr(rr_m, cop::bias_factor(4.0, 4.0));
    const double truth = oracle::controlled_risk(sc, q[1]) / oracle::controlled_risk(sc, q[0]);
    const auto cs = cop::sim::confounding_strength(sc, q[0], q[1]);
    max_ud = std::max(max_ud, cs.rr_ud);
    max_eu = std::max(max_eu, cs.rr_eu);
    if (bound > truth) ++covered;
  }
  const double share = static_cast<double>(covered) / kReps;
  return {within_cap && share >= kBoundValidity,
          "bound > true RR_C in " + std::to_string(covered) + "/" + std::to_string(kReps) + " (" +
              fmt(100 * share, 4) + "%); realized RR_UD=" + fmt(realized.rr_ud, 4) + " RR_EU=" +
              fmt(realized.rr_eu, 4) + " at true s15/s85 (max over estimated pairs " + fmt(max_ud, 4) + ", " +
              fmt(max_eu, 4) + ")"};
}

Outcome criterion5(bool full) {
  const int outer = full ? 300 : 50;
  const std::size_t inner = full ? 500 : 200;
  const double lo = full ? 0.93 : 0.88, hi = full ? 0.97 : 1.00;
  const auto base = cop::sim::null_marker();
  int covered = 0, failed_runs = 0;
  for (int rep = 0; rep < outer; ++rep) {
    auto sc = base;
    sc.n = 5000;
    sc.seed = base.seed + 5000 + static_cast<std::uint64_t>(rep);
    const auto records = cop::sim::generate_trial(sc);
    const auto design = cop::estimate_sampling_probs(records);
    const auto p2 = cop::phase_two_vaccine(records);
    const auto q = cop::weighted_quantiles(cop::markers_of(p2), cop::design_weights(p2, design),
                                           std::vector<double>{0.15, 0.85});
    cop::BootstrapPlan plan;
    plan.n_replicates = inner;
    plan.seed = 777 + static_cast<std::uint64_t>(rep);
    plan.threads = worker_threads();
    try {
      const auto boot = cop::run_bootstrap(records, plan, [&](std::span<const cop::ParticipantRecord> s) {
        const auto d = cop::estimate_sampling_probs(s);
        const auto m = cop::fit_casecohort_cox(s, d, {"marker", "x"}, sc.t_horizon);
        Eigen::VectorXd v(1);
        v(0) = cop::marginalized_rr(m, s, d, q[0], q[1]);
        return v;
      });
      if (boot.ci_lo(0) <= 1.0 && 1.0 <= boot.ci_hi(0)) ++covered;
    } catch (const cop::Error&) {
      ++failed_runs;
    }
  }
  const double share = static_cast<double>(covered) / outer;
  return {failed_runs == 0 && share >= lo && share <= hi,
          std::string(full ? "full" : "smoke") + " " + std::to_string(outer) + "x" + std::to_string(inner) +
              ": CI covers 1 in " + std::to_string(covered) + "/" + std::to_string(outer) + " (" +
              fmt(100 * share, 4) + "%), target [" + fmt(100 * lo, 3) + ", " + fmt(100 * hi, 3) + "]%"};
}

Outcome criterion6() {
  // Datasets analyzed elsewhere in the suite plus the two remaining presets.
  for (const auto& name : {std::string("null-marker"), std::string("confounded")}) {
    const auto sc = cop::sim::preset(name);
    const auto records = cop::sim::generate_trial(sc);
    const auto res = cop::analyze(records, cox_options(sc.t_horizon, 50, 6));
    g_identity.emplace_back(name, identity_gap(res));
  }
  double worst = 0.0;
  std::string names;
  for (const auto& [name, gap] : g_identity) {
    worst = std::max(worst, gap);
    names += (names.empty() ? "" : ", ") + name;
  }
  return {!g_identity.empty() && worst <= kIdentityTol,
          std::to_string(g_identity.size()) + " analyses (" + names + ") incl. bootstrap replicates, max gap=" +
              fmt(worst, 3)};
}

Outcome criterion7() {
  // Monotone decreasing risk curves: linear, log-linear, logistic-shaped and
  // the estimated r_M curves of the simulated presets.
  struct Fixture {
    std::string name;
    Eigen::ArrayXd grid, risk;
    double overall;
  };
  std::vector<Fixture> fixtures;
  const Eigen::ArrayXd g = Eigen::ArrayXd::LinSpaced(101, 1.0, 4.0);
  const Eigen::ArrayXd t = (g - 1.0) / 3.0;
  for (double overall : {0.02, 0.03, 0.04}) {
    fixtures.push_back({"linear", g, 0.05 - 0.04 * t, overall});
    fixtures.push_back({"loglinear", g, 0.05 * (std::log(0.2) * t).exp(), overall});
    fixtures.push_back({"logistic", g, 1.0 / (1.0 + (3.0 + 3.0 * (t - 0.5)).exp()), overall});
  }
  for (const auto& name : {std::string("strong-cop"), std::string("confounded")}) {
    const auto sc = cop::sim::preset(name);
    const auto records = cop::sim::generate_trial(sc);
    const auto design = cop::estimate_sampling_probs(records);
    const auto model = cop::fit_casecohort_cox(records, design, {"marker", "x"}, sc.t_horizon);
    const auto curve = cop::marginalized_risk_curve(model, records, design, cop::default_grid(records, design));
    const auto summary = cop::summarize_cohort(records, design);
    fixtures.push_back({name + "-estimate", curve.grid, curve.point, summary.overall_vaccine_risk});
  }

  int checked = 0, ok = 0;
  double worst_anchor = 0.0;
  for (const auto& f : fixtures) {
    cop::CurveEstimate c;
    c.grid = f.grid;
    c.point = f.risk;
    const auto scent = cop::find_scent(c, f.overall);
    const double span = f.grid(f.grid.size() - 1) - f.grid(0);
    for (double rr_u : {1.5, 2.0, 4.0}) {
      const auto spec =
          cop::SensitivitySpec::common(rr_u, f.grid(0) + 0.15 * span, f.grid(0) + 0.85 * span);
      const auto cons = cop::conservative_risk_curve(c, scent.s, spec);
      const double p0 = 0.06;
      const Eigen::ArrayXd cve_n = 1.0 - c.point / p0, cve_c = 1.0 - cons.point / p0;
      auto tv = [](const Eigen::ArrayXd& a) {
        return oracle::total_variation(std::vector<double>(a.data(), a.data() + a.size()));
      };
      const bool risk_ok = tv(cons.point) <= tv(c.point);
      const bool cve_ok = tv(cve_c) <= tv(cve_n);
      const double anchor = std::max(std::abs(cons.point(scent.index) - c.point(scent.index)),
                                     std::abs(cve_c(scent.index) - cve_n(scent.index)));
      worst_anchor = std::max(worst_anchor, anchor);
      ++checked;
      if (risk_ok && cve_ok && anchor <= kAnchorTol) ++ok;
    }
  }
  return {ok == checked, std::to_string(ok) + "/" + std::to_string(checked) +
                             " fixture x RR_U cases flatten (risk and CVE), max anchor shift=" + fmt(worst_anchor, 3)};
}

Outcome criterion8() {
  std::vector<std::string> notes;
  bool pass = true;

  // (a) 2x2 table through the IPW logistic fit with pi-hat = 1.
  {
    const int a = 37, b = 163, c = 81, d = 119;
    std::vector<cop::ParticipantRecord> recs;
    int id = 0;
    auto add = [&](int count, bool y, double s) {
      for (int k = 0; k < count; ++k) recs.push_back(oracle::record("r" + std::to_string(id++), true, y, s, true));
    };
    add(a, true, 1.0);
    add(b, false, 1.0);
    add(c, true, 0.0);
    add(d, false, 0.0);
    const auto design = cop::estimate_sampling_probs(recs);
    const auto m = cop::fit_weighted_logistic(recs, design, {"marker"});
    const double err = std::abs(m.coefficients().at("marker") - oracle::log_odds_ratio(a, b, c, d));
    pass = pass && err <= kLogisticTol;
    notes.push_back("2x2 |err|=" + fmt(err, 3));
  }

  // (b) Cox score at the fitted coefficients, full sampling, no ties.
  {
    auto sc = cop::sim::strong_cop();
    sc.n = 3000;
    sc.subsample_rate = 1.0;
    sc.seed = 88;
    const auto recs = cop::sim::generate_trial(sc);
    const auto design = cop::estimate_sampling_probs(recs);
    const auto m = cop::fit_casecohort_cox(recs, design, {"marker", "x"}, sc.t_horizon);
    const auto coef = m.coefficients();
    std::vector<oracle::SurvRow> rows;
    for (const auto& r : cop::phase_two_vaccine(recs)) {
      const auto& lvl = std::get<std::string>(r.covariates.at("x"));
      rows.push_back({std::min(r.survival->time, sc.t_horizon), r.outcome,
                      {*r.marker, lvl == "B" ? 1.0 : 0.0, lvl == "C" ? 1.0 : 0.0}, 1.0});
    }
    const auto u = oracle::cox_score(rows, {coef.at("marker"), coef.at("x[B]"), coef.at("x[C]")});
    const double norm = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    pass = pass && norm <= kCoxScoreTol;
    notes.push_back("Cox score norm=" + fmt(norm, 3));
  }

  // (c) Weight 2 versus duplicated records, both families.
  {
    auto sc = cop::sim::strong_cop();
    sc.n = 4000;
    sc.seed = 99;
    const auto recs = cop::phase_two_vaccine(cop::sim::generate_trial(sc));
    std::vector<cop::ParticipantRecord> expanded;
    std::vector<double> w, ones;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const double wi = i % 2 ? 2.0 : 1.0;
      w.push_back(wi);
      for (int k = 0; k < static_cast<int>(wi); ++k) {
        expanded.push_back(recs[i]);
        ones.push_back(1.0);
      }
    }
    const cop::Formula f{"marker", "x"};
    double worst = 0.0;
    const auto lw = cop::fit_weighted_logistic(recs, w, f).beta;
    const auto le = cop::fit_weighted_logistic(expanded, ones, f).beta;
    worst = std::max(worst, (lw - le).cwiseAbs().maxCoeff());
    const auto cw = cop::fit_casecohort_cox(recs, w, f, sc.t_horizon).beta;
    const auto ce = cop::fit_casecohort_cox(expanded, ones, f, sc.t_horizon).beta;
    worst = std::max(worst, (cw - ce).cwiseAbs().maxCoeff());
    pass = pass && worst <= kDuplicationTol;
    notes.push_back("duplication max |diff|=" + fmt(worst, 3));
  }
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {pass, detail};
}

Outcome criterion9() {
  const auto sc = cop::sim::strong_cop();
  const auto records = cop::sim::generate_trial(sc);
  const auto res = cop::analyze(records, cox_options(sc.t_horizon, 500, 9));
  g_identity.emplace_back("strong-cop", identity_gap(res));
  const auto& cons = *res.cve_cons;
  bool increasing = cons.point(cons.size() - 1) > cons.point(0);
  for (Eigen::Index i = 1; i < cons.size(); ++i) increasing = increasing && cons.point(i) >= cons.point(i - 1);
  const double low = cons.point(0);
  const auto* ev = res.find("tertile_upper_vs_lower", "e_value_point");
  const auto* ve = res.find("placebo", "ve_overall");
  const bool pass = increasing && low > 0.0 && ev && ev->estimate > kEvalueFloor;
  return {pass, "VE=" + fmt(ve ? ve->estimate : NAN, 4) + ", CVE_cons increasing: " + (increasing ? "yes" : "no") +
                    ", CVE_cons(lowest s)=" + fmt(low, 4) +
                    ", tertile E-value=" + fmt(ev ? ev->estimate : NAN, 4) + ", bootstrap failures=" +
                    std::to_string(res.bootstrap ? res.bootstrap->n_failed : 0) + "/500"};
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome criterion10() {
  const fs::path dir = fs::temp_directory_path() / ("cvecop_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string exe = CVECOP_EXE;
  auto run = [&](const std::string& args) {
    const std::string cmd = args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  if (run(exe + " simulate --preset strong-cop --out " + (dir / "sim").string()) != 0)
    return {false, "simulate failed"};
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"trial_csv": "sim/trial.csv", "schema": "sim/schema.json", "output_dir": "out",
               "family": "cox", "covariates": ["x"], "llod": 1.5,
               "sensitivity": {"rr_u_fix": 4.0},
               "bootstrap": {"replicates": 100, "seed": 2024}})";
  }
  const std::vector<std::pair<std::string, std::string>> runs{
      {"t1", exe + " --threads 1 --keep-replicates"},
      {"t4", exe + " --threads 4 --keep-replicates"},
      {"env3", "CVECOP_THREADS=3 " + exe + " --keep-replicates"},
      {"t1again", exe + " --threads 1 --keep-replicates"}};
  std::vector<fs::path> outs;
  for (const auto& [tag, prefix] : runs) {
    fs::remove_all(dir / "out");
    if (run(prefix + " analyze --config " + (dir / "config.json").string()) != 0) return {false, tag + " run failed"};
    fs::rename(dir / "out", dir / tag);
    outs.push_back(dir / tag);
  }
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(outs.front())) {
    ++files;
    const auto name = entry.path().filename();
    const auto ref = read_all(entry.path());
    for (std::size_t k = 1; k < outs.size(); ++k) {
      if (!fs::exists(outs[k] / name)) return {false, name.string() + " missing in " + outs[k].filename().string()};
      if (read_all(outs[k] / name) != ref)
        return {false, name.string() + " differs between " + outs.front().filename().string() + " and " +
                           outs[k].filename().string()};
    }
  }
  for (std::size_t k = 1; k < outs.size(); ++k) {
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(outs[k])) ++n;
    if (n != files) return {false, "file sets differ"};
  }
  fs::remove_all(dir);
  return {files >= 12, std::to_string(outs.size()) + " runs (threads 1, 4, env 3, 1) byte-identical over " +
                           std::to_string(files) + " files"};
}

}  // namespace

int main(int argc, char** argv) {
  bool full = false;
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--full") full = true;
    if (a == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"bias factor exactness", criterion1},
      {"E-value formula", criterion2},
      {"identifiability recovery", criterion3},
      {"bound validity", criterion4},
      {"bootstrap coverage", [full] { return criterion5(full); }},
      {"CVE algebraic identity", criterion6},
      {"flattening property", criterion7},
      {"estimator equivalences", criterion8},
      {"qualitative reproduction", criterion9},
      {"determinism", criterion10}};
  // Criterion 6 also checks the analysis run for criterion 9.
  const std::vector<int> order{1, 2, 3, 4, 5, 9, 6, 7, 8, 10};

  int failed = 0;
  for (int k : order) {
    if (only && k != only && !(only == 6 && k == 9)) continue;
    const auto& [name, fn] = criteria[static_cast<std::size_t>(k - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out.pass) ++failed;
    if (only == 6 && k == 9) continue;
    std::printf("%s  [%2d] %-26s %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", k, name.c_str(), out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed;
}
