// cvecop: controlled-risk and controlled-VE curves with sensitivity bounds
// for two-phase vaccine trial data.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cop/analysis.hpp"
#include "cop/csv.hpp"
#include "cop/error.hpp"
#include "cop/sensitivity.hpp"
#include "cop/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool keep_replicates = false;
};

int report(const std::string& kind, const std::string& message, int code) {
  json j = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << j.dump() << "\n";
  return code;
}

unsigned resolve_threads(const Globals& g, unsigned configured) {
  if (g.threads) return std::max(1u, *g.threads);
  if (const char* env = std::getenv("CVECOP_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring CVECOP_THREADS='" << env << "'\n";
  }
  return std::max(1u, configured);
}

int cmd_analyze(const std::string& config_path, const Globals& g) {
  auto config = cop::AnalysisConfig::from_file(config_path);
  auto& opts = config.options;
  if (opts.bootstrap) {
    if (g.seed) opts.bootstrap->seed = *g.seed;
    opts.bootstrap->threads = resolve_threads(g, opts.bootstrap->threads);
  }
  if (g.keep_replicates) opts.keep_replicates = true;
  const auto run = cop::run_analysis(config);
  for (const auto& w : run.result.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << run.written.size() << " files to " << config.output_dir.string() << "\n";
  return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& preset, const std::string& out,
                 const Globals& g) {
  cop::sim::SimScenario sc;
  if (!preset.empty()) {
    sc = cop::sim::preset(preset);
  } else {
    if (!fs::exists(scenario_path)) throw cop::Error(cop::ErrorKind::Io, "scenario file not found: " + scenario_path);
    json j;
    try {
      j = json::parse(cop::csv::read_text(scenario_path));
    } catch (const json::exception& e) {
      throw cop::Error(cop::ErrorKind::Config, "scenario " + scenario_path + " is not valid JSON: " + e.what());
    }
    sc = cop::sim::SimScenario::from_json(j);
  }
  if (g.seed) sc.seed = *g.seed;
  sc.validate();

  const auto records = cop::sim::generate_trial(sc);
  const auto schema = cop::sim::trial_schema(sc);
  const std::string trial = cop::write_trial_csv(records, schema);

  const double q_lo = cop::sim::true_marker_quantile(sc, 0.025);
  const double q_hi = cop::sim::true_marker_quantile(sc, 0.975);
  const Eigen::ArrayXd grid = Eigen::ArrayXd::LinSpaced(101, q_lo, q_hi);
  const auto truth = cop::sim::truth_tables(sc, grid);
  cop::csv::Writer tw({"s", "r_c", "r_m", "cve"});
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    tw.row({cop::csv::format(grid(i)), cop::csv::format(truth.rc(i)),
            cop::csv::format(cop::sim::true_marginalized_risk(sc, grid(i))), cop::csv::format(truth.cve(i))});

  const double s1 = cop::sim::true_marker_quantile(sc, 0.15);
  const double s2 = cop::sim::true_marker_quantile(sc, 0.85);
  const auto strength = cop::sim::confounding_strength(sc, s1, s2);
  const double p0 = cop::sim::true_placebo_risk(sc);
  const double p1 = cop::sim::true_vaccine_risk(sc);

  const std::string scenario_text = sc.to_json().dump(2) + "\n";
  const std::string schema_text = schema.to_json().dump(2) + "\n";
  json manifest;
  manifest["tool"] = "cvecop";
  manifest["version"] = COP_VERSION;
  manifest["scenario"] = sc.name;
  manifest["seed"] = sc.seed;
  manifest["n"] = sc.n;
  manifest["truth"] = {{"placebo_risk", p0},
                       {"vaccine_risk", p1},
                       {"ve", 1.0 - p1 / p0},
                       {"s15", s1},
                       {"s85", s2},
                       {"rr_c_s15_s85", cop::sim::true_controlled_risk(sc, s2) / cop::sim::true_controlled_risk(sc, s1)},
                       {"rr_m_s15_s85",
                        cop::sim::true_marginalized_risk(sc, s2) / cop::sim::true_marginalized_risk(sc, s1)}};
  manifest["confounding_strength"] = {{"s1", s1},
                                      {"s2", s2},
                                      {"rr_ud", strength.rr_ud},
                                      {"rr_eu", strength.rr_eu},
                                      {"unmeasured_present", sc.unmeasured.has_value()}};
  manifest["outputs"] = {{"trial.csv", cop::csv::hex(cop::csv::fnv1a(trial))},
                         {"truth.csv", cop::csv::hex(cop::csv::fnv1a(tw.str()))},
                         {"schema.json", cop::csv::hex(cop::csv::fnv1a(schema_text))},
                         {"scenario.json", cop::csv::hex(cop::csv::fnv1a(scenario_text))}};

  const fs::path dir(out);
  fs::create_directories(dir);
  cop::csv::write_atomic(dir / "trial.csv", trial);
  cop::csv::write_atomic(dir / "truth.csv", tw.str());
  cop::csv::write_atomic(dir / "schema.json", schema_text);
  cop::csv::write_atomic(dir / "scenario.json", scenario_text);
  cop::csv::write_atomic(dir / "sim_manifest.json", manifest.dump(2) + "\n");
  std::cout << "simulated " << records.size() << " participants (" << sc.name << ", seed " << sc.seed << ") into "
            << dir.string() << "\n";
  return 0;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

int cmd_evalue(double rr, std::optional<double> rr_ul) {
  const auto ev = cop::evalues(rr, rr_ul);
  json j;
  j["e_point"] = round4(ev.e_point);
  if (rr_ul) j["e_ul"] = round4(ev.e_ul);
  if (ev.reciprocal) j["reciprocal"] = true;
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled risk and controlled VE curves with E-value sensitivity bounds", "cvecop"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", COP_VERSION);

  Globals g;
  app.add_option("--seed", g.seed, "Bootstrap seed (analyze) or simulation seed (simulate)");
  app.add_option("--threads", g.threads, "Worker threads; overrides CVECOP_THREADS")->check(CLI::PositiveNumber);
  app.add_flag("--keep-replicates", g.keep_replicates, "Write bootstrap replicate matrix as replicates.csv");

  std::string config;
  auto* analyze = app.add_subcommand("analyze", "Run the full analysis described by a JSON config");
  analyze->add_option("--config", config, "Analysis config JSON")->required();

  std::string scenario, preset, out;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic trial with its true curves");
  auto* scen_opt = simulate->add_option("--scenario", scenario, "Scenario JSON");
  auto* preset_opt = simulate->add_option("--preset", preset, "Built-in scenario")
                         ->check(CLI::IsMember(cop::sim::preset_names()));
  scen_opt->excludes(preset_opt);
  simulate->add_option("--out", out, "Output directory")->required();

  double rr = 0.0;
  std::optional<double> rr_ul;
  auto* evalue = app.add_subcommand("evalue", "E-values for a risk ratio and its upper confidence limit");
  evalue->add_option("--rr", rr, "Risk ratio estimate")->required();
  evalue->add_option("--rr-ul", rr_ul, "Upper 95% confidence limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  try {
    if (*analyze) return cmd_analyze(config, g);
    if (*simulate) {
      if (scenario.empty() && preset.empty())
        throw cop::Error(cop::ErrorKind::Config, "simulate needs --scenario or --preset");
      return cmd_simulate(scenario, preset, out, g);
    }
    if (*evalue) return cmd_evalue(rr, rr_ul);
  } catch (const cop::Error& e) {
    return report(cop::to_string(e.kind()), e.what(), cop::exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report("internal", e.what(), 2);
  }
  return 0;
}
