#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cop/bootstrap.hpp"
#include "cop/cve.hpp"
#include "cop/dataset.hpp"
#include "cop/diagnostics.hpp"
#include "cop/marginal.hpp"
#include "cop/riskreg.hpp"
#include "cop/sensitivity.hpp"

namespace cop {

enum class MarkerMode { Quantitative, Tertile };

struct GridSpec {
  std::size_t n = 101;
  double lo_quantile = 0.025;
  double hi_quantile = 0.975;
  std::vector<double> values;  // explicit grid, overrides the quantile range
};

/// Either a common RR_U (log-linear in the marker distance) or separate
/// RR_UD / RR_EU valid at the fixed pair only. The fixed pair is given as
/// marker values or as weighted phase-two quantiles.
struct SensitivityConfig {
  SensitivityMode mode = SensitivityMode::CommonLogLinear;
  double rr_ud_fix = 4.0;
  double rr_eu_fix = 4.0;
  std::optional<double> s1_fix_quantile;  // default: the contrast quantiles
  std::optional<double> s2_fix_quantile;
  std::optional<double> s1_fix;
  std::optional<double> s2_fix;
};

struct AnalysisOptions {
  ModelFamily family = ModelFamily::WeightedLogistic;
  double t_horizon = 0.0;  // required for the Cox family
  std::vector<std::string> covariates;
  MarkerMode marker_mode = MarkerMode::Quantitative;
  GridSpec grid;
  SensitivityConfig sensitivity;
  std::optional<BootstrapPlan> bootstrap = BootstrapPlan{};
  std::pair<double, double> contrast_quantiles{0.15, 0.85};
  std::optional<std::vector<std::string>> positivity_covariates;  // default: covariates
  double positivity_fraction = 0.80;
  std::optional<double> llod;
  bool use_design_strata = false;
  bool bootstrap_confounder_table = true;
  bool keep_replicates = false;

  void validate() const;
};

struct AnalysisConfig {
  std::filesystem::path trial_csv;
  std::filesystem::path schema_json;
  std::filesystem::path output_dir;
  AnalysisOptions options;

  /// Relative paths are resolved against `base_dir`.
  static AnalysisConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static AnalysisConfig from_file(const std::filesystem::path& path);
  // Canonical form recorded in the run manifest; excludes the thread count.
  nlohmann::json to_json() const;
};

struct ContrastRow {
  std::string contrast;
  double s1 = 0.0;
  double s2 = 0.0;
  std::string quantity;
  double estimate = 0.0;
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
};

struct AnalysisResult {
  TwoPhaseDesign design;
  CohortSummary summary;
  std::vector<PositivityRow> positivity;
  std::vector<ConfounderRow> confounders;
  RiskModel model;
  RiskModel tertile_model;
  TertileCoding tertiles;
  SensitivitySpec spec;
  ScentResult scent;
  double s1 = 0.0;
  double s2 = 0.0;
  PlaceboRisk placebo;
  CurveEstimate rm;
  std::optional<CurveEstimate> rc_bound;
  CurveEstimate cve_naive;
  std::optional<CurveEstimate> cve_cons;
  std::optional<MediationProbe> probe;
  std::vector<ContrastRow> contrasts;
  std::vector<SurfaceCell> surface;
  std::optional<BootstrapResult> bootstrap;
  std::vector<std::string> replicate_columns;
  std::vector<std::string> warnings;

  const ContrastRow* find(const std::string& contrast, const std::string& quantity) const;
};

/// Full estimation pipeline on loaded records: design, diagnostics, vaccine
/// and placebo fits, curves, contrasts, sensitivity bounds and the bootstrap.
AnalysisResult analyze(std::span<const ParticipantRecord> records, const AnalysisOptions& options);

/// Output files keyed by file name, in the byte form written to disk.
std::map<std::string, std::string> render_outputs(const AnalysisResult& result, const AnalysisOptions& options);

struct RunSummary {
  AnalysisResult result;
  std::vector<std::filesystem::path> written;
};

/// Loads the configured inputs, runs `analyze` and writes every output file
/// atomically under the output directory, the manifest last.
RunSummary run_analysis(const AnalysisConfig& config);

}  // namespace cop
