#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cop/dataset.hpp"
#include "cop/types.hpp"

namespace cop::sim {

enum class Link { Logit, Cloglog };

/// Binary unmeasured confounder U. It shifts the vaccine-arm marker mean by
/// `marker_shift` and the outcome linear predictor by `outcome_coef`.
struct UnmeasuredLaw {
  std::vector<double> p_u1;  // P(U = 1 | X = level)
  double marker_shift = 0.0;
  double outcome_coef = 0.0;
};

/// Two-arm trial with one discrete measured covariate X, optional binary U,
/// normal marker S | X, U in the vaccine arm and outcome law
///   eta = intercept(arm) + x_coef[X] + u_coef U + marker_coef (S - marker_center) [vaccine only]
/// mapped to a risk by the logit or complementary log-log link. Event times
/// are exponential with the rate that gives that risk at t_horizon, so under
/// the cloglog link the Cox model holds exactly.
struct SimScenario {
  std::string name = "custom";
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  double vaccine_fraction = 2.0 / 3.0;

  std::string covariate = "x";
  std::vector<std::string> levels{"A", "B", "C"};
  std::vector<double> x_probs{0.3, 0.4, 0.3};
  std::vector<double> x_coef{0.0, 0.4, -0.4};

  std::optional<UnmeasuredLaw> unmeasured;

  std::vector<double> marker_mean{2.3, 2.5, 2.7};
  double marker_sd = 0.6;
  double llod = 1.5;
  double placebo_value = 1.5 - 0.30102999566398120;

  Link link = Link::Cloglog;
  double marker_coef = -1.5;
  double marker_center = 2.5;
  double vaccine_intercept = -4.0;
  double placebo_intercept = -2.8;
  double t_horizon = 365.0;

  double subsample_rate = 0.2;

  void validate() const;
  static SimScenario from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Risk at t_horizon.
  double vaccine_risk(double s, std::size_t x, int u) const;
  double placebo_risk(std::size_t x, int u) const;
  // P(X = x, U = u); u is 0 with probability one when U is absent.
  double joint_prob(std::size_t x, int u) const;
  int u_levels() const noexcept { return unmeasured ? 2 : 1; }
  double marker_mean_at(std::size_t x, int u) const;
};

SimScenario null_marker();
SimScenario strong_cop();
SimScenario confounded();
// Looks up a preset by name: "null-marker", "strong-cop" or "confounded".
SimScenario preset(const std::string& name);
std::vector<std::string> preset_names();

/// Generated records; U is never written out. Deterministic given the seed,
/// each participant drawing from its own counter-derived stream.
std::vector<ParticipantRecord> generate_trial(const SimScenario& scenario);

/// Column layout used for generated trials.
TrialSchema trial_schema(const SimScenario& scenario);

/// P{Y(1, s) = 1} by exact enumeration over (X, U).
double true_controlled_risk(const SimScenario& scenario, double s);
/// P{Y(0) = 1}.
double true_placebo_risk(const SimScenario& scenario);
/// Vaccine-arm risk with the marker at its natural law, by quadrature.
double true_vaccine_risk(const SimScenario& scenario);
/// Quantile of the vaccine-arm marker distribution (normal mixture).
double true_marker_quantile(const SimScenario& scenario, double p);
/// Realized r_M(s): E_X[ E(Y | S = s, X, A = 1) ], confounded by U when present.
double true_marginalized_risk(const SimScenario& scenario, double s);

struct TruthTables {
  Eigen::ArrayXd grid;
  Eigen::ArrayXd rc;
  Eigen::ArrayXd cve;
  double placebo_risk = 0.0;

  double rr_c(double s1, double s2, const SimScenario& scenario) const;
};

TruthTables truth_tables(const SimScenario& scenario, const Eigen::ArrayXd& grid);

struct ConfoundingStrength {
  double rr_ud = 1.0;
  double rr_eu = 1.0;
};

/// Realized confounding magnitudes at (s1, s2): RR_UD is the largest outcome
/// risk ratio between U levels at either marker value and any X, RR_EU the
/// largest ratio of P(U = u | S, X) between the two marker values, either
/// direction. (1, 1) without U.
ConfoundingStrength confounding_strength(const SimScenario& scenario, double s1, double s2);

}  // namespace cop::sim
