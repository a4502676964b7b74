#include "doctest.h"

#include <cmath>

#include "cop/error.hpp"
#include "cop/marginal.hpp"
#include "cop/quantile.hpp"
#include "cop/sim.hpp"
#include "oracles.hpp"

namespace {

// Saturated model on a two-level covariate with empirical risks 0.1 (a) and 0.2 (b).
std::vector<cop::ParticipantRecord> two_level(double weight_a, double weight_b) {
  std::vector<cop::ParticipantRecord> recs;
  for (int i = 0; i < 10; ++i) {
    auto r = oracle::record("a" + std::to_string(i), true, i < 1, 1.0 + i, true, {{"x", std::string("a")}});
    r.weight_override = weight_a;
    recs.push_back(r);
  }
  for (int i = 0; i < 10; ++i) {
    auto r = oracle::record("b" + std::to_string(i), true, i < 2, 1.5 + i, true, {{"x", std::string("b")}});
    r.weight_override = weight_b;
    recs.push_back(r);
  }
  return recs;
}

}  // namespace

TEST_CASE("intercept-only model is flat at its risk") {
  std::vector<cop::ParticipantRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(oracle::record("r" + std::to_string(i), true, i % 5 == 0, 0.1 * i, true));
  const auto d = cop::estimate_sampling_probs(recs);
  const auto m = cop::fit_weighted_logistic(recs, d, {});
  for (double s : {0.0, 1.3, 4.9}) CHECK(cop::marginalized_risk(m, recs, d, s) == doctest::Approx(0.2).epsilon(1e-10));
  CHECK(cop::marginalized_rr(m, recs, d, 1.0, 3.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("equal weights average the two level risks") {
  const auto recs = two_level(1.0, 1.0);
  const auto d = cop::estimate_sampling_probs(recs);
  const auto m = cop::fit_weighted_logistic(recs, d, {"x"});
  CHECK(cop::marginalized_risk(m, recs, d, 2.0) == doctest::Approx(0.15).epsilon(1e-9));
}

TEST_CASE("weights 1 and 3 give 0.175") {
  const auto recs = two_level(1.0, 3.0);
  const auto d = cop::estimate_sampling_probs(recs);
  std::vector<double> unit(recs.size(), 1.0);
  const auto m = cop::fit_weighted_logistic(recs, unit, {"x"});
  CHECK(cop::marginalized_risk(m, recs, d, 2.0) == doctest::Approx(0.175).epsilon(1e-9));
}

TEST_CASE("curves, ratios and odds ratios") {
  auto sc = cop::sim::strong_cop();
  sc.n = 8000;
  const auto recs = cop::sim::generate_trial(sc);
  const auto d = cop::estimate_sampling_probs(recs);
  const auto m = cop::fit_casecohort_cox(recs, d, {"marker", "x"}, sc.t_horizon);
  const auto grid = cop::default_grid(recs, d);
  CHECK(grid.size() == 101);
  const auto c = cop::marginalized_risk_curve(m, recs, d, grid);
  for (Eigen::Index i = 1; i < c.size(); ++i) CHECK(c.point(i) < c.point(i - 1));

  const Eigen::ArrayXd one = Eigen::ArrayXd::Constant(1, grid(40));
  CHECK(cop::marginalized_risk_curve(m, recs, d, one).point(0) == cop::marginalized_risk(m, recs, d, grid(40)));

  const auto p2 = cop::phase_two_vaccine(recs);
  const std::vector<double> probs{0.15, 0.85};
  const auto q = cop::weighted_quantiles(cop::markers_of(p2), cop::design_weights(p2, d), probs);
  const double rr = cop::marginalized_rr(m, recs, d, q[0], q[1]);
  CHECK(std::abs(rr - cop::marginalized_risk(m, recs, d, q[1]) / cop::marginalized_risk(m, recs, d, q[0])) <= 1e-12);
  const double orr = cop::marginalized_or(m, recs, d, q[0], q[1]);
  CHECK(std::abs(orr - rr) / rr < 0.05);  // rare outcome
}

TEST_CASE("hand odds ratio") {
  CHECK(cop::odds_ratio(0.1, 0.05) == doctest::Approx((0.05 / 0.95) / (0.1 / 0.9)).epsilon(1e-12));
  CHECK(std::round(cop::odds_ratio(0.1, 0.05) * 1e4) / 1e4 == doctest::Approx(0.4737));
  CHECK(cop::odds_ratio(0.3, 0.3) == 1.0);
  CHECK_THROWS_AS(cop::odds_ratio(0.0, 0.2), cop::Error);
  CHECK_THROWS_AS(cop::odds_ratio(0.2, 1.0), cop::Error);
  CHECK_THROWS_AS(cop::risk_ratio(0.0, 0.2), cop::Error);
}

TEST_CASE("RR_C of 0.25 is recovered at n = 50000") {
  auto sc = cop::sim::strong_cop();
  sc.n = 50000;
  sc.seed = 4;
  // solve for the marker coefficient giving RR_C(s15, s85) = 0.25
  const double s1 = cop::sim::true_marker_quantile(sc, 0.15);
  const double s2 = cop::sim::true_marker_quantile(sc, 0.85);
  double lo = -5.0, hi = 0.0;
  for (int it = 0; it < 200; ++it) {
    sc.marker_coef = 0.5 * (lo + hi);
    const double r = oracle::controlled_risk(sc, s2) / oracle::controlled_risk(sc, s1);
    (r > 0.25 ? hi : lo) = sc.marker_coef;
  }
  CHECK(oracle::controlled_risk(sc, s2) / oracle::controlled_risk(sc, s1) == doctest::Approx(0.25).epsilon(1e-9));
  const auto recs = cop::sim::generate_trial(sc);
  const auto d = cop::estimate_sampling_probs(recs);
  const auto m = cop::fit_casecohort_cox(recs, d, {"marker", "x"}, sc.t_horizon);
  const double rr = cop::marginalized_rr(m, recs, d, s1, s2);
  CHECK(rr >= 0.20);
  CHECK(rr <= 0.31);
}

TEST_CASE("scent selection") {
  const Eigen::ArrayXd grid = Eigen::ArrayXd::LinSpaced(5, 0.0, 4.0);
  cop::CurveEstimate c;
  c.grid = grid;
  c.point = Eigen::ArrayXd(5);
  c.point << 0.05, 0.04, 0.03, 0.02, 0.01;
  CHECK(cop::find_scent(c, 0.03).s == 2.0);
  CHECK(cop::find_scent(c, 0.031).index == 2);
  c.point.setConstant(0.03);
  CHECK(cop::find_scent(c, 0.03).s == 0.0);
  c.point << 0.5, 0.4, 0.3, 0.2, 0.1;
  CHECK(cop::find_scent(c, 0.01).warning.has_value());
}
