#include "doctest.h"

#include <cmath>

#include "cop/error.hpp"
#include "cop/riskreg.hpp"
#include "cop/sim.hpp"
#include "oracles.hpp"

namespace {

std::vector<cop::ParticipantRecord> table2x2(int a, int b, int c, int d) {
  std::vector<cop::ParticipantRecord> recs;
  int id = 0;
  auto add = [&](int n, bool y, double s) {
    for (int k = 0; k < n; ++k) recs.push_back(oracle::record("r" + std::to_string(id++), true, y, s, true));
  };
  add(a, true, 1.0);
  add(b, false, 1.0);
  add(c, true, 0.0);
  add(d, false, 0.0);
  return recs;
}

std::vector<oracle::SurvRow> surv_rows(std::span<const cop::ParticipantRecord> recs, double t_h) {
  std::vector<oracle::SurvRow> rows;
  for (const auto& r : recs) {
    const auto& lvl = std::get<std::string>(r.covariates.at("x"));
    rows.push_back({std::min(r.survival->time, t_h), r.outcome,
                    {*r.marker, lvl == "B" ? 1.0 : 0.0, lvl == "C" ? 1.0 : 0.0}, 1.0});
  }
  return rows;
}

}  // namespace

TEST_CASE("2x2 logistic equals the log odds ratio") {
  for (auto [a, b, c, d] : std::vector<std::array<int, 4>>{{37, 163, 81, 119}, {5, 95, 12, 88}, {3, 4, 5, 6}}) {
    const auto recs = table2x2(a, b, c, d);
    const auto m = cop::fit_weighted_logistic(recs, cop::estimate_sampling_probs(recs), {"marker"});
    CHECK(std::abs(m.coefficients().at("marker") - oracle::log_odds_ratio(a, b, c, d)) <= 1e-8);
    CHECK(m.convergence.converged);
  }
}

TEST_CASE("logistic fit maximizes the weighted log-likelihood") {
  auto sc = cop::sim::strong_cop();
  sc.n = 3000;
  sc.link = cop::sim::Link::Logit;
  const auto recs = cop::phase_two_vaccine(cop::sim::generate_trial(sc));
  std::vector<double> w;
  for (std::size_t i = 0; i < recs.size(); ++i) w.push_back(1.0 + (i % 3));
  const auto m = cop::fit_weighted_logistic(recs, w, {"marker"});
  std::vector<std::vector<double>> z;
  std::vector<double> y;
  for (const auto& r : recs) {
    z.push_back({1.0, *r.marker});
    y.push_back(r.outcome);
  }
  const std::vector<double> beta{m.beta(0), m.beta(1)};
  const double ll = oracle::logistic_loglik(z, y, w, beta);
  for (double h : {1e-3, -1e-3})
    for (int k = 0; k < 2; ++k) {
      auto b = beta;
      b[static_cast<std::size_t>(k)] += h;
      CHECK(oracle::logistic_loglik(z, y, w, b) < ll);
    }
}

TEST_CASE("duplicating records equals integer weights") {
  auto sc = cop::sim::confounded();
  sc.n = 3000;
  const auto recs = cop::phase_two_vaccine(cop::sim::generate_trial(sc));
  std::vector<cop::ParticipantRecord> expanded;
  std::vector<double> w, ones;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const int k = 1 + static_cast<int>(i % 2);
    w.push_back(k);
    for (int j = 0; j < k; ++j) {
      expanded.push_back(recs[i]);
      ones.push_back(1.0);
    }
  }
  const cop::Formula f{"marker", "x"};
  const auto lw = cop::fit_weighted_logistic(recs, w, f);
  const auto le = cop::fit_weighted_logistic(expanded, ones, f);
  CHECK((lw.beta - le.beta).cwiseAbs().maxCoeff() <= 1e-8);
  const auto cw = cop::fit_casecohort_cox(recs, w, f, sc.t_horizon);
  const auto ce = cop::fit_casecohort_cox(expanded, ones, f, sc.t_horizon);
  CHECK((cw.beta - ce.beta).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(cw.baseline->at(sc.t_horizon) - ce.baseline->at(sc.t_horizon)) <= 1e-8);
}

TEST_CASE("Cox score vanishes at the fit under full sampling") {
  auto sc = cop::sim::strong_cop();
  sc.n = 2000;
  sc.subsample_rate = 1.0;
  const auto all = cop::sim::generate_trial(sc);
  const auto m = cop::fit_casecohort_cox(all, cop::estimate_sampling_probs(all), {"marker", "x"}, sc.t_horizon);
  const auto c = m.coefficients();
  const auto rows = surv_rows(cop::phase_two_vaccine(all), sc.t_horizon);
  const std::vector<double> beta{c.at("marker"), c.at("x[B]"), c.at("x[C]")};
  const auto u = oracle::cox_score(rows, beta);
  for (double v : u) CHECK(std::abs(v) <= 1e-6);
  const double ll = oracle::cox_loglik(rows, beta);
  auto moved = beta;
  moved[0] += 1e-3;
  CHECK(oracle::cox_loglik(rows, moved) < ll);
}

TEST_CASE("null Cox model risk is the Nelson-Aalen risk") {
  // six subjects, no covariates in the linear predictor beyond a zero-effect marker
  std::vector<cop::ParticipantRecord> recs;
  const double times[] = {2, 3, 3.5, 5, 7, 9};
  const bool events[] = {true, false, true, true, false, true};
  for (int i = 0; i < 6; ++i) {
    auto r = oracle::record("s" + std::to_string(i), true, events[i], 1.0, true);
    r.survival = cop::SurvivalTime{times[i], events[i]};
    recs.push_back(r);
  }
  const std::vector<double> w(6, 1.0);
  const auto m = cop::fit_casecohort_cox(recs, w, {}, 10.0);
  std::vector<oracle::SurvRow> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({times[i], events[i], {}, 1.0});
  for (double t : {0.5, 2.0, 3.2, 4.0, 6.0, 9.0, 10.0})
    CHECK(1.0 - std::exp(-m.baseline->at(t)) == doctest::Approx(1.0 - std::exp(-oracle::nelson_aalen(rows, t))).epsilon(1e-12));
  CHECK(m.risk_at_time(0.0, 1.0) == 0.0);
}

TEST_CASE("predict_risk by hand") {
  std::vector<cop::ParticipantRecord> recs;
  for (int i = 0; i < 100; ++i) recs.push_back(oracle::record("r" + std::to_string(i), true, i < 10, 1.0 + (i % 7), true));
  const std::vector<double> w(100, 1.0);
  const auto null_model = cop::fit_weighted_logistic(recs, w, {});
  CHECK(cop::predict_risk(null_model, 3.0, {}) == doctest::Approx(0.1).epsilon(1e-10));
  CHECK(cop::predict_risk(null_model, -8.0, {}) == doctest::Approx(0.1).epsilon(1e-10));

  auto m = cop::fit_weighted_logistic(recs, w, {"marker"});
  m.beta << -2.0, 0.5;
  CHECK(std::abs(cop::predict_risk(m, 1.2, {}) - 1.0 / (1.0 + std::exp(2.0 - 0.6))) <= 1e-12);
}

TEST_CASE("unseen categorical level is reported") {
  auto sc = cop::sim::strong_cop();
  sc.n = 1500;
  const auto recs = cop::phase_two_vaccine(cop::sim::generate_trial(sc));
  const std::vector<double> w(recs.size(), 1.0);
  const auto m = cop::fit_weighted_logistic(recs, w, {"marker", "x"});
  try {
    cop::predict_risk(m, 2.0, {{"x", std::string("Z")}});
    FAIL("expected error");
  } catch (const cop::Error& e) {
    CHECK(std::string(e.what()).find("Z") != std::string::npos);
  }
}

TEST_CASE("degenerate designs") {
  std::vector<cop::ParticipantRecord> recs;
  for (int i = 0; i < 40; ++i) recs.push_back(oracle::record("r" + std::to_string(i), true, i % 4 == 0, 2.0, true));
  const std::vector<double> w(40, 1.0);
  try {
    cop::fit_weighted_logistic(recs, w, {"marker"});
    FAIL("expected collinearity");
  } catch (const cop::Error& e) {
    CHECK(e.kind() == cop::ErrorKind::Collinearity);
  }

  std::vector<cop::ParticipantRecord> sep;
  for (int i = 0; i < 40; ++i) sep.push_back(oracle::record("r" + std::to_string(i), true, i >= 20, i, true));
  try {
    cop::fit_weighted_logistic(sep, w, {"marker"});
    FAIL("expected separation");
  } catch (const cop::Error& e) {
    CHECK(e.kind() == cop::ErrorKind::Separation);
  }

  std::vector<cop::ParticipantRecord> no_events;
  for (int i = 0; i < 10; ++i) {
    auto r = oracle::record("r" + std::to_string(i), true, false, i, true);
    r.survival = cop::SurvivalTime{100.0, false};
    no_events.push_back(r);
  }
  const std::vector<double> w10(10, 1.0);
  try {
    cop::fit_casecohort_cox(no_events, w10, {"marker"}, 50.0);
    FAIL("expected no information");
  } catch (const cop::Error& e) {
    CHECK(e.kind() == cop::ErrorKind::NoInformation);
  }
}

TEST_CASE("family names") {
  CHECK(cop::parse_family("logistic") == cop::ModelFamily::WeightedLogistic);
  CHECK(cop::parse_family("cox") == cop::ModelFamily::CaseCohortCox);
  CHECK_THROWS_AS(cop::parse_family("probit"), cop::Error);
}
