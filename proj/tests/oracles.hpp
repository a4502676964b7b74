#pragma once

// Reference computations kept apart from the library code they check. Each
// one is written the slow, obvious way.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cop/sim.hpp"
#include "cop/types.hpp"

namespace oracle {

// Smallest value whose cumulative weight share reaches p, found by scanning
// every candidate.
inline double weighted_quantile(const std::vector<double>& v, const std::vector<double>& w, double p) {
  long double total = 0;
  for (double x : w) total += x;
  std::vector<double> cand = v;
  std::sort(cand.begin(), cand.end());
  for (double c : cand) {
    long double below = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] <= c) below += w[i];
    if (below / total >= p - 1e-12L) return c;
  }
  return cand.back();
}

// log odds ratio of a 2x2 table: a = exposed cases, b = exposed non-cases,
// c = unexposed cases, d = unexposed non-cases.
inline double log_odds_ratio(double a, double b, double c, double d) { return std::log(a * d / (b * c)); }

struct SurvRow {
  double time;
  bool event;
  std::vector<double> z;
  double w = 1.0;
};

// Breslow partial-likelihood score, one risk-set sum per event (O(n^2)).
inline std::vector<double> cox_score(const std::vector<SurvRow>& rows, const std::vector<double>& beta) {
  const std::size_t p = beta.size();
  auto lp = [&](const SurvRow& r) {
    double s = 0;
    for (std::size_t k = 0; k < p; ++k) s += beta[k] * r.z[k];
    return s;
  };
  std::vector<double> u(p, 0.0);
  for (const auto& ri : rows) {
    if (!ri.event) continue;
    double s0 = 0;
    std::vector<double> s1(p, 0.0);
    for (const auto& rj : rows) {
      if (rj.time < ri.time) continue;
      const double e = rj.w * std::exp(lp(rj));
      s0 += e;
      for (std::size_t k = 0; k < p; ++k) s1[k] += e * rj.z[k];
    }
    for (std::size_t k = 0; k < p; ++k) u[k] += ri.w * (ri.z[k] - s1[k] / s0);
  }
  return u;
}

// Breslow partial log-likelihood, same conventions.
inline double cox_loglik(const std::vector<SurvRow>& rows, const std::vector<double>& beta) {
  auto lp = [&](const SurvRow& r) {
    double s = 0;
    for (std::size_t k = 0; k < beta.size(); ++k) s += beta[k] * r.z[k];
    return s;
  };
  double ll = 0;
  for (const auto& ri : rows) {
    if (!ri.event) continue;
    double s0 = 0;
    for (const auto& rj : rows)
      if (rj.time >= ri.time) s0 += rj.w * std::exp(lp(rj));
    ll += ri.w * (lp(ri) - std::log(s0));
  }
  return ll;
}

// Weighted Nelson-Aalen cumulative hazard at t.
inline double nelson_aalen(const std::vector<SurvRow>& rows, double t) {
  std::vector<double> times;
  for (const auto& r : rows)
    if (r.event && r.time <= t) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double h = 0;
  for (double s : times) {
    double d = 0, at_risk = 0;
    for (const auto& r : rows) {
      if (r.time >= s) at_risk += r.w;
      if (r.event && r.time == s) d += r.w;
    }
    h += d / at_risk;
  }
  return h;
}

// Weighted logistic log-likelihood.
inline double logistic_loglik(const std::vector<std::vector<double>>& z, const std::vector<double>& y,
                              const std::vector<double>& w, const std::vector<double>& beta) {
  double ll = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double eta = 0;
    for (std::size_t k = 0; k < beta.size(); ++k) eta += beta[k] * z[i][k];
    ll += w[i] * (y[i] * eta - std::log1p(std::exp(eta)));
  }
  return ll;
}

// P{Y(1, s) = 1} for a simulated scenario, summing the outcome law over the
// (X, U) grid with the link written out directly.
inline double controlled_risk(const cop::sim::SimScenario& sc, double s) {
  double total = 0;
  for (std::size_t x = 0; x < sc.levels.size(); ++x) {
    for (int u = 0; u <= 1; ++u) {
      double pu;
      if (sc.unmeasured)
        pu = u ? sc.unmeasured->p_u1[x] : 1.0 - sc.unmeasured->p_u1[x];
      else
        pu = u ? 0.0 : 1.0;
      if (pu == 0.0) continue;
      double eta = sc.vaccine_intercept + sc.x_coef[x] + sc.marker_coef * (s - sc.marker_center);
      if (u) eta += sc.unmeasured->outcome_coef;
      const double r = sc.link == cop::sim::Link::Logit ? 1.0 / (1.0 + std::exp(-eta)) : 1.0 - std::exp(-std::exp(eta));
      total += sc.x_probs[x] * pu * r;
    }
  }
  return total;
}

inline double total_variation(const std::vector<double>& v) {
  double tv = 0;
  for (std::size_t i = 1; i < v.size(); ++i) tv += std::abs(v[i] - v[i - 1]);
  return tv;
}

// Builds records with a binary outcome, optional survival time and a marker.
inline cop::ParticipantRecord record(std::string id, bool vaccine, bool outcome, std::optional<double> marker,
                                     bool sampled, cop::Covariates x = {}) {
  cop::ParticipantRecord r;
  r.id = std::move(id);
  r.arm = vaccine ? cop::Arm::Vaccine : cop::Arm::Placebo;
  r.outcome = outcome;
  r.marker = marker;
  r.sampled = sampled;
  r.covariates = std::move(x);
  return r;
}

}  // namespace oracle
