#include "cop/riskreg.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cop/csv.hpp"
#include "cop/error.hpp"

namespace cop {

const char* to_string(ModelFamily family) noexcept {
  return family == ModelFamily::WeightedLogistic ? "logistic" : "cox";
}

ModelFamily parse_family(const std::string& text) {
  if (text == "logistic" || text == "weighted-logistic") return ModelFamily::WeightedLogistic;
  if (text == "cox" || text == "case-cohort-cox") return ModelFamily::CaseCohortCox;
  throw Error(ErrorKind::Config, "unknown model family '" + text + "' (expected logistic or cox)");
}

// ---------------------------------------------------------------------------
// Encoding

DesignEncoding::DesignEncoding(std::span<const ParticipantRecord> records, const Formula& formula,
                               bool intercept)
    : intercept_(intercept) {
  if (records.empty()) throw Error(ErrorKind::Estimation, "cannot encode a design on zero records");
  if (intercept_) names_.push_back("(intercept)");
  std::set<std::string> used;
  for (const auto& name : formula) {
    if (!used.insert(name).second) throw Error(ErrorKind::Config, "term '" + name + "' listed twice");
    EncodedTerm term;
    term.name = name;
    offsets_.push_back(names_.size());
    if (name == kMarkerTerm) {
      term.kind = TermKind::MarkerLinear;
      names_.push_back(name);
    } else if (name == kMarkerFactorTerm) {
      term.kind = TermKind::MarkerFactor;
      std::set<double> codes;
      for (const auto& r : records) {
        if (!r.marker) throw Error(ErrorKind::Data, "record " + r.id + " has no marker");
        codes.insert(*r.marker);
      }
      if (codes.size() < 2) throw Error(ErrorKind::Collinearity, "term 'marker_cat' has a single level");
      term.marker_reference = *codes.begin();
      term.marker_levels.assign(std::next(codes.begin()), codes.end());
      for (double c : term.marker_levels) names_.push_back(name + "[" + csv::format(c) + "]");
    } else {
      auto first = records.front().covariates.find(name);
      if (first == records.front().covariates.end())
        throw Error(ErrorKind::Data, "covariate '" + name + "' is missing from the records");
      if (std::holds_alternative<std::string>(first->second)) {
        term.kind = TermKind::Categorical;
        std::set<std::string> levels;
        for (const auto& r : records) {
          auto it = r.covariates.find(name);
          if (it == r.covariates.end() || !std::holds_alternative<std::string>(it->second))
            throw Error(ErrorKind::Data, "record " + r.id + ": covariate '" + name + "' missing or not categorical");
          levels.insert(std::get<std::string>(it->second));
        }
        if (levels.size() < 2)
          throw Error(ErrorKind::Collinearity, "covariate '" + name + "' has a single level (aliased with the intercept)");
        term.reference = *levels.begin();
        term.levels.assign(std::next(levels.begin()), levels.end());
        for (const auto& l : term.levels) names_.push_back(name + "[" + l + "]");
      } else {
        term.kind = TermKind::Numeric;
        names_.push_back(name);
      }
    }
    terms_.push_back(std::move(term));
  }
}

bool DesignEncoding::has_marker() const noexcept {
  return std::any_of(terms_.begin(), terms_.end(), [](const EncodedTerm& t) {
    return t.kind == TermKind::MarkerLinear || t.kind == TermKind::MarkerFactor;
  });
}

void DesignEncoding::fill_marker(double marker, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) const {
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto& t = terms_[k];
    const auto col = static_cast<Eigen::Index>(offsets_[k]);
    if (t.kind == TermKind::MarkerLinear) {
      out(col) = marker;
    } else if (t.kind == TermKind::MarkerFactor) {
      if (marker == t.marker_reference) continue;
      auto it = std::find(t.marker_levels.begin(), t.marker_levels.end(), marker);
      if (it == t.marker_levels.end())
        throw Error(ErrorKind::Data, "unseen level '" + csv::format(marker) + "' of term 'marker_cat'");
      out(col + (it - t.marker_levels.begin())) = 1.0;
    }
  }
}

void DesignEncoding::fill_covariates(const Covariates& x, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) const {
  if (intercept_) out(0) = 1.0;
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto& t = terms_[k];
    if (t.kind == TermKind::MarkerLinear || t.kind == TermKind::MarkerFactor) continue;
    const auto col = static_cast<Eigen::Index>(offsets_[k]);
    auto it = x.find(t.name);
    if (it == x.end()) throw Error(ErrorKind::Data, "missing covariate '" + t.name + "'");
    if (t.kind == TermKind::Numeric) {
      const auto* v = std::get_if<double>(&it->second);
      if (!v) throw Error(ErrorKind::Data, "covariate '" + t.name + "' must be numeric");
      out(col) = *v;
    } else {
      const auto* v = std::get_if<std::string>(&it->second);
      if (!v) throw Error(ErrorKind::Data, "covariate '" + t.name + "' must be categorical");
      if (*v == t.reference) continue;
      auto lv = std::find(t.levels.begin(), t.levels.end(), *v);
      if (lv == t.levels.end())
        throw Error(ErrorKind::Data, "unseen level '" + *v + "' of covariate '" + t.name + "'");
      out(col + (lv - t.levels.begin())) = 1.0;
    }
  }
}

Eigen::RowVectorXd DesignEncoding::row(double marker, const Covariates& x) const {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(columns()));
  fill_marker(marker, out);
  fill_covariates(x, out);
  return out;
}

Eigen::MatrixXd DesignEncoding::matrix(std::span<const ParticipantRecord> records) const {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(records.size()),
                                            static_cast<Eigen::Index>(columns()));
  const bool marker = has_marker();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto out = z.row(static_cast<Eigen::Index>(i));
    if (marker) {
      if (!r.marker) throw Error(ErrorKind::Data, "record " + r.id + " has no marker");
      fill_marker(*r.marker, out);
    }
    fill_covariates(r.covariates, out);
  }
  return z;
}

double DesignEncoding::marker_part(const Eigen::VectorXd& beta, double marker) const {
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(columns()));
  fill_marker(marker, r);
  return r.dot(beta);
}

double DesignEncoding::covariate_part(const Eigen::VectorXd& beta, const Covariates& x) const {
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(columns()));
  fill_covariates(x, r);
  return r.dot(beta);
}

// ---------------------------------------------------------------------------
// Model evaluation

double BaselineHazard::at(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return cumhaz[static_cast<std::size_t>(it - times.begin()) - 1];
}

std::map<std::string, double> RiskModel::coefficients() const {
  std::map<std::string, double> out;
  const auto& names = encoding.column_names();
  for (std::size_t j = 0; j < names.size(); ++j) out[names[j]] = beta(static_cast<Eigen::Index>(j));
  return out;
}

double RiskModel::linear_predictor(double marker, const Covariates& x) const {
  return encoding.row(marker, x).dot(beta);
}

double RiskModel::risk_from_lp(double eta) const {
  if (family == ModelFamily::WeightedLogistic) return solvers::expit(eta);
  return risk_at_time(eta, t_horizon);
}

double RiskModel::risk_at_time(double eta, double t) const {
  if (!baseline) throw Error(ErrorKind::Estimation, "model has no baseline hazard");
  return -std::expm1(-baseline->at(t) * std::exp(eta));
}

double predict_risk(const RiskModel& model, double marker, const Covariates& x) {
  return model.risk_from_lp(model.linear_predictor(marker, x));
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

struct Standardized {
  Eigen::MatrixXd z;
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
};

// Centers and scales every non-intercept column with the (normalized) weights.
Standardized standardize(const Eigen::MatrixXd& z, const Eigen::VectorXd& w, const DesignEncoding& enc) {
  Standardized s{z, Eigen::VectorXd::Zero(z.cols()), Eigen::VectorXd::Ones(z.cols())};
  const double wsum = w.sum();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (enc.has_intercept() && j == 0) continue;
    const double mean = w.dot(z.col(j)) / wsum;
    const double var = w.dot((z.col(j).array() - mean).square().matrix()) / wsum;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * (1.0 + std::abs(mean))))
      throw Error(ErrorKind::Collinearity,
                  "term '" + enc.column_names()[static_cast<std::size_t>(j)] + "' has zero variance");
    s.center(j) = mean;
    s.scale(j) = sd;
    s.z.col(j) = (z.col(j).array() - mean) / sd;
  }
  return s;
}

void check_rank(const Eigen::MatrixXd& zs, const Eigen::VectorXd& w, const DesignEncoding& enc) {
  if (zs.cols() == 0) return;
  const Eigen::MatrixXd weighted = w.cwiseSqrt().asDiagonal() * zs;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(weighted);
  qr.setThreshold(1e-9);
  const Eigen::Index rank = qr.rank();
  if (rank == zs.cols()) return;
  std::string aliased;
  for (Eigen::Index k = rank; k < zs.cols(); ++k) {
    if (!aliased.empty()) aliased += ", ";
    aliased += enc.column_names()[static_cast<std::size_t>(qr.colsPermutation().indices()(k))];
  }
  throw Error(ErrorKind::Collinearity, "design matrix is rank deficient; aliased terms: " + aliased);
}

Eigen::VectorXd normalized(std::span<const double> weights) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
      throw Error(ErrorKind::Data, "weights must be positive and finite");
    w(static_cast<Eigen::Index>(i)) = weights[i];
  }
  return w / w.mean();
}

ConvergenceInfo info_of(const solvers::NewtonResult<double>& r) {
  return {r.iterations, r.score_norm, r.loglik, r.converged};
}

}  // namespace

RiskModel fit_weighted_logistic(std::span<const ParticipantRecord> records, std::span<const double> weights,
                                const Formula& formula, const solvers::NewtonOptions& options) {
  if (records.size() != weights.size()) throw Error(ErrorKind::Data, "records and weights differ in length");
  RiskModel model;
  model.family = ModelFamily::WeightedLogistic;
  model.encoding = DesignEncoding(records, formula, true);

  const Eigen::MatrixXd z = model.encoding.matrix(records);
  Eigen::VectorXd y(z.rows());
  std::size_t cases = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    y(static_cast<Eigen::Index>(i)) = records[i].outcome ? 1.0 : 0.0;
    cases += records[i].outcome;
  }
  if (cases == 0 || cases == records.size())
    throw Error(ErrorKind::Estimation, "logistic fit needs at least one case and one non-case");
  const Eigen::VectorXd w = normalized(weights);
  const Standardized s = standardize(z, w, model.encoding);
  check_rank(s.z, w, model.encoding);

  Eigen::VectorXd start = Eigen::VectorXd::Zero(z.cols());
  const double ybar = w.dot(y) / w.sum();
  start(0) = std::log(ybar / (1.0 - ybar));
  auto objective = [&](const Eigen::VectorXd& b, bool deriv) {
    return solvers::logistic_objective<double>(s.z, y, w, b, deriv);
  };
  const auto fit = solvers::newton_maximize<double>(objective, start, options);

  model.beta = fit.beta.cwiseQuotient(s.scale);
  model.beta(0) -= model.beta.tail(z.cols() - 1).dot(s.center.tail(z.cols() - 1));
  model.convergence = info_of(fit);
  return model;
}

RiskModel fit_weighted_logistic(std::span<const ParticipantRecord> records, const TwoPhaseDesign& design,
                                const Formula& formula, const solvers::NewtonOptions& options) {
  const auto p2 = phase_two_vaccine(records);
  if (p2.empty()) throw Error(ErrorKind::Estimation, "no phase-two vaccine records");
  const auto w = design_weights(p2, design);
  return fit_weighted_logistic(p2, w, formula, options);
}

RiskModel fit_casecohort_cox(std::span<const ParticipantRecord> records, std::span<const double> weights,
                             const Formula& formula, double t_horizon, const solvers::NewtonOptions& options) {
  if (records.size() != weights.size()) throw Error(ErrorKind::Data, "records and weights differ in length");
  if (!(t_horizon > 0.0)) throw Error(ErrorKind::Config, "t_horizon must be positive");
  RiskModel model;
  model.family = ModelFamily::CaseCohortCox;
  model.t_horizon = t_horizon;
  model.encoding = DesignEncoding(records, formula, false);

  const auto n = static_cast<Eigen::Index>(records.size());
  Eigen::VectorXd time(n), event(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    if (!r.survival) throw Error(ErrorKind::Data, "record " + r.id + " has no survival time");
    const bool ev = r.survival->event && r.survival->time <= t_horizon;
    time(i) = std::min(r.survival->time, t_horizon);
    event(i) = ev ? 1.0 : 0.0;
  }
  if (event.sum() == 0.0) throw Error(ErrorKind::NoInformation, "no events before t_horizon");

  const Eigen::MatrixXd z = model.encoding.matrix(records);
  const Eigen::VectorXd w = normalized(weights);
  if (z.cols() > 0) {
    const Standardized s = standardize(z, w, model.encoding);
    check_rank(s.z, w, model.encoding);
    const solvers::CoxData<double> data(s.z, time, event, w);
    auto objective = [&](const Eigen::VectorXd& b, bool deriv) { return solvers::cox_objective<double>(data, b, deriv); };
    const auto fit = solvers::newton_maximize<double>(objective, Eigen::VectorXd::Zero(z.cols()), options);
    model.beta = fit.beta.cwiseQuotient(s.scale);
    model.convergence = info_of(fit);
  } else {
    model.beta = Eigen::VectorXd::Zero(0);
    model.convergence = {0, 0.0, 0.0, true};
  }

  // Weighted Breslow baseline on the original scale.
  Eigen::VectorXd raw(n);
  for (Eigen::Index i = 0; i < n; ++i) raw(i) = weights[static_cast<std::size_t>(i)];
  const Eigen::VectorXd risk = raw.array() * (z * model.beta).array().exp();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return time(a) > time(b); });

  std::vector<std::pair<double, double>> jumps;  // (time, increment), decreasing time
  double s0 = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = time(order[i]);
    double d = 0.0;
    std::size_t j = i;
    for (; j < order.size() && time(order[j]) == t; ++j) {
      s0 += risk(order[j]);
      if (event(order[j]) > 0.0) d += raw(order[j]);
    }
    if (d > 0.0) jumps.emplace_back(t, d / s0);
    i = j;
  }
  BaselineHazard h;
  double cum = 0.0;
  for (auto it = jumps.rbegin(); it != jumps.rend(); ++it) {
    cum += it->second;
    h.times.push_back(it->first);
    h.cumhaz.push_back(cum);
  }
  model.baseline = std::move(h);
  return model;
}

RiskModel fit_casecohort_cox(std::span<const ParticipantRecord> records, const TwoPhaseDesign& design,
                             const Formula& formula, double t_horizon, const solvers::NewtonOptions& options) {
  const auto p2 = phase_two_vaccine(records);
  if (p2.empty()) throw Error(ErrorKind::Estimation, "no phase-two vaccine records");
  const auto w = design_weights(p2, design);
  return fit_casecohort_cox(p2, w, formula, t_horizon, options);
}

RiskModel fit_risk_model(ModelFamily family, std::span<const ParticipantRecord> records,
                         std::span<const double> weights, const Formula& formula, double t_horizon) {
  if (family == ModelFamily::WeightedLogistic) {
    RiskModel m = fit_weighted_logistic(records, weights, formula);
    m.t_horizon = t_horizon;
    return m;
  }
  return fit_casecohort_cox(records, weights, formula, t_horizon);
}

}  // namespace cop
