#pragma once

// Dense Newton machinery shared by the risk-model families. Everything here is
// templated on the scalar type and works on Eigen column-major storage.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "cop/error.hpp"

namespace cop::solvers {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct NewtonOptions {
  int max_iterations = 100;
  int max_halvings = 10;
  double score_tol = 1e-8;
  double rel_loglik_tol = 1e-9;
  // Coefficients beyond this magnitude (standardized scale) signal separation.
  double divergence_bound = 30.0;
};

template <typename Scalar>
struct Objective {
  Scalar value{};
  Vector<Scalar> gradient;
  Matrix<Scalar> information;  // negative Hessian
};

template <typename Scalar>
struct NewtonResult {
  Vector<Scalar> beta;
  int iterations = 0;
  Scalar score_norm{};
  Scalar loglik{};
  bool converged = false;
};

template <typename Scalar>
Scalar softplus(Scalar eta) {
  using std::exp;
  using std::log1p;
  return eta > Scalar(0) ? eta + log1p(exp(-eta)) : log1p(exp(eta));
}

template <typename Scalar>
Scalar expit(Scalar eta) {
  using std::exp;
  if (eta >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-eta));
  const Scalar e = exp(eta);
  return e / (Scalar(1) + e);
}

/// Weighted Bernoulli log-likelihood sum_i w_i (y_i eta_i - log(1 + e^eta_i)).
template <typename Scalar>
Objective<Scalar> logistic_objective(const Matrix<Scalar>& z, const Vector<Scalar>& y,
                                     const Vector<Scalar>& w, const Vector<Scalar>& beta,
                                     bool derivatives = true) {
  const Vector<Scalar> eta = z * beta;
  Objective<Scalar> obj;
  obj.value = Scalar(0);
  Vector<Scalar> resid(eta.size()), curv(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    obj.value += w(i) * (y(i) * eta(i) - softplus(eta(i)));
    const Scalar p = expit(eta(i));
    resid(i) = w(i) * (y(i) - p);
    curv(i) = w(i) * p * (Scalar(1) - p);
  }
  if (derivatives) {
    obj.gradient = z.transpose() * resid;
    obj.information = z.transpose() * curv.asDiagonal() * z;
  }
  return obj;
}

/// Survival data for the weighted Breslow partial likelihood. Rows are kept in
/// caller order; `order` lists them by decreasing time.
template <typename Scalar>
struct CoxData {
  Matrix<Scalar> z;
  Vector<Scalar> time;
  Vector<Scalar> event;  // 0 or 1
  Vector<Scalar> weight;
  std::vector<Eigen::Index> order;

  CoxData(Matrix<Scalar> z_, Vector<Scalar> time_, Vector<Scalar> event_, Vector<Scalar> weight_)
      : z(std::move(z_)), time(std::move(time_)), event(std::move(event_)), weight(std::move(weight_)) {
    order.resize(static_cast<std::size_t>(time.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return time(a) > time(b); });
  }
};

/// Weighted partial log-likelihood with Breslow ties: each event time uses the
/// weighted risk set {j : t_j >= t}.
template <typename Scalar>
Objective<Scalar> cox_objective(const CoxData<Scalar>& data, const Vector<Scalar>& beta,
                                bool derivatives = true) {
  using std::exp;
  using std::log;
  const Eigen::Index n = data.z.rows();
  const Eigen::Index p = data.z.cols();
  const Vector<Scalar> eta = data.z * beta;
  const Scalar shift = n > 0 ? eta.maxCoeff() : Scalar(0);

  Objective<Scalar> obj;
  obj.value = Scalar(0);
  obj.gradient = Vector<Scalar>::Zero(p);
  obj.information = Matrix<Scalar>::Zero(p, p);

  Scalar s0(0);
  Vector<Scalar> s1 = Vector<Scalar>::Zero(p);
  Matrix<Scalar> s2 = Matrix<Scalar>::Zero(p, p);

  std::size_t i = 0;
  const std::size_t total = data.order.size();
  while (i < total) {
    const Scalar t = data.time(data.order[i]);
    std::size_t j = i;
    Scalar d(0), eta_sum(0);
    Vector<Scalar> z_sum = Vector<Scalar>::Zero(p);
    for (; j < total && data.time(data.order[j]) == t; ++j) {
      const Eigen::Index k = data.order[j];
      const Scalar r = data.weight(k) * exp(eta(k) - shift);
      s0 += r;
      if (derivatives) {
        s1.noalias() += r * data.z.row(k).transpose();
        s2.noalias() += r * data.z.row(k).transpose() * data.z.row(k);
      }
      if (data.event(k) > Scalar(0)) {
        const Scalar wk = data.weight(k);
        d += wk;
        eta_sum += wk * eta(k);
        if (derivatives) z_sum.noalias() += wk * data.z.row(k).transpose();
      }
    }
    if (d > Scalar(0)) {
      obj.value += eta_sum - d * (log(s0) + shift);
      if (derivatives) {
        const Vector<Scalar> zbar = s1 / s0;
        obj.gradient.noalias() += z_sum - d * zbar;
        obj.information.noalias() += d * (s2 / s0 - zbar * zbar.transpose());
      }
    }
    i = j;
  }
  return obj;
}

/// Damped Newton ascent. Stops once the score norm falls below
/// score_tol * (1 + |beta|_inf), or after two consecutive steps whose relative
/// log-likelihood change is below rel_loglik_tol. Each step is halved up to
/// max_halvings times until the objective does not decrease.
template <typename Scalar, typename F>
NewtonResult<Scalar> newton_maximize(F&& objective, Vector<Scalar> beta, const NewtonOptions& opt) {
  using std::abs;
  NewtonResult<Scalar> res;
  Objective<Scalar> obj = objective(beta, true);
  std::vector<double> trace{static_cast<double>(obj.value)};
  int small_changes = 0;

  auto fail = [&](ErrorKind kind, const std::string& why) {
    std::ostringstream msg;
    msg << why << "; log-likelihood trace:";
    for (double v : trace) msg << ' ' << v;
    throw Error(kind, msg.str());
  };

  for (int it = 0;; ++it) {
    const Scalar score = obj.gradient.size() ? obj.gradient.norm() : Scalar(0);
    const Scalar scale = Scalar(1) + (beta.size() ? beta.cwiseAbs().maxCoeff() : Scalar(0));
    res.iterations = it;
    if (score <= Scalar(opt.score_tol) * scale || small_changes >= 2) {
      res.converged = true;
      break;
    }
    if (it >= opt.max_iterations) fail(ErrorKind::Convergence, "Newton solver did not converge in " +
                                                                   std::to_string(opt.max_iterations) + " iterations");
    Eigen::LDLT<Matrix<Scalar>> ldlt(obj.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      fail(ErrorKind::Convergence, "information matrix is not positive definite");
    const Vector<Scalar> step = ldlt.solve(obj.gradient);
    if (!step.allFinite()) fail(ErrorKind::Convergence, "non-finite Newton step");

    Scalar t(1);
    bool accepted = false;
    Vector<Scalar> candidate;
    const Scalar slack = Scalar(1e-12) * (Scalar(1) + abs(obj.value));
    for (int h = 0; h <= opt.max_halvings; ++h, t /= Scalar(2)) {
      candidate = beta + t * step;
      const Scalar value = objective(candidate, false).value;
      if (std::isfinite(static_cast<double>(value)) && value >= obj.value - slack) {
        accepted = true;
        break;
      }
    }
    if (!accepted) fail(ErrorKind::Convergence, "step halving failed to improve the log-likelihood");
    if (candidate.size() && candidate.cwiseAbs().maxCoeff() > Scalar(opt.divergence_bound))
      fail(ErrorKind::Separation, "coefficients diverge (|beta| > " + std::to_string(opt.divergence_bound) +
                                      " on the standardized scale): likely separation");

    Objective<Scalar> next = objective(candidate, true);
    const Scalar rel = abs(next.value - obj.value) / (abs(obj.value) + Scalar(1e-10));
    small_changes = rel <= Scalar(opt.rel_loglik_tol) ? small_changes + 1 : 0;
    beta = std::move(candidate);
    obj = std::move(next);
    trace.push_back(static_cast<double>(obj.value));
  }
  res.beta = std::move(beta);
  res.score_norm = obj.gradient.size() ? obj.gradient.norm() : Scalar(0);
  res.loglik = obj.value;
  return res;
}

}  // namespace cop::solvers
