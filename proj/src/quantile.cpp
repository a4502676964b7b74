#include "cop/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cop/error.hpp"

namespace cop {

namespace {

// Relative slack so that cumulative shares like 3/9 count as reaching 1/3.
constexpr double kShareSlack = 1e-12;

std::vector<std::size_t> sorted_order(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return order;
}

}  // namespace

std::vector<double> weighted_quantiles(std::span<const double> values,
                                       std::span<const double> weights,
                                       std::span<const double> probs) {
  if (values.empty()) throw Error(ErrorKind::Data, "quantile of an empty sample");
  if (values.size() != weights.size())
    throw Error(ErrorKind::Data, "quantile: values and weights differ in length");
  const auto order = sorted_order(values);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw Error(ErrorKind::Data, "quantile: total weight is not positive");

  std::vector<double> out;
  out.reserve(probs.size());
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Domain, "quantile probability outside [0,1]");
    const double target = p * total * (1.0 - kShareSlack);
    double cum = 0.0;
    double result = values[order.back()];
    for (std::size_t idx : order) {
      cum += weights[idx];
      if (cum >= target && weights[idx] > 0.0) {
        result = values[idx];
        break;
      }
    }
    out.push_back(result);
  }
  return out;
}

double weighted_quantile(std::span<const double> values, std::span<const double> weights,
                         double p) {
  const double probs[] = {p};
  return weighted_quantiles(values, weights, probs).front();
}

double interpolated_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorKind::Data, "quantile of an empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto i = static_cast<std::size_t>(std::floor(h));
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (h - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
}

std::pair<double, double> percentile_ci(std::span<const double> replicates, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::Domain, "CI level must lie in (0,1)");
  std::vector<double> finite;
  finite.reserve(replicates.size());
  for (double v : replicates)
    if (std::isfinite(v)) finite.push_back(v);
  if (finite.empty()) throw Error(ErrorKind::Bootstrap, "percentile CI: no finite replicates");
  if (finite.size() < 2) throw Error(ErrorKind::Bootstrap, "percentile CI: fewer than 2 finite replicates");
  std::sort(finite.begin(), finite.end());

  const double tail = (1.0 - level) / 2.0;
  if (static_cast<double>(finite.size()) * tail < 1.0) return {finite.front(), finite.back()};
  return {interpolated_quantile(finite, tail), interpolated_quantile(finite, 1.0 - tail)};
}

}  // namespace cop
