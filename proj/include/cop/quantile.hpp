#pragma once

#include <span>
#include <utility>
#include <vector>

namespace cop {

/// Weighted inverse-CDF quantile: the smallest observed value v whose
/// cumulative weight share reaches p. With equal weights this is the
/// textbook empirical quantile (R type 1).
double weighted_quantile(std::span<const double> values,
                         std::span<const double> weights, double p);

std::vector<double> weighted_quantiles(std::span<const double> values,
                                       std::span<const double> weights,
                                       std::span<const double> probs);

/// Linear-interpolation order statistic (R type 7) on sorted data.
double interpolated_quantile(std::span<const double> sorted, double p);

/// Percentile interval over bootstrap replicates. Non-finite values are
/// ignored. Tails are interpolated order statistics (R type 7); when fewer
/// than one replicate is expected in a tail (n * (1 - level) / 2 < 1) that
/// endpoint is the sample extreme.
std::pair<double, double> percentile_ci(std::span<const double> replicates,
                                        double level = 0.95);

}  // namespace cop
