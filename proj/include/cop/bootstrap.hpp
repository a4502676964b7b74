#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cop/types.hpp"

namespace cop {

struct BootstrapPlan {
  std::size_t n_replicates = 1000;
  std::uint64_t seed = 20210101;
  unsigned threads = 1;
  bool use_design_strata = false;
  double level = 0.95;

  void validate() const;
};

/// SplitMix64 finalizer; replicate r draws from an mt19937_64 seeded with
/// splitmix64(seed + (r + 1) * 0x9E3779B97F4A7C15).
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) noexcept;

/// Resampling strata: arm x case status (x design stratum). Returns for
/// each stratum the indices of its members, strata in sorted key order.
std::vector<std::vector<std::size_t>> resampling_strata(std::span<const ParticipantRecord> records,
                                                        bool use_design_strata);

/// One stratified resample with replacement; stratum sizes are preserved.
std::vector<ParticipantRecord> resample(std::span<const ParticipantRecord> records,
                                        const std::vector<std::vector<std::size_t>>& strata, std::mt19937_64& rng);

/// Maps a resampled dataset to a fixed-length vector of statistics. Throwing
/// cop::Error marks the replicate as failed.
using Statistic = std::function<Eigen::VectorXd(std::span<const ParticipantRecord>)>;

struct BootstrapResult {
  Eigen::MatrixXd replicates;  // one row per replicate; failed rows are NaN
  std::vector<bool> ok;
  std::vector<std::string> failure_reasons;
  std::size_t n_failed = 0;
  Eigen::VectorXd ci_lo;
  Eigen::VectorXd ci_hi;
  std::vector<std::string> warnings;
};

/// Runs plan.n_replicates stratified replicates of `statistic`, possibly on
/// several threads; output does not depend on the thread count. More than 5%
/// failed replicates adds a warning, more than 50% throws Error(Bootstrap).
BootstrapResult run_bootstrap(std::span<const ParticipantRecord> records, const BootstrapPlan& plan,
                              const Statistic& statistic);

}  // namespace cop
