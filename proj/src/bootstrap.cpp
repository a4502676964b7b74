#include "cop/bootstrap.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "cop/error.hpp"
#include "cop/quantile.hpp"

namespace cop {

void BootstrapPlan::validate() const {
  if (n_replicates < 2) throw Error(ErrorKind::Config, "bootstrap needs at least 2 replicates");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::Config, "bootstrap level must lie in (0,1)");
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(master + (index + 1) * 0x9E3779B97F4A7C15ull);
}

std::vector<std::vector<std::size_t>> resampling_strata(std::span<const ParticipantRecord> records,
                                                        bool use_design_strata) {
  std::map<std::tuple<int, bool, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    groups[{static_cast<int>(r.arm), r.outcome, use_design_strata ? r.design_stratum : std::string()}].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  out.reserve(groups.size());
  for (auto& [key, members] : groups) out.push_back(std::move(members));
  return out;
}

std::vector<ParticipantRecord> resample(std::span<const ParticipantRecord> records,
                                        const std::vector<std::vector<std::size_t>>& strata, std::mt19937_64& rng) {
  std::vector<ParticipantRecord> out;
  out.reserve(records.size());
  for (const auto& members : strata) {
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    for (std::size_t k = 0; k < members.size(); ++k) out.push_back(records[members[pick(rng)]]);
  }
  return out;
}

BootstrapResult run_bootstrap(std::span<const ParticipantRecord> records, const BootstrapPlan& plan,
                              const Statistic& statistic) {
  plan.validate();
  const auto strata = resampling_strata(records, plan.use_design_strata);
  const std::size_t n_rep = plan.n_replicates;

  std::vector<Eigen::VectorXd> values(n_rep);
  std::vector<std::string> reasons(n_rep);
  std::vector<char> ok(n_rep, 0);

  auto work = [&](std::size_t r) {
    std::mt19937_64 rng(stream_seed(plan.seed, r));
    const auto sample = resample(records, strata, rng);
    try {
      values[r] = statistic(sample);
      ok[r] = 1;
    } catch (const Error& e) {
      reasons[r] = e.what();
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(plan.threads, static_cast<unsigned>(n_rep)));
  if (threads == 1) {
    for (std::size_t r = 0; r < n_rep; ++r) work(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t r; (r = next.fetch_add(1)) < n_rep && !failed.load();) {
          try {
            work(r);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            failed = true;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  BootstrapResult res;
  Eigen::Index width = -1;
  for (std::size_t r = 0; r < n_rep; ++r) {
    if (!ok[r]) continue;
    if (width < 0) width = values[r].size();
    if (values[r].size() != width) throw Error(ErrorKind::Bootstrap, "statistic length changed across replicates");
  }
  res.ok.assign(ok.begin(), ok.end());
  for (std::size_t r = 0; r < n_rep; ++r)
    if (!ok[r]) {
      ++res.n_failed;
      res.failure_reasons.push_back(reasons[r]);
    }
  if (2 * res.n_failed > n_rep || width < 0)
    throw Error(ErrorKind::Bootstrap, std::to_string(res.n_failed) + " of " + std::to_string(n_rep) +
                                          " bootstrap replicates failed" +
                                          (res.failure_reasons.empty() ? "" : "; first: " + res.failure_reasons.front()));
  if (20 * res.n_failed > n_rep)
    res.warnings.push_back("bootstrap quality: " + std::to_string(res.n_failed) + " of " + std::to_string(n_rep) +
                           " replicates failed and were dropped");

  res.replicates = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_rep), width,
                                             std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < n_rep; ++r)
    if (ok[r]) res.replicates.row(static_cast<Eigen::Index>(r)) = values[r].transpose();

  res.ci_lo.resize(width);
  res.ci_hi.resize(width);
  std::vector<double> column;
  column.reserve(n_rep);
  for (Eigen::Index j = 0; j < width; ++j) {
    column.clear();
    for (std::size_t r = 0; r < n_rep; ++r)
      if (ok[r]) column.push_back(res.replicates(static_cast<Eigen::Index>(r), j));
    try {
      const auto [lo, hi] = percentile_ci(column, plan.level);
      res.ci_lo(j) = lo;
      res.ci_hi(j) = hi;
    } catch (const Error&) {
      res.ci_lo(j) = res.ci_hi(j) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return res;
}

}  // namespace cop
