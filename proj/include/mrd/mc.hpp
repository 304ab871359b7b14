#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "mrd/dgp.hpp"
#include "mrd/distance.hpp"
#include "mrd/estimator.hpp"

namespace mrd {

enum class EstimatorKind { td_diff, td_common, distance_ik };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::td_diff: return "2d-diff";
    case EstimatorKind::td_common: return "2d-common";
    case EstimatorKind::distance_ik: return "distance-ik";
  }
  return "?";
}

struct RepRecord {
  double theta = 0.0, theta_bc = 0.0, se = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  double h1 = 0.0, h2 = 0.0;
  double pilot = 0.0;
  double eff_n = 0.0;
  bool failed = false;
  std::string error;
};

struct EstimatorSummary {
  std::string name;
  double length = 0.0;   // mean CI length
  double bias = 0.0;     // mean(theta) - true theta
  double coverage = 0.0; // share of CIs containing the true theta
  double rmse = 0.0;
  double variance = 0.0;
  double pilot_median = 0.0, h1_median = 0.0, h2_median = 0.0, eff_n_median = 0.0;
  int failures = 0;
  int used = 0;
};

struct MCResult {
  double true_theta = 0.0;
  std::vector<EstimatorKind> estimators;
  // per_rep[e][r]
  std::vector<std::vector<RepRecord>> per_rep;
  std::vector<EstimatorSummary> summary;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <class Fn>
void parallel_for(int jobs, int count, const Fn& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < count; i += jobs) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Replication r draws its dataset from stream_seed(seed_base, r); every
// estimator sees the identical draw, records land in slot r, and summaries
// are reduced in index order, so the output is invariant to the job count.
inline MCResult run_mc(const DesignSpec& design,
                       const std::vector<EstimatorKind>& estimators, int n,
                       int reps, std::uint64_t seed_base, int jobs = 1,
                       const EstimateOptions& base_options = {}) {
  if (reps < 1) throw InvalidArgumentError("run_mc: reps must be >= 1");
  if (estimators.empty()) throw InvalidArgumentError("run_mc: no estimators given");

  MCResult res;
  res.true_theta = design.true_theta();
  res.estimators = estimators;
  res.per_rep.assign(estimators.size(), std::vector<RepRecord>(reps));

  const BoundaryFrame frame = BoundaryFrame::from_normal({0.0, 0.0}, {0.0, 1.0});

  detail::parallel_for(jobs, reps, [&](int r) {
    const Dataset data = sample(design, n, stream_seed(seed_base, r));
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      RepRecord& rec = res.per_rep[e][r];
      try {
        switch (estimators[e]) {
          case EstimatorKind::td_diff:
          case EstimatorKind::td_common: {
            EstimateOptions opt = base_options;
            opt.mode = estimators[e] == EstimatorKind::td_diff
                           ? BandwidthMode::heterogeneous
                           : BandwidthMode::common;
            const RDEstimate est = estimate_rd(data, frame, opt);
            rec.theta = est.theta;
            rec.theta_bc = est.theta_bc;
            rec.se = est.se;
            rec.ci_low = est.ci_low;
            rec.ci_high = est.ci_high;
            rec.h1 = est.h1;
            rec.h2 = est.h2;
            rec.pilot = 0.5 * (est.pilot_plus + est.pilot_minus);
            rec.eff_n = est.eff_n_plus + est.eff_n_minus;
            break;
          }
          case EstimatorKind::distance_ik: {
            const DistanceRDEstimate est = distance_rd(data, frame, base_options.alpha);
            rec.theta = est.theta;
            rec.theta_bc = est.theta_bc;
            rec.se = est.se;
            rec.ci_low = est.ci_low;
            rec.ci_high = est.ci_high;
            rec.h1 = est.h;
            rec.h2 = est.h;
            rec.pilot = est.h_pilot;
            rec.eff_n = est.eff_n_plus + est.eff_n_minus;
            break;
          }
        }
      } catch (const Error& err) {
        rec.failed = true;
        rec.error = err.what();
      }
    }
  });

  for (std::size_t e = 0; e < estimators.size(); ++e) {
    EstimatorSummary s;
    s.name = to_string(estimators[e]);
    std::vector<double> pilots, h1s, h2s, effs;
    double sum_theta = 0.0, sum_len = 0.0;
    int covered = 0, used = 0;
    for (const RepRecord& rec : res.per_rep[e]) {
      if (rec.failed) {
        ++s.failures;
        continue;
      }
      ++used;
      sum_theta += rec.theta;
      sum_len += rec.ci_high - rec.ci_low;
      if (rec.ci_low <= res.true_theta && res.true_theta <= rec.ci_high) ++covered;
      pilots.push_back(rec.pilot);
      h1s.push_back(rec.h1);
      h2s.push_back(rec.h2);
      effs.push_back(rec.eff_n);
    }
    s.used = used;
    if (used > 0) {
      const double mean_theta = sum_theta / used;
      s.bias = mean_theta - res.true_theta;
      double ss = 0.0;
      for (const RepRecord& rec : res.per_rep[e])
        if (!rec.failed) ss += (rec.theta - mean_theta) * (rec.theta - mean_theta);
      s.variance = ss / used;
      s.rmse = std::sqrt(s.bias * s.bias + s.variance);
      s.coverage = static_cast<double>(covered) / used;
      s.length = sum_len / used;
      s.pilot_median = detail::median_of(pilots);
      s.h1_median = detail::median_of(h1s);
      s.h2_median = detail::median_of(h2s);
      s.eff_n_median = detail::median_of(effs);
    }
    res.summary.push_back(std::move(s));
  }
  return res;
}

}  // namespace mrd
