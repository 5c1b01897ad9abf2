#pragma once

#include <optional>
#include <string>

#include "rsmc/discrete.hpp"
#include "rsmc/process.hpp"
#include "rsmc/rng.hpp"
#include "rsmc/targets.hpp"
#include "rsmc/types.hpp"

namespace rsmc::metrics {

struct EvalReport {
  std::optional<double> elbo;
  std::optional<double> eubo;
  std::optional<double> log_z_hat;
  std::optional<double> sinkhorn;
  std::optional<double> mmd;
  std::optional<int> mode_count;
  std::optional<double> pearson_r;
  int sample_count = 0;
  std::uint64_t seed = 0;
  bool sinkhorn_converged = true;
  std::string mmd_note = "exp(-r/l) kernel, median-distance bandwidth";
};

// Lower bound on log Z: mean AIS log-weight over forward rollouts.
// Evaluation uses the amortised sampler only, never SMC.
double elbo(const process::PolicyParams& policy, const targets::TargetSpec& target,
            const process::DiffusionSchedule& sched, int k_eval, const Rng& rng);

// Upper bound on log Z: backward trajectories from exact target samples.
// Throws when the target has no exact sampler.
double eubo(const process::PolicyParams& policy, const targets::TargetSpec& target,
            const process::DiffusionSchedule& sched, int k_eval, const Rng& rng);

// One-sample estimate of log p_theta(x): unbiased for p_theta(x) in linear
// space when averaged.
double estimate_log_marginal(const process::PolicyParams& policy,
                             const process::DiffusionSchedule& sched,
                             const targets::TargetSpec& target, const VecRef& x, Rng& rng);

double estimate_log_marginal(const discrete::DiscretePolicy& policy,
                             const discrete::PrependAppendProcess& proc, const std::string& x,
                             Rng& rng);

double pearson_r(const VecRef& x, const VecRef& y);

// Entropic OT cost (squared-Euclidean ground cost, uniform marginals),
// log-domain scaling iterations; convergence when the row-marginal violation
// drops below 1e-6, capped at 1000 iterations.
double sinkhorn_distance(const Mat& x, const Mat& y, double reg = 1.0,
                         bool* converged = nullptr);

// Biased V-statistic of squared MMD with kernel exp(-||a-b|| / l),
// l = median pairwise distance over the pooled batches.
double mmd(const Mat& x, const Mat& y);

// Number of mixture means with at least one sample within the radius.
int mode_coverage(const Mat& samples, const Mat& means, double radius = 3.0);

}  // namespace rsmc::metrics
