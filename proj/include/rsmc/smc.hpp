#pragma once

#include <vector>

#include "rsmc/flows.hpp"
#include "rsmc/process.hpp"
#include "rsmc/rng.hpp"
#include "rsmc/targets.hpp"
#include "rsmc/types.hpp"

namespace rsmc::smc {

// Effective sample size (sum w)^2 / sum w^2, computed in log space.
// Range [1, K]; -inf entries carry no mass. Throws when all weights are -inf.
double ess(const VecRef& log_w);

// Largest lambda in [0,1] with ess(lambda * log_w) >= gamma * K, found by
// binary search to absolute tolerance 1e-6 (the returned value always
// satisfies the constraint). Returns 1 when the untempered ESS already does.
double adaptive_iw_tempering(const VecRef& log_w, double gamma);

struct ResampleResult {
  std::vector<int> indices;  // a(k): source index per slot
  Vec log_w_residual;        // self-normalised residual weights
  double lambda = 1.0;
};

// Draw K indices proportional to exp(lambda * log_w) (multinomial by default,
// systematic behind the flag), residual weights proportional to
// exp((1-lambda) * log_w[a(k)]).
ResampleResult tempered_resample(const VecRef& log_w, double gamma, Rng& rng,
                                 bool systematic = false);

// Incremental SMC log-weight at step i of a stored trajectory:
// log F_{i+1}(x_{i+1}) + log_back_i - log F_i(x_i) - log_fwd_i.
double smc_weight_update(const flows::FlowParams& flow, const targets::TargetSpec& target,
                         const process::DiffusionSchedule& sched,
                         const process::Trajectory& traj, int i);

struct SegmentRecord {
  Vec log_w_start;      // self-normalised weights entering the segment
  Vec log_w_increment;  // accumulated incremental log-weights over the segment
};

struct ParticleSystem {
  Mat particles;    // K x d at the current step
  Vec log_w;        // self-normalised log-weights
  int step = 0;
  double log_z_hat = 0.0;
  std::vector<int> resample_steps;
};

struct SmcResult {
  Mat terminals;     // K x d
  Vec log_w;         // final self-normalised log-weights
  Vec log_w_bar;     // combined log(K * Zhat * W)
  double log_z_hat = 0.0;
  std::vector<int> resample_steps;
  std::vector<double> resample_lambdas;  // tempering exponent per resample event
  Vec ess_segments;  // ESS at each segment end, before any resampling
  std::vector<SegmentRecord> segments;
};

// Full sampler: proposes with the policy, reweights against the flow-twisted
// targets every L steps, resamples adaptively (ess < kappa*K, never at the
// final boundary), and accumulates the normalising-constant estimate.
SmcResult smc_sampling(const targets::TargetSpec& target, const process::PolicyParams& policy,
                       const flows::FlowParams& flow, const process::DiffusionSchedule& sched,
                       int count, int segment_len, double kappa, double gamma, const Rng& rng,
                       bool systematic = false);

struct AisResult {
  process::TrajectoryBatch batch;
  Vec log_w;  // trajectory-level importance weights
};

// Forward rollouts with trajectory-level weighting only (no flows, no
// resampling). Uses the same per-particle substreams as smc_sampling.
AisResult ais_sampling(const targets::TargetSpec& target, const process::PolicyParams& policy,
                       const process::DiffusionSchedule& sched, int count, const Rng& rng);

}  // namespace rsmc::smc
