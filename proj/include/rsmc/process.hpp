#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "rsmc/mlp.hpp"
#include "rsmc/rng.hpp"
#include "rsmc/tape.hpp"
#include "rsmc/targets.hpp"
#include "rsmc/types.hpp"

namespace rsmc::process {

// Discretised OU reference process. The backward (noising) kernel is fixed;
// the forward kernel adds a learnt drift. p0 is the OU stationary law
// N(0, sigma^2 I).
//
// The noising rate b_t ramps linearly from min_frac*ou_rate at the data end
// to (2-min_frac)*ou_rate at the noise end (mean ou_rate), evaluated at edge
// midpoints: alpha_n = 1 - exp(-2 b(1-(n+.5)/N) / N). Small rates near the
// data end keep the final generation kernels sharp enough to represent
// narrow target modes; the mean rate fixes the total mixing
// prod(1-alpha_n) = exp(-2 ou_rate).
struct DiffusionSchedule {
  int n_steps = 0;
  double sigma = 1.0;
  double ou_rate = 2.5;      // mean of b_t
  double min_frac = 0.02;    // b at the data end, as a fraction of the mean
  Vec alpha;                 // per-edge, size N

  double alpha_fwd(int n) const { return alpha[n]; }       // edge x_n -> x_{n+1}, 0 <= n < N
  double alpha_back(int n) const { return alpha[n - 1]; }  // kernel x_{n-1} | x_n, 1 <= n <= N

  double log_p0(const VecRef& x) const;
  Vec log_p0_rows(const Mat& x) const;
};

// Throws unless 0 < alpha < 1 and the mixing requirement
// prod(1 - alpha_n) <= 0.05 holds.
DiffusionSchedule make_schedule(int n_steps, double sigma, double ou_rate = 2.5,
                                double min_frac = 0.02);

struct PolicyParams {
  Mlp drift;                       // input (x/sigma, n/N) -> d, sigma-scaled output
  std::optional<Mlp> langevin_scale;  // input n/N -> 1
  Mat log_z;                       // 1x1 learnable scalar
  bool langevin = false;
  double grad_clip = 100.0;
};

PolicyParams policy_init(int dim, int hidden, Rng rng, bool langevin = false,
                         double grad_clip = 100.0);

// Batched drift evaluation at step n. target may be null unless the Langevin
// parametrisation is enabled.
Mat drift_eval(const PolicyParams& policy, const DiffusionSchedule& sched,
               const targets::TargetSpec* target, const Mat& x, int n);

struct Trajectory {
  Mat states;    // (N+1) x d
  Vec log_fwd;   // N
  Vec log_back;  // N
  double log_p0 = 0.0;
  double log_r = 0.0;
};

// Column-batched trajectories: states[n] is K x d.
struct TrajectoryBatch {
  std::vector<Mat> states;
  Mat log_fwd;   // K x N
  Mat log_back;  // K x N
  Vec log_p0;    // K
  Vec log_r;     // K

  int n_steps() const { return static_cast<int>(states.size()) - 1; }
  int count() const { return static_cast<int>(states[0].rows()); }
  Trajectory extract(int k) const;
  Vec ais_log_weight() const;  // log_r + sum log_back - log_p0 - sum log_fwd
};

double backward_kernel_logpdf(const DiffusionSchedule& sched, const VecRef& x_prev,
                              const VecRef& x, int n);

// One forward transition from x at step n; returns the new state and its
// log-density under the current policy.
std::pair<Vec, double> forward_policy_step(const PolicyParams& policy,
                                           const DiffusionSchedule& sched,
                                           const targets::TargetSpec* target, const VecRef& x,
                                           int n, Rng& rng);

// K forward rollouts with per-particle substreams rng.substream(1, k).
TrajectoryBatch rollout_forward(const PolicyParams& policy, const DiffusionSchedule& sched,
                                const targets::TargetSpec& target, int count, const Rng& rng);

// Ancestral backward sampling from fixed terminals; fills log_back and scores
// the stored transitions under the current policy.
TrajectoryBatch sample_backward(const PolicyParams& policy, const DiffusionSchedule& sched,
                                const targets::TargetSpec& target, const Mat& terminals,
                                const Rng& rng);

Trajectory sample_backward_trajectory(const PolicyParams& policy, const DiffusionSchedule& sched,
                                      const targets::TargetSpec& target, const VecRef& x_n,
                                      Rng& rng);

// Recomputes log_fwd / log_back / log_p0 / log_r from the stored states.
void rescore(const PolicyParams& policy, const DiffusionSchedule& sched,
             const targets::TargetSpec& target, TrajectoryBatch& batch);

// --- tape recording ------------------------------------------------------

struct PolicyLeaves {
  MlpLeaves drift;
  MlpLeaves nn2;
  int log_z = -1;
  bool has_nn2 = false;
};

PolicyLeaves policy_register(ad::Tape& tape, const PolicyParams& policy);

// Records the forward log-densities of every stored transition; returns one
// Kx1 node per step. Gradients flow into the policy leaves only.
std::vector<int> score_forward_on_tape(ad::Tape& tape, const PolicyLeaves& leaves,
                                       const PolicyParams& policy,
                                       const DiffusionSchedule& sched,
                                       const targets::TargetSpec* target,
                                       const TrajectoryBatch& batch);

}  // namespace rsmc::process
