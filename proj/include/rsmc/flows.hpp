#pragma once

#include "rsmc/mlp.hpp"
#include "rsmc/process.hpp"
#include "rsmc/rng.hpp"
#include "rsmc/tape.hpp"
#include "rsmc/targets.hpp"
#include "rsmc/types.hpp"

namespace rsmc::flows {

// Intermediate unnormalised targets, parametrised in log space as corrections
// to a geometric interpolation with a learnt annealing schedule:
//   log F_n(x) = (1-beta_n) log p0(x) + beta_n log R(x) + log Ftilde(x, n/N)
// Endpoints are pinned: F_0 = p0 and F_N = R exactly, independent of phi.
struct FlowParams {
  Mat phi;         // N x 1 raw schedule params; beta from normalised cumulative softplus
  Mlp correction;  // input (x/sigma, n/N) -> scalar log correction
  bool learn_schedule = true;  // false: fixed linear beta_n = n/N
  bool use_correction = true;
};

FlowParams flow_init(int dim, int hidden, int n_steps, Rng rng, bool learn_schedule = true,
                     bool use_correction = true);

// beta_0..beta_N (size N+1), beta_0 = 0, strictly increasing to beta_N = 1.
Vec beta_schedule(const FlowParams& flow);

double flow_log_value(const FlowParams& flow, const targets::TargetSpec& target,
                      const process::DiffusionSchedule& sched, const VecRef& x, int n);

Vec flow_log_values_rows(const FlowParams& flow, const targets::TargetSpec& target,
                         const process::DiffusionSchedule& sched, const Mat& x, int n);

// --- tape recording --------------------------------------------------------

struct FlowLeaves {
  int phi = -1;  // -1 when the schedule is fixed
  MlpLeaves corr{};
  bool has_corr = false;
  int beta_vec = -1;  // Nx1 node of beta_1..beta_N (learnt schedules only)
};

FlowLeaves flow_register(ad::Tape& tape, const FlowParams& flow);

// Kx1 node of log F_n at the given states. log p0 and log R enter as
// constants; gradients flow into phi / correction leaves only.
int flow_values_on_tape(ad::Tape& tape, const FlowLeaves& leaves, const FlowParams& flow,
                        const targets::TargetSpec& target,
                        const process::DiffusionSchedule& sched, const Mat& x, int n);

}  // namespace rsmc::flows
