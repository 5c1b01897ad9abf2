#pragma once

#include <vector>

#include "rsmc/process.hpp"
#include "rsmc/tape.hpp"
#include "rsmc/types.hpp"

namespace rsmc::objectives {

struct LossReport {
  double value = 0.0;
  Vec per_trajectory;
};

// Trajectory batch with forward log-densities recorded on a tape (one Kx1
// node per step) and everything else entering as constants. TB gradients
// therefore reach the policy parameters and log Z only.
struct ScoredBatch {
  std::vector<int> step_log_fwd;
  Mat log_back;  // K x N
  Vec log_p0;    // K
  Vec log_r;     // K
  int log_z = -1;  // 1x1 node
};

int sum_nodes(ad::Tape& tape, const std::vector<int>& nodes);

// log Z + log p0 + sum log_fwd - log R - sum log_back, per trajectory.
int tb_delta_node(ad::Tape& tape, const ScoredBatch& batch);

int tb_loss_node(ad::Tape& tape, const ScoredBatch& batch, const Vec& weights);

// Sample variance (K-1 denominator) of the AIS log-weights; independent of Z.
int lv_loss_node(ad::Tape& tape, const ScoredBatch& batch);

// Chunked SubTB over boundaries {0, L, ..., N}. Policy terms enter as
// constant cumulative sums; flow boundary values are tape nodes, so gradients
// reach the flow parameters only. boundary_flow[0] and [N/L] are the pinned
// endpoints (log p0, log R); log Z is added to the m=0 boundary internally.
struct SubtbChunkInputs {
  std::vector<int> boundary_flow;  // N/L + 1 nodes, Kx1
  int log_z = -1;                  // 1x1 node (constant on a phi tape)
  Mat cum_log_fwd;                 // K x (N+1), col n = sum_{i<n} log_fwd_i
  Mat cum_log_back;
};
int subtb_chunk_loss_node(ad::Tape& tape, const SubtbChunkInputs& in, int chunk_len,
                          const Vec& weights);

// lambda^{n-m}-weighted average over all O(N^2) subtrajectories, fully
// differentiable through both the policy terms and the flows.
struct SubtbLambdaInputs {
  std::vector<int> flow_nodes;    // n = 0..N (endpoints pinned, without log Z)
  int log_z = -1;                 // 1x1 node
  std::vector<int> step_log_fwd;  // N nodes
  Mat log_back;                   // K x N constants
};
int subtb_lambda_loss_node(ad::Tape& tape, const SubtbLambdaInputs& in, double lambda,
                           const Vec& weights);

// --- value-level forms used by tests and reporting ------------------------

double tb_loss(const process::Trajectory& traj, double log_z);

double subtb_loss_value(double log_f_m, double log_f_n, double sum_log_fwd,
                        double sum_log_back);

// Sample variance of the per-trajectory AIS log-weights; batch size >= 2.
double lv_loss(const Vec& ais_log_weights);

// sum_k W_k * loss_k with W_k >= 0 and sum W = 1 (tolerance 1e-6).
double weighted_batch_loss(const Vec& losses, const Vec& weights);
void check_weights(const Vec& weights);

Vec uniform_weights(int count);

}  // namespace rsmc::objectives
