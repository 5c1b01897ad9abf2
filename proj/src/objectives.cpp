#include "rsmc/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace rsmc::objectives {

void check_weights(const Vec& weights) {
  if ((weights.array() < 0.0).any())
    throw std::invalid_argument("weighted_batch_loss: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("weighted_batch_loss: weights must sum to 1");
}

Vec uniform_weights(int count) {
  return Vec::Constant(count, 1.0 / static_cast<double>(count));
}

int sum_nodes(ad::Tape& tape, const std::vector<int>& nodes) {
  if (nodes.empty()) throw std::invalid_argument("sum_nodes: empty");
  int acc = nodes[0];
  for (std::size_t i = 1; i < nodes.size(); ++i) acc = tape.add(acc, nodes[i]);
  return acc;
}

int tb_delta_node(ad::Tape& tape, const ScoredBatch& batch) {
  int sum_fwd = sum_nodes(tape, batch.step_log_fwd);
  Vec c = batch.log_p0 - batch.log_r - batch.log_back.rowwise().sum();
  return tape.add_scalar(tape.add_const(sum_fwd, Mat(c)), batch.log_z);
}

int tb_loss_node(ad::Tape& tape, const ScoredBatch& batch, const Vec& weights) {
  check_weights(weights);
  return tape.dot_const(tape.square(tb_delta_node(tape, batch)), Mat(weights));
}

int lv_loss_node(ad::Tape& tape, const ScoredBatch& batch) {
  int count = static_cast<int>(batch.log_p0.size());
  if (count < 2) throw std::invalid_argument("lv_loss: batch size must be >= 2");
  // AIS log-weight = log R + sum back - log p0 - sum fwd
  int sum_fwd = sum_nodes(tape, batch.step_log_fwd);
  Vec c = batch.log_r + batch.log_back.rowwise().sum() - batch.log_p0;
  int w = tape.add_const(tape.affine(sum_fwd, -1.0, 0.0), Mat(c));
  int mean = tape.affine(tape.sum(w), 1.0 / count, 0.0);
  int dev = tape.sub_scalar(w, mean);
  return tape.affine(tape.sum(tape.square(dev)), 1.0 / (count - 1), 0.0);
}

int subtb_chunk_loss_node(ad::Tape& tape, const SubtbChunkInputs& in, int chunk_len,
                          const Vec& weights) {
  check_weights(weights);
  int n_steps = static_cast<int>(in.cum_log_fwd.cols()) - 1;
  if (chunk_len < 1 || n_steps % chunk_len != 0)
    throw std::invalid_argument("subtb_chunk_loss: N must be divisible by L");
  int n_chunks = n_steps / chunk_len;
  if (static_cast<int>(in.boundary_flow.size()) != n_chunks + 1)
    throw std::invalid_argument("subtb_chunk_loss: boundary count");

  auto seg_delta = [&](int f_m, int f_n, int m, int n) {
    Vec c = in.cum_log_fwd.col(n) - in.cum_log_fwd.col(m) - in.cum_log_back.col(n) +
            in.cum_log_back.col(m);
    int d = tape.add_const(tape.sub(f_m, f_n), Mat(c));
    if (m == 0) d = tape.add_scalar(d, in.log_z);
    return d;
  };

  int total = -1;
  for (int i = 0; i < n_chunks; ++i) {
    int m = i * chunk_len;
    int term = tape.square(seg_delta(in.boundary_flow[i], in.boundary_flow[i + 1], m,
                                     m + chunk_len));
    int tail = tape.affine(
        tape.square(seg_delta(in.boundary_flow[i], in.boundary_flow[n_chunks], m, n_steps)),
        1.0 / (n_chunks - i), 0.0);
    int both = tape.add(term, tail);
    total = (total < 0) ? both : tape.add(total, both);
  }
  return tape.dot_const(total, Mat(weights));
}

int subtb_lambda_loss_node(ad::Tape& tape, const SubtbLambdaInputs& in, double lambda,
                           const Vec& weights) {
  check_weights(weights);
  if (lambda <= 0.0) throw std::invalid_argument("subtb_lambda_loss: lambda must be > 0");
  int n_steps = static_cast<int>(in.step_log_fwd.size());
  int count = static_cast<int>(in.log_back.rows());

  // cumulative forward nodes: cum[n] = sum_{i<n} log_fwd_i
  std::vector<int> cum(n_steps + 1);
  cum[0] = tape.constant(Mat(Mat::Zero(count, 1)));
  for (int n = 0; n < n_steps; ++n) cum[n + 1] = tape.add(cum[n], in.step_log_fwd[n]);

  Mat cum_back(count, n_steps + 1);
  cum_back.col(0).setZero();
  for (int n = 0; n < n_steps; ++n)
    cum_back.col(n + 1) = cum_back.col(n) + in.log_back.col(n);

  int total = -1;
  double weight_sum = 0.0;
  for (int m = 0; m < n_steps; ++m) {
    for (int n = m + 1; n <= n_steps; ++n) {
      double w = std::pow(lambda, n - m);
      weight_sum += w;
      int d = tape.add(tape.sub(in.flow_nodes[m], in.flow_nodes[n]), tape.sub(cum[n], cum[m]));
      d = tape.add_const(d, Mat(Vec(cum_back.col(m) - cum_back.col(n))));
      if (m == 0) d = tape.add_scalar(d, in.log_z);
      int term = tape.affine(tape.square(d), w, 0.0);
      total = (total < 0) ? term : tape.add(total, term);
    }
  }
  total = tape.affine(total, 1.0 / weight_sum, 0.0);
  return tape.dot_const(total, Mat(weights));
}

double tb_loss(const process::Trajectory& traj, double log_z) {
  double delta = log_z + traj.log_p0 + traj.log_fwd.sum() - traj.log_r - traj.log_back.sum();
  return delta * delta;
}

double subtb_loss_value(double log_f_m, double log_f_n, double sum_log_fwd,
                        double sum_log_back) {
  double delta = log_f_m + sum_log_fwd - log_f_n - sum_log_back;
  return delta * delta;
}

double lv_loss(const Vec& ais_log_weights) {
  int count = static_cast<int>(ais_log_weights.size());
  if (count < 2) throw std::invalid_argument("lv_loss: batch size must be >= 2");
  double mean = ais_log_weights.mean();
  return (ais_log_weights.array() - mean).square().sum() / (count - 1);
}

double weighted_batch_loss(const Vec& losses, const Vec& weights) {
  if (losses.size() != weights.size())
    throw std::invalid_argument("weighted_batch_loss: size mismatch");
  check_weights(weights);
  return losses.dot(weights);
}

}  // namespace rsmc::objectives
