#include "rsmc/process.hpp"

#include <cmath>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::process {

namespace {

// Drift input is the raw state with n/N appended; the output is sigma-scaled
// so the learnable weights stay O(1) across targets with very different
// spatial scales.
Mat drift_input(const Mat& x, double sigma, double t) {
  (void)sigma;
  Mat in(x.rows(), x.cols() + 1);
  in.leftCols(x.cols()) = x;
  in.col(x.cols()).setConstant(t);
  return in;
}

Mat clipped_grad_rows(const targets::TargetSpec& target, const Mat& x, double max_norm) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    Vec gr = target.grad_log_r(x.row(k).transpose());
    double n = gr.norm();
    if (n > max_norm) gr *= max_norm / n;
    g.row(k) = gr.transpose();
  }
  return g;
}

}  // namespace

DiffusionSchedule make_schedule(int n_steps, double sigma, double ou_rate, double min_frac) {
  if (n_steps < 1) throw std::invalid_argument("make_schedule: n_steps must be >= 1");
  if (sigma <= 0.0) throw std::invalid_argument("make_schedule: sigma must be positive");
  if (min_frac <= 0.0 || min_frac > 1.0)
    throw std::invalid_argument("make_schedule: min_frac must be in (0,1]");
  DiffusionSchedule s;
  s.n_steps = n_steps;
  s.sigma = sigma;
  s.ou_rate = ou_rate;
  s.min_frac = min_frac;
  double b_min = min_frac * ou_rate;
  double b_max = (2.0 - min_frac) * ou_rate;
  s.alpha.resize(n_steps);
  double residual = 1.0;
  for (int n = 0; n < n_steps; ++n) {
    double tau = 1.0 - (n + 0.5) / n_steps;  // noising time at the edge midpoint
    double b = b_min + (b_max - b_min) * tau;
    s.alpha[n] = 1.0 - std::exp(-2.0 * b / n_steps);
    if (!(s.alpha[n] > 0.0 && s.alpha[n] < 1.0))
      throw std::invalid_argument("make_schedule: alpha outside (0,1)");
    residual *= 1.0 - s.alpha[n];
  }
  if (residual > 0.05)
    throw std::invalid_argument(
        "make_schedule: mixing requirement violated, prod(1-alpha) > 0.05 (raise ou_rate)");
  return s;
}

double DiffusionSchedule::log_p0(const VecRef& x) const {
  return gaussian_logpdf(x, Vec::Zero(x.size()), sigma * sigma);
}

Vec DiffusionSchedule::log_p0_rows(const Mat& x) const {
  return gaussian_logpdf_rows(x, Mat::Zero(x.rows(), x.cols()), sigma * sigma);
}

PolicyParams policy_init(int dim, int hidden, Rng rng, bool langevin, double grad_clip) {
  PolicyParams p;
  p.drift = mlp_init(dim + 1, hidden, dim, rng.substream(11));
  p.langevin = langevin;
  p.grad_clip = grad_clip;
  if (langevin) p.langevin_scale = mlp_init(1, hidden, 1, rng.substream(12));
  p.log_z = Mat::Zero(1, 1);
  return p;
}

Mat drift_eval(const PolicyParams& policy, const DiffusionSchedule& sched,
               const targets::TargetSpec* target, const Mat& x, int n) {
  double t = static_cast<double>(n) / sched.n_steps;
  Mat out = sched.sigma * mlp_forward(policy.drift, drift_input(x, sched.sigma, t));
  if (policy.langevin) {
    if (target == nullptr || !target->has_grad())
      throw std::runtime_error("drift_eval: Langevin parametrisation needs grad_log_r");
    Mat tin = Mat::Constant(x.rows(), 1, t);
    Mat scale = mlp_forward(*policy.langevin_scale, tin);  // K x 1
    out += (clipped_grad_rows(*target, x, policy.grad_clip).array().colwise() *
            scale.col(0).array())
               .matrix();
  }
  return out;
}

Trajectory TrajectoryBatch::extract(int k) const {
  Trajectory t;
  int n = n_steps();
  t.states.resize(n + 1, states[0].cols());
  for (int i = 0; i <= n; ++i) t.states.row(i) = states[i].row(k);
  t.log_fwd = log_fwd.row(k).transpose();
  t.log_back = log_back.row(k).transpose();
  t.log_p0 = log_p0[k];
  t.log_r = log_r[k];
  return t;
}

Vec TrajectoryBatch::ais_log_weight() const {
  return log_r + log_back.rowwise().sum() - log_p0 - log_fwd.rowwise().sum();
}

double backward_kernel_logpdf(const DiffusionSchedule& sched, const VecRef& x_prev,
                              const VecRef& x, int n) {
  if (n < 1 || n > sched.n_steps) throw std::invalid_argument("backward_kernel_logpdf: step");
  if (x_prev.size() != x.size()) throw std::invalid_argument("backward_kernel_logpdf: dim");
  double a = sched.alpha_back(n);
  Vec mean = std::sqrt(1.0 - a) * x;
  return gaussian_logpdf(x_prev, mean, sched.sigma * sched.sigma * a);
}

std::pair<Vec, double> forward_policy_step(const PolicyParams& policy,
                                           const DiffusionSchedule& sched,
                                           const targets::TargetSpec* target, const VecRef& x,
                                           int n, Rng& rng) {
  if (n < 0 || n >= sched.n_steps) throw std::invalid_argument("forward_policy_step: step");
  double a = sched.alpha_fwd(n);
  Mat xm = x.transpose();
  Mat drift = drift_eval(policy, sched, target, xm, n);
  Vec mean = std::sqrt(1.0 - a) * x + a * drift.row(0).transpose();
  double var = sched.sigma * sched.sigma * a;
  Vec next = mean + std::sqrt(var) * rng.normal_vec(x.size());
  return {next, gaussian_logpdf(next, mean, var)};
}

TrajectoryBatch rollout_forward(const PolicyParams& policy, const DiffusionSchedule& sched,
                                const targets::TargetSpec& target, int count, const Rng& rng) {
  int n_steps = sched.n_steps;
  int dim = target.dim;
  std::vector<Rng> streams;
  streams.reserve(count);
  for (int k = 0; k < count; ++k) streams.push_back(rng.substream(1, k));

  TrajectoryBatch batch;
  batch.states.resize(n_steps + 1);
  batch.log_fwd.resize(count, n_steps);
  batch.log_back.resize(count, n_steps);

  Mat x(count, dim);
  for (int k = 0; k < count; ++k)
    x.row(k) = sched.sigma * streams[k].normal_vec(dim).transpose();
  batch.states[0] = x;
  batch.log_p0 = sched.log_p0_rows(x);

  for (int n = 0; n < n_steps; ++n) {
    double a = sched.alpha_fwd(n);
    double sd = sched.sigma * std::sqrt(a);
    Mat mean = std::sqrt(1.0 - a) * x + a * drift_eval(policy, sched, &target, x, n);
    Mat next(count, dim);
    for (int k = 0; k < count; ++k)
      next.row(k) = mean.row(k) + sd * streams[k].normal_vec(dim).transpose();
    batch.log_fwd.col(n) = gaussian_logpdf_rows(next, mean, sd * sd);
    double ab = sched.alpha_back(n + 1);
    Mat back_mean = std::sqrt(1.0 - ab) * next;
    batch.log_back.col(n) =
        gaussian_logpdf_rows(x, back_mean, sched.sigma * sched.sigma * ab);
    x = std::move(next);
    batch.states[n + 1] = x;
  }
  batch.log_r = targets::log_r_rows(target, x);
  return batch;
}

TrajectoryBatch sample_backward(const PolicyParams& policy, const DiffusionSchedule& sched,
                                const targets::TargetSpec& target, const Mat& terminals,
                                const Rng& rng) {
  int n_steps = sched.n_steps;
  int count = static_cast<int>(terminals.rows());
  std::vector<Rng> streams;
  streams.reserve(count);
  for (int k = 0; k < count; ++k) streams.push_back(rng.substream(3, k));

  TrajectoryBatch batch;
  batch.states.resize(n_steps + 1);
  batch.log_fwd.resize(count, n_steps);
  batch.log_back.resize(count, n_steps);
  batch.states[n_steps] = terminals;

  Mat x = terminals;
  for (int n = n_steps; n >= 1; --n) {
    double a = sched.alpha_back(n);
    double sd = sched.sigma * std::sqrt(a);
    Mat mean = std::sqrt(1.0 - a) * x;
    Mat prev(count, terminals.cols());
    for (int k = 0; k < count; ++k)
      prev.row(k) = mean.row(k) + sd * streams[k].normal_vec(terminals.cols()).transpose();
    batch.log_back.col(n - 1) = gaussian_logpdf_rows(prev, mean, sd * sd);
    batch.states[n - 1] = prev;
    x = std::move(prev);
  }
  batch.log_p0 = sched.log_p0_rows(batch.states[0]);
  batch.log_r = targets::log_r_rows(target, terminals);

  // score the stored transitions under the current policy
  for (int n = 0; n < n_steps; ++n) {
    double a = sched.alpha_fwd(n);
    Mat mean = std::sqrt(1.0 - a) * batch.states[n] +
               a * drift_eval(policy, sched, &target, batch.states[n], n);
    batch.log_fwd.col(n) =
        gaussian_logpdf_rows(batch.states[n + 1], mean, sched.sigma * sched.sigma * a);
  }
  return batch;
}

Trajectory sample_backward_trajectory(const PolicyParams& policy, const DiffusionSchedule& sched,
                                      const targets::TargetSpec& target, const VecRef& x_n,
                                      Rng& rng) {
  TrajectoryBatch b = sample_backward(policy, sched, target, x_n.transpose(), rng);
  return b.extract(0);
}

void rescore(const PolicyParams& policy, const DiffusionSchedule& sched,
             const targets::TargetSpec& target, TrajectoryBatch& batch) {
  int n_steps = batch.n_steps();
  int count = batch.count();
  for (int n = 0; n < n_steps; ++n) {
    double a = sched.alpha_fwd(n);
    Mat mean = std::sqrt(1.0 - a) * batch.states[n] +
               a * drift_eval(policy, sched, &target, batch.states[n], n);
    batch.log_fwd.col(n) =
        gaussian_logpdf_rows(batch.states[n + 1], mean, sched.sigma * sched.sigma * a);
    double ab = sched.alpha_back(n + 1);
    batch.log_back.col(n) = gaussian_logpdf_rows(
        batch.states[n], std::sqrt(1.0 - ab) * batch.states[n + 1],
        sched.sigma * sched.sigma * ab);
  }
  batch.log_p0 = sched.log_p0_rows(batch.states[0]);
  batch.log_r = targets::log_r_rows(target, batch.states[n_steps]);
  (void)count;
}

PolicyLeaves policy_register(ad::Tape& tape, const PolicyParams& policy) {
  PolicyLeaves l;
  l.drift = mlp_register(tape, policy.drift);
  if (policy.langevin) {
    l.nn2 = mlp_register(tape, *policy.langevin_scale);
    l.has_nn2 = true;
  }
  l.log_z = tape.leaf(policy.log_z);
  return l;
}

std::vector<int> score_forward_on_tape(ad::Tape& tape, const PolicyLeaves& leaves,
                                       const PolicyParams& policy,
                                       const DiffusionSchedule& sched,
                                       const targets::TargetSpec* target,
                                       const TrajectoryBatch& batch) {
  int n_steps = batch.n_steps();
  double d = static_cast<double>(batch.states[0].cols());
  std::vector<int> out;
  out.reserve(n_steps);
  for (int n = 0; n < n_steps; ++n) {
    double t = static_cast<double>(n) / sched.n_steps;
    double a = sched.alpha_fwd(n);
    double var = sched.sigma * sched.sigma * a;
    int xin = tape.constant(drift_input(batch.states[n], sched.sigma, t));
    int drift = tape.affine(mlp_forward(tape, leaves.drift, xin), sched.sigma, 0.0);
    if (policy.langevin) {
      if (target == nullptr || !target->has_grad())
        throw std::runtime_error("score_forward_on_tape: Langevin needs grad_log_r");
      int tin = tape.constant(Mat::Constant(batch.states[n].rows(), 1, t));
      int scale = mlp_forward(tape, leaves.nn2, tin);
      int lang = tape.col_scale_const(
          scale, clipped_grad_rows(*target, batch.states[n], policy.grad_clip));
      drift = tape.add(drift, lang);
    }
    Mat resid_const = batch.states[n + 1] - std::sqrt(1.0 - a) * batch.states[n];
    int resid = tape.add_const(tape.affine(drift, -a, 0.0), resid_const);
    int logp = tape.affine(tape.row_sum_sq(resid), -0.5 / var,
                           -0.5 * d * (kLog2Pi + std::log(var)));
    out.push_back(logp);
  }
  return out;
}

}  // namespace rsmc::process
