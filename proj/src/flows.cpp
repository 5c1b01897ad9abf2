#include "rsmc/flows.hpp"

#include <cmath>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::flows {

namespace {

// raw state with n/N appended, matching the policy-net encoding
Mat corr_input(const Mat& x, double sigma, double t) {
  (void)sigma;
  Mat in(x.rows(), x.cols() + 1);
  in.leftCols(x.cols()) = x;
  in.col(x.cols()).setConstant(t);
  return in;
}

}  // namespace

FlowParams flow_init(int dim, int hidden, int n_steps, Rng rng, bool learn_schedule,
                     bool use_correction) {
  FlowParams f;
  f.phi = Mat::Zero(n_steps, 1);  // equal softplus increments: beta_n = n/N at init
  f.correction = mlp_init(dim + 1, hidden, 1, rng.substream(21));
  f.learn_schedule = learn_schedule;
  f.use_correction = use_correction;
  return f;
}

Vec beta_schedule(const FlowParams& flow) {
  int n = static_cast<int>(flow.phi.rows());
  Vec beta(n + 1);
  beta[0] = 0.0;
  if (!flow.learn_schedule) {
    for (int i = 1; i <= n; ++i) beta[i] = static_cast<double>(i) / n;
    return beta;
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += softplus(flow.phi(i, 0));
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += softplus(flow.phi(i, 0));
    beta[i + 1] = acc / total;
  }
  return beta;
}

double flow_log_value(const FlowParams& flow, const targets::TargetSpec& target,
                      const process::DiffusionSchedule& sched, const VecRef& x, int n) {
  if (n < 0 || n > sched.n_steps) throw std::invalid_argument("flow_log_value: step");
  if (n == 0) return sched.log_p0(x);
  if (n == sched.n_steps) return target.log_r(x);
  Vec beta = beta_schedule(flow);
  double b = beta[n];
  double v = (1.0 - b) * sched.log_p0(x) + b * target.log_r(x);
  if (flow.use_correction) {
    double t = static_cast<double>(n) / sched.n_steps;
    v += mlp_forward(flow.correction, corr_input(x.transpose(), sched.sigma, t))(0, 0);
  }
  return v;
}

Vec flow_log_values_rows(const FlowParams& flow, const targets::TargetSpec& target,
                         const process::DiffusionSchedule& sched, const Mat& x, int n) {
  if (n < 0 || n > sched.n_steps) throw std::invalid_argument("flow_log_values_rows: step");
  if (n == 0) return sched.log_p0_rows(x);
  Vec log_r = targets::log_r_rows(target, x);
  if (n == sched.n_steps) return log_r;
  Vec beta = beta_schedule(flow);
  double b = beta[n];
  Vec v = (1.0 - b) * sched.log_p0_rows(x) + b * log_r;
  if (flow.use_correction) {
    double t = static_cast<double>(n) / sched.n_steps;
    v += mlp_forward(flow.correction, corr_input(x, sched.sigma, t)).col(0);
  }
  return v;
}

FlowLeaves flow_register(ad::Tape& tape, const FlowParams& flow) {
  FlowLeaves l;
  if (flow.learn_schedule) {
    l.phi = tape.leaf(flow.phi);
    int sp = tape.softplus(l.phi);
    int cum = tape.cumsum(sp);
    int total = tape.entry(cum, static_cast<int>(flow.phi.rows()) - 1, 0);
    l.beta_vec = tape.div_scalar(cum, total);
  }
  if (flow.use_correction) {
    l.corr = mlp_register(tape, flow.correction);
    l.has_corr = true;
  }
  return l;
}

int flow_values_on_tape(ad::Tape& tape, const FlowLeaves& leaves, const FlowParams& flow,
                        const targets::TargetSpec& target,
                        const process::DiffusionSchedule& sched, const Mat& x, int n) {
  if (n < 0 || n > sched.n_steps) throw std::invalid_argument("flow_values_on_tape: step");
  if (n == 0) return tape.constant(Mat(sched.log_p0_rows(x)));
  Vec log_r = targets::log_r_rows(target, x);
  if (n == sched.n_steps) return tape.constant(Mat(log_r));

  Vec log_p0 = sched.log_p0_rows(x);
  int node;
  if (flow.learn_schedule) {
    int beta_n = tape.entry(leaves.beta_vec, n - 1, 0);
    // log_p0 + beta_n * (log_r - log_p0)
    node = tape.add_const(tape.scalar_times_const(beta_n, Mat(log_r - log_p0)), Mat(log_p0));
  } else {
    double b = static_cast<double>(n) / sched.n_steps;
    node = tape.constant(Mat(((1.0 - b) * log_p0 + b * log_r).eval()));
  }
  if (flow.use_correction) {
    double t = static_cast<double>(n) / sched.n_steps;
    int xin = tape.constant(corr_input(x, sched.sigma, t));
    node = tape.add(node, mlp_forward(tape, leaves.corr, xin));
  }
  return node;
}

}  // namespace rsmc::flows
