#include "rsmc/smc.hpp"

#include <cmath>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::smc {

double ess(const VecRef& log_w) {
  if (log_w.size() < 1) throw std::invalid_argument("ess: empty weights");
  double l1 = log_sum_exp(log_w);
  if (!std::isfinite(l1)) throw std::runtime_error("ess: degenerate weights (all -inf)");
  double l2 = log_sum_exp((2.0 * log_w.array()).matrix());
  return std::exp(2.0 * l1 - l2);
}

double adaptive_iw_tempering(const VecRef& log_w, double gamma) {
  if (gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("adaptive_iw_tempering: gamma must be in [0,1]");
  double k = static_cast<double>(log_w.size());
  double threshold = gamma * k;
  if (ess(log_w) >= threshold) return 1.0;
  // ess(lambda * log_w) decreases monotonically from K at lambda=0; keep the
  // invariant ess(lo) >= threshold and return lo.
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 40 && hi - lo > 1e-6; ++it) {
    double mid = 0.5 * (lo + hi);
    if (ess((mid * log_w.array()).matrix()) >= threshold)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

namespace {

std::vector<int> sample_indices(const Vec& log_probs_norm, int count, Rng& rng,
                                bool systematic) {
  int n = static_cast<int>(log_probs_norm.size());
  Vec cdf(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(log_probs_norm[i]);
    cdf[i] = acc;
  }
  cdf[n - 1] = 1.0;  // guard against rounding
  std::vector<int> idx(count);
  if (systematic) {
    double u0 = rng.uniform() / count;
    int j = 0;
    for (int k = 0; k < count; ++k) {
      double u = u0 + static_cast<double>(k) / count;
      while (cdf[j] < u) ++j;
      idx[k] = j;
    }
  } else {
    for (int k = 0; k < count; ++k) {
      double u = rng.uniform();
      int lo = 0, hi = n - 1;
      while (lo < hi) {
        int mid = (lo + hi) / 2;
        if (cdf[mid] < u)
          lo = mid + 1;
        else
          hi = mid;
      }
      idx[k] = lo;
    }
  }
  return idx;
}

}  // namespace

ResampleResult tempered_resample(const VecRef& log_w, double gamma, Rng& rng, bool systematic) {
  int count = static_cast<int>(log_w.size());
  ResampleResult r;
  r.lambda = adaptive_iw_tempering(log_w, gamma);

  Vec tempered = (r.lambda * log_w.array()).matrix();
  log_normalise(tempered);
  r.indices = sample_indices(tempered, count, rng, systematic);

  r.log_w_residual.resize(count);
  for (int k = 0; k < count; ++k)
    r.log_w_residual[k] = (1.0 - r.lambda) * log_w[r.indices[k]];
  log_normalise(r.log_w_residual);
  return r;
}

double smc_weight_update(const flows::FlowParams& flow, const targets::TargetSpec& target,
                         const process::DiffusionSchedule& sched,
                         const process::Trajectory& traj, int i) {
  double f_next =
      flows::flow_log_value(flow, target, sched, traj.states.row(i + 1).transpose(), i + 1);
  double f_cur = flows::flow_log_value(flow, target, sched, traj.states.row(i).transpose(), i);
  return f_next + traj.log_back[i] - f_cur - traj.log_fwd[i];
}

SmcResult smc_sampling(const targets::TargetSpec& target, const process::PolicyParams& policy,
                       const flows::FlowParams& flow, const process::DiffusionSchedule& sched,
                       int count, int segment_len, double kappa, double gamma, const Rng& rng,
                       bool systematic) {
  int n_steps = sched.n_steps;
  if (segment_len < 1 || n_steps % segment_len != 0)
    throw std::invalid_argument("smc_sampling: N must be divisible by L");
  if (kappa < 0.0 || kappa > 1.0 || gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("smc_sampling: kappa and gamma must be in [0,1]");
  int n_segments = n_steps / segment_len;
  int dim = target.dim;

  std::vector<Rng> streams;
  streams.reserve(count);
  for (int k = 0; k < count; ++k) streams.push_back(rng.substream(1, k));
  Rng resample_rng = rng.substream(2);

  ParticleSystem ps;
  ps.particles.resize(count, dim);
  for (int k = 0; k < count; ++k)
    ps.particles.row(k) = sched.sigma * streams[k].normal_vec(dim).transpose();
  ps.log_w = Vec::Constant(count, -std::log(static_cast<double>(count)));
  Mat& x = ps.particles;
  Vec& log_w = ps.log_w;
  Vec flow_cur = flows::flow_log_values_rows(flow, target, sched, x, 0);

  SmcResult result;
  result.ess_segments.resize(n_segments);

  for (int j = 1; j <= n_segments; ++j) {
    Vec incr = Vec::Zero(count);
    for (int s = 0; s < segment_len; ++s) {
      int n = (j - 1) * segment_len + s;
      double a = sched.alpha_fwd(n);
      double sd = sched.sigma * std::sqrt(a);
      Mat mean = std::sqrt(1.0 - a) * x + a * drift_eval(policy, sched, &target, x, n);
      Mat next(count, dim);
      for (int k = 0; k < count; ++k)
        next.row(k) = mean.row(k) + sd * streams[k].normal_vec(dim).transpose();
      Vec log_fwd = gaussian_logpdf_rows(next, mean, sd * sd);
      double ab = sched.alpha_back(n + 1);
      Vec log_back = gaussian_logpdf_rows(x, std::sqrt(1.0 - ab) * next,
                                          sched.sigma * sched.sigma * ab);
      incr += log_back - log_fwd;
      x = std::move(next);
    }
    // interior flow values cancel telescopically within a segment
    Vec flow_next = flows::flow_log_values_rows(flow, target, sched, x, j * segment_len);
    for (int k = 0; k < count; ++k) {
      double step = flow_next[k] - flow_cur[k] + incr[k];
      incr[k] = std::isfinite(step) ? step : kNegInf;  // flagged particle
    }

    SegmentRecord rec;
    rec.log_w_start = log_w;
    rec.log_w_increment = incr;
    result.segments.push_back(std::move(rec));

    Vec log_w_new = log_w + incr;
    double log_s = log_sum_exp(log_w_new);
    if (!std::isfinite(log_s)) throw std::runtime_error("smc_sampling: all particles degenerate");
    ps.log_z_hat += log_s;
    ps.step = j * segment_len;
    double e = ess(log_w_new);
    result.ess_segments[j - 1] = e;

    if (e < kappa * count && j < n_segments) {
      ResampleResult rr = tempered_resample(log_w_new, gamma, resample_rng, systematic);
      Mat xr(count, dim);
      Vec fr(count);
      for (int k = 0; k < count; ++k) {
        xr.row(k) = x.row(rr.indices[k]);
        fr[k] = flow_next[rr.indices[k]];
      }
      x = std::move(xr);
      flow_next = std::move(fr);
      log_w = rr.log_w_residual;
      result.resample_lambdas.push_back(rr.lambda);
      ps.resample_steps.push_back(j * segment_len);
    } else {
      log_w = log_w_new.array() - log_s;
    }
    flow_cur = std::move(flow_next);
  }

  result.log_z_hat = ps.log_z_hat;
  result.resample_steps = std::move(ps.resample_steps);
  result.log_w = log_w;
  result.log_w_bar =
      (log_w.array() + result.log_z_hat + std::log(static_cast<double>(count))).matrix();
  result.terminals = std::move(ps.particles);
  return result;
}

AisResult ais_sampling(const targets::TargetSpec& target, const process::PolicyParams& policy,
                       const process::DiffusionSchedule& sched, int count, const Rng& rng) {
  AisResult r;
  r.batch = process::rollout_forward(policy, sched, target, count, rng);
  r.log_w = r.batch.ais_log_weight();
  return r;
}

}  // namespace rsmc::smc
