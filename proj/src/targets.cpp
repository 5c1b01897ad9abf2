#include "rsmc/targets.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::targets {

namespace {

// Funnel log-variance floor: exp(x_1) underflows for very negative x_1.
constexpr double kFunnelLogVarFloor = -60.0;

double dw_energy(double a, double b) {
  return a * a * a * a - 6.0 * a * a - 0.5 * a + 0.5 * b * b;
}

// Envelope constant for rejection sampling of the quartic ManyWell
// coordinate from a N(0, 3^2) proposal: log M = max_a [log f(a) - log g(a)],
// located by Newton refinement from a coarse scan.
double manywell_log_envelope() {
  const double sp = 3.0;
  auto h = [&](double a) {
    return (-a * a * a * a + 6.0 * a * a + 0.5 * a) + 0.5 * a * a / (sp * sp) +
           0.5 * std::log(2.0 * std::numbers::pi * sp * sp);
  };
  auto hp = [&](double a) { return -4.0 * a * a * a + 12.0 * a + 0.5 + a / (sp * sp); };
  auto hpp = [&](double a) { return -12.0 * a * a + 12.0 + 1.0 / (sp * sp); };
  double best = kNegInf, best_a = 0.0;
  for (double a = -3.0; a <= 3.0; a += 0.01) {
    if (h(a) > best) {
      best = h(a);
      best_a = a;
    }
  }
  double a = best_a;
  for (int it = 0; it < 50; ++it) {
    double step = hp(a) / hpp(a);
    a -= step;
    if (std::abs(step) < 1e-14) break;
  }
  return std::max(best, h(a)) + 1e-9;
}

}  // namespace

Vec log_r_rows(const TargetSpec& spec, const MatRef& x) {
  if (spec.log_r_rows) return spec.log_r_rows(x);
  Vec out(x.rows());
  for (Eigen::Index k = 0; k < x.rows(); ++k) out[k] = spec.log_r(x.row(k).transpose());
  return out;
}

GmmSpec gmm_spec(int dim, int component_count, std::uint64_t seed) {
  if (dim <= 0 || component_count <= 0)
    throw std::invalid_argument("gmm_spec: dim and component_count must be positive");
  GmmSpec spec;
  spec.component_count = component_count;
  spec.seed = seed;
  spec.means.resize(component_count, dim);
  Rng rng = Rng(seed).substream(0x67u, static_cast<std::uint64_t>(dim));
  for (int i = 0; i < component_count; ++i)
    for (int j = 0; j < dim; ++j) spec.means(i, j) = 80.0 * rng.uniform() - 40.0;
  return spec;
}

double gmm_log_density(const GmmSpec& spec, const VecRef& x) {
  if (x.size() != spec.means.cols()) throw std::invalid_argument("gmm_log_density: dim mismatch");
  int m = spec.component_count;
  double d = static_cast<double>(x.size());
  Vec comps(m);
  for (int i = 0; i < m; ++i) {
    double q = (x.transpose() - spec.means.row(i)).squaredNorm();
    comps[i] = -0.5 * (d * kLog2Pi + q);
  }
  return log_sum_exp(comps) - std::log(static_cast<double>(m));
}

Vec gmm_grad_log_density(const GmmSpec& spec, const VecRef& x) {
  if (x.size() != spec.means.cols())
    throw std::invalid_argument("gmm_grad_log_density: dim mismatch");
  int m = spec.component_count;
  double d = static_cast<double>(x.size());
  Vec comps(m);
  for (int i = 0; i < m; ++i) {
    double q = (x.transpose() - spec.means.row(i)).squaredNorm();
    comps[i] = -0.5 * (d * kLog2Pi + q);
  }
  double lse = log_sum_exp(comps);
  Vec grad = Vec::Zero(x.size());
  for (int i = 0; i < m; ++i) {
    double w = std::exp(comps[i] - lse);
    grad += w * (spec.means.row(i).transpose() - x);
  }
  return grad;
}

double funnel_log_density(const VecRef& x) {
  if (x.size() != 10) throw std::invalid_argument("funnel_log_density: dim must be 10");
  double lv = std::max(x[0], kFunnelLogVarFloor);
  double out = gaussian_logpdf(x[0], 0.0, 9.0);
  double var = std::exp(lv);
  for (Eigen::Index i = 1; i < x.size(); ++i) out += -0.5 * (kLog2Pi + lv + x[i] * x[i] / var);
  return out;
}

Vec funnel_grad_log_density(const VecRef& x) {
  if (x.size() != 10) throw std::invalid_argument("funnel_grad_log_density: dim must be 10");
  Vec grad(x.size());
  double lv = std::max(x[0], kFunnelLogVarFloor);
  double var = std::exp(lv);
  grad[0] = -x[0] / 9.0;
  if (x[0] > kFunnelLogVarFloor) {
    double n = static_cast<double>(x.size() - 1);
    grad[0] += -0.5 * n + 0.5 * x.tail(x.size() - 1).squaredNorm() / var;
  }
  for (Eigen::Index i = 1; i < x.size(); ++i) grad[i] = -x[i] / var;
  return grad;
}

double manywell_log_density(const VecRef& x) {
  if (x.size() % 2 != 0) throw std::invalid_argument("manywell_log_density: dim must be even");
  double e = 0.0;
  for (Eigen::Index i = 0; i < x.size(); i += 2) e += dw_energy(x[i], x[i + 1]);
  return -e;
}

Vec manywell_grad_log_density(const VecRef& x) {
  if (x.size() % 2 != 0)
    throw std::invalid_argument("manywell_grad_log_density: dim must be even");
  Vec grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); i += 2) {
    double a = x[i];
    grad[i] = -(4.0 * a * a * a - 12.0 * a - 0.5);
    grad[i + 1] = -x[i + 1];
  }
  return grad;
}

namespace {

// one GEMM for all pairwise squared distances, then a row-wise logsumexp
Vec gmm_log_density_rows(const GmmSpec& spec, const MatRef& x) {
  int m = spec.component_count;
  double d = static_cast<double>(x.cols());
  Vec x_sq = x.array().square().rowwise().sum();
  Vec mu_sq = spec.means.array().square().rowwise().sum();
  Mat cross = x * spec.means.transpose();  // K x M
  Vec out(x.rows());
  double shift = -0.5 * d * kLog2Pi - std::log(static_cast<double>(m));
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    Vec comps = (-0.5 * (x_sq[k] + mu_sq.array() - 2.0 * cross.row(k).transpose().array()))
                    .matrix();
    out[k] = log_sum_exp(comps) + shift;
  }
  return out;
}

}  // namespace

TargetSpec make_gmm(int dim, int component_count, std::uint64_t seed) {
  auto spec = std::make_shared<GmmSpec>(gmm_spec(dim, component_count, seed));
  TargetSpec t;
  t.name = "gmm40";
  t.dim = dim;
  t.log_r = [spec](const VecRef& x) { return gmm_log_density(*spec, x); };
  t.log_r_rows = [spec, dim](const MatRef& x) {
    if (x.cols() != dim) throw std::invalid_argument("gmm log_r_rows: dim mismatch");
    return gmm_log_density_rows(*spec, x);
  };
  t.grad_log_r = [spec](const VecRef& x) { return gmm_grad_log_density(*spec, x); };
  t.exact_sampler = [spec, dim](Rng& rng, int count) {
    Mat out(count, dim);
    for (int k = 0; k < count; ++k) {
      int c = static_cast<int>(rng.uniform_index(spec->component_count));
      out.row(k) = spec->means.row(c) + rng.normal_vec(dim).transpose();
    }
    return out;
  };
  t.exact_log_z = 0.0;  // normalised mixture by construction
  return t;
}

TargetSpec make_funnel() {
  TargetSpec t;
  t.name = "funnel";
  t.dim = 10;
  t.log_r = [](const VecRef& x) { return funnel_log_density(x); };
  t.grad_log_r = [](const VecRef& x) { return funnel_grad_log_density(x); };
  t.exact_sampler = [](Rng& rng, int count) {
    Mat out(count, 10);
    for (int k = 0; k < count; ++k) {
      double x1 = 3.0 * rng.normal();
      out(k, 0) = x1;
      double s = std::exp(0.5 * x1);
      for (int j = 1; j < 10; ++j) out(k, j) = s * rng.normal();
    }
    return out;
  };
  t.exact_log_z = 0.0;  // product of normalised conditionals
  return t;
}

TargetSpec make_manywell(int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("make_manywell: dim must be even");
  static const double log_m = manywell_log_envelope();

  // log Z per pair = log( int exp(-a^4+6a^2+a/2) da ) + 0.5*log(2*pi),
  // the 1-d integral evaluated by Simpson quadrature on [-5,5].
  static const double pair_log_z = [] {
    const int n = 20000;
    const double lo = -5.0, hi = 5.0;
    const double h = (hi - lo) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      double a = lo + h * i;
      double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      s += w * std::exp(-a * a * a * a + 6.0 * a * a + 0.5 * a);
    }
    return std::log(s * h / 3.0) + 0.5 * kLog2Pi;
  }();

  TargetSpec t;
  t.name = "manywell";
  t.dim = dim;
  t.log_r = [](const VecRef& x) { return manywell_log_density(x); };
  t.grad_log_r = [](const VecRef& x) { return manywell_grad_log_density(x); };
  t.exact_sampler = [dim](Rng& rng, int count) {
    const double sp = 3.0;
    Mat out(count, dim);
    for (int k = 0; k < count; ++k) {
      for (int i = 0; i < dim; i += 2) {
        double a;
        for (;;) {
          a = sp * rng.normal();
          double log_f = -a * a * a * a + 6.0 * a * a + 0.5 * a;
          double log_g = gaussian_logpdf(a, 0.0, sp * sp);
          if (std::log(rng.uniform()) < log_f - log_g - log_m) break;
        }
        out(k, i) = a;
        out(k, i + 1) = rng.normal();
      }
    }
    return out;
  };
  t.exact_log_z = pair_log_z * (dim / 2);
  return t;
}

TargetSpec make_planted_gauss(double z) {
  TargetSpec t;
  t.name = "planted_gauss";
  t.dim = 1;
  double log_z = std::log(z);
  t.log_r = [log_z](const VecRef& x) { return log_z + gaussian_logpdf(x[0], 0.0, 1.0); };
  t.grad_log_r = [](const VecRef& x) {
    Vec g(1);
    g[0] = -x[0];
    return g;
  };
  t.exact_sampler = [](Rng& rng, int count) {
    Mat out(count, 1);
    for (int k = 0; k < count; ++k) out(k, 0) = rng.normal();
    return out;
  };
  t.exact_log_z = log_z;
  return t;
}

TargetSpec make_target(const std::string& name, int dim, std::uint64_t seed) {
  if (name == "gmm40") return make_gmm(dim, 40, seed);
  if (name == "funnel") return make_funnel();
  if (name == "manywell") return make_manywell(dim);
  if (name == "planted_gauss") return make_planted_gauss();
  throw std::invalid_argument("make_target: unknown target '" + name + "'");
}

Mat exact_sample(const TargetSpec& spec, Rng& rng, int count) {
  if (!spec.has_sampler())
    throw std::runtime_error("exact_sample: target '" + spec.name + "' has no exact sampler");
  return spec.exact_sampler(rng, count);
}

}  // namespace rsmc::targets
