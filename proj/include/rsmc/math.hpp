#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "rsmc/types.hpp"

namespace rsmc {

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum_i exp(v_i)), max-shifted. -inf entries contribute zero mass.
inline double log_sum_exp(const VecRef& v) {
  if (v.size() == 0) return kNegInf;
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a stray +inf/NaN propagates)
  double s = (v.array() - m).exp().sum();
  return m + std::log(s);
}

inline double log_mean_exp(const VecRef& v) {
  return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

// In-place self-normalisation: shifts so that log_sum_exp(v) == 0.
inline void log_normalise(Vec& v) {
  double lse = log_sum_exp(v);
  if (!std::isfinite(lse)) throw std::runtime_error("log_normalise: degenerate weights");
  v.array() -= lse;
}

inline double gaussian_logpdf(double x, double mean, double var) {
  double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

// Isotropic N(mean, var*I) evaluated at x.
inline double gaussian_logpdf(const VecRef& x, const VecRef& mean, double var) {
  double q = (x - mean).squaredNorm();
  double d = static_cast<double>(x.size());
  return -0.5 * (d * (kLog2Pi + std::log(var)) + q / var);
}

// Row-wise isotropic Gaussian log-density: rows of x against rows of mean.
inline Vec gaussian_logpdf_rows(const MatRef& x, const MatRef& mean, double var) {
  double d = static_cast<double>(x.cols());
  Vec q = (x - mean).array().square().rowwise().sum();
  return (-0.5 * (d * (kLog2Pi + std::log(var)) + q.array() / var)).matrix();
}

inline double softplus(double x) {
  // log(1+e^x) without overflow for large x
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Smooth C1 activation: the sigmoid form of the Gaussian-error linear unit.
// gelu'(x) = s + c*x*s*(1-s) with s = sigmoid(c*x), so the backward pass can
// reuse the forward sigmoid without extra transcendentals. The branchless
// 1/(1+exp(-cx)) form is safe in IEEE arithmetic: the denominator saturates
// to +inf for very negative x and the quotient to 0.
inline constexpr double kGeluSlope = 1.702;

inline double gelu(double x) {
  double s = 1.0 / (1.0 + std::exp(-kGeluSlope * x));
  return x * s;
}

// s = sigmoid(c*x) elementwise, vectorised.
inline Mat gelu_sigmoid(const Mat& x) {
  return ((-kGeluSlope * x.array()).exp() + 1.0).inverse().matrix();
}

inline Mat gelu_mat(const Mat& x) { return x.cwiseProduct(gelu_sigmoid(x)); }

}  // namespace rsmc
