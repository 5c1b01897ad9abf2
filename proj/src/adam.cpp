#include "rsmc/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rsmc {

AdamState adam_init(const ParamGroup& params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.reserve(params.mats.size());
  s.v.reserve(params.mats.size());
  for (const Mat* p : params.mats) {
    s.m.push_back(Mat::Zero(p->rows(), p->cols()));
    s.v.push_back(Mat::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(AdamState& state, const ParamGroup& params, const std::vector<Mat>& grads) {
  if (grads.size() != params.mats.size())
    throw std::invalid_argument("adam_step: gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != params.mats[i]->rows() || grads[i].cols() != params.mats[i]->cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + params.names[i]);
    if (!grads[i].allFinite())
      throw std::runtime_error("adam_step: non-finite gradient for " + params.names[i]);
  }
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i].array() + (1.0 - state.beta2) * grads[i].array().square();
    Mat m_hat = state.m[i] / bc1;
    Mat v_hat = state.v[i] / bc2;
    params.mats[i]->array() -= state.lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
  }
}

bool clip_global_norm(std::vector<Mat>& grads, double max_norm) {
  double sq = 0.0;
  for (const Mat& g : grads) sq += g.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return false;
  double scale = max_norm / norm;
  for (Mat& g : grads) g *= scale;
  return true;
}

}  // namespace rsmc
