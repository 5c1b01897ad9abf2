#include "rsmc/mlp.hpp"

#include <cmath>

#include "rsmc/math.hpp"

namespace rsmc {

namespace {

Mat uniform_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = (2.0 * rng.uniform() - 1.0) * scale;
  return m;
}

}  // namespace

int Mlp::param_count() const {
  return static_cast<int>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size());
}

Mlp mlp_init(int in, int hidden, int out, Rng rng, double final_scale) {
  Mlp m;
  double s1 = 1.0 / std::sqrt(static_cast<double>(in));
  double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  m.w1 = uniform_mat(rng, in, hidden, s1);
  m.b1 = Mat::Zero(1, hidden);
  m.w2 = uniform_mat(rng, hidden, hidden, s2);
  m.b2 = Mat::Zero(1, hidden);
  m.w3 = uniform_mat(rng, hidden, out, s2 * final_scale);
  m.b3 = Mat::Zero(1, out);
  return m;
}

Mat mlp_forward(const Mlp& m, const Mat& x) {
  Mat h1 = gelu_mat((x * m.w1).rowwise() + m.b1.row(0));
  Mat h2 = gelu_mat((h1 * m.w2).rowwise() + m.b2.row(0));
  return (h2 * m.w3).rowwise() + m.b3.row(0);
}

MlpLeaves mlp_register(ad::Tape& tape, const Mlp& m) {
  MlpLeaves ids;
  ids.w1 = tape.leaf(m.w1);
  ids.b1 = tape.leaf(m.b1);
  ids.w2 = tape.leaf(m.w2);
  ids.b2 = tape.leaf(m.b2);
  ids.w3 = tape.leaf(m.w3);
  ids.b3 = tape.leaf(m.b3);
  return ids;
}

int mlp_forward(ad::Tape& tape, const MlpLeaves& ids, int x_node) {
  int h1 = tape.gelu(tape.add_row(tape.matmul(x_node, ids.w1), ids.b1));
  int h2 = tape.gelu(tape.add_row(tape.matmul(h1, ids.w2), ids.b2));
  return tape.add_row(tape.matmul(h2, ids.w3), ids.b3);
}

namespace {
Mat grad_or_zero(const ad::Tape& tape, int id) {
  const Mat& g = tape.grad(id);
  if (g.size() == 0) return Mat::Zero(tape.value(id).rows(), tape.value(id).cols());
  return g;
}
}  // namespace

MlpGrads mlp_grads(const ad::Tape& tape, const MlpLeaves& ids) {
  MlpGrads g;
  g.w1 = grad_or_zero(tape, ids.w1);
  g.b1 = grad_or_zero(tape, ids.b1);
  g.w2 = grad_or_zero(tape, ids.w2);
  g.b2 = grad_or_zero(tape, ids.b2);
  g.w3 = grad_or_zero(tape, ids.w3);
  g.b3 = grad_or_zero(tape, ids.b3);
  return g;
}

}  // namespace rsmc
