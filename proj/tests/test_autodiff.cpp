#include <doctest.h>

#include <cmath>

#include "rsmc/adam.hpp"
#include "rsmc/mlp.hpp"
#include "rsmc/rng.hpp"
#include "rsmc/tape.hpp"
#include "test_helpers.hpp"

using namespace rsmc;
using rsmc::testing::central_diff;
using rsmc::testing::rel_err;

TEST_CASE("identity and square gradients") {
  ad::Tape tape;
  Mat x(1, 1);
  x << 3.0;
  int leaf = tape.leaf(x);
  tape.backward(tape.sum(leaf));
  CHECK(tape.grad(leaf)(0, 0) == 1.0);

  ad::Tape tape2;
  int leaf2 = tape2.leaf(x);
  tape2.backward(tape2.sum(tape2.square(leaf2)));
  CHECK(tape2.grad(leaf2)(0, 0) == 6.0);
}

TEST_CASE("diamond graph accumulates without revisiting") {
  // y = x^2 + x^2: each node contributes once, grad = 4x
  ad::Tape tape;
  Mat x(1, 1);
  x << 2.5;
  int leaf = tape.leaf(x);
  int sq = tape.square(leaf);
  tape.backward(tape.sum(tape.add(sq, sq)));
  CHECK(tape.grad(leaf)(0, 0) == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("backward is linear in the output") {
  // grad(2 f + 4 g) equals 2 grad f + 4 grad g bit-for-bit (power-of-two scales)
  Mat x(3, 1);
  x << 0.3, -1.2, 2.0;

  ad::Tape tf;
  int lf = tf.leaf(x);
  tf.backward(tf.sum(tf.square(lf)));
  ad::Tape tg;
  int lg = tg.leaf(x);
  tg.backward(tg.sum(lg));

  ad::Tape tc;
  int lc = tc.leaf(x);
  int combined = tc.add(tc.affine(tc.sum(tc.square(lc)), 2.0, 0.0),
                        tc.affine(tc.sum(lc), 4.0, 0.0));
  tc.backward(combined);

  Mat expect = 2.0 * tf.grad(lf) + 4.0 * tg.grad(lg);
  CHECK((tc.grad(lc) - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward is deterministic") {
  Rng rng(9);
  Mat x = rng.normal_mat(4, 3);
  Mat w = rng.normal_mat(3, 2);
  auto run = [&]() {
    ad::Tape tape;
    int lw = tape.leaf(w);
    int out = tape.sum(tape.gelu(tape.matmul(tape.constant(x), lw)));
    tape.backward(out);
    return Mat(tape.grad(lw));
  };
  Mat g1 = run(), g2 = run();
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp zero weights returns the output bias") {
  Mlp m = mlp_init(3, 8, 2, Rng(0));
  m.w1.setZero();
  m.w2.setZero();
  m.w3.setZero();
  m.b3 << 1.5, -2.5;
  Mat x = Rng(1).normal_mat(5, 3);
  Mat y = mlp_forward(m, x);
  for (int r = 0; r < 5; ++r) {
    CHECK(y(r, 0) == doctest::Approx(1.5));
    CHECK(y(r, 1) == doctest::Approx(-2.5));
  }
}

TEST_CASE("pass-through construction in the linear regime") {
  // gelu(x) ~ x/2 near zero, so I -> I -> 4*I approximates the identity
  int d = 3;
  Mlp m;
  m.w1 = Mat::Identity(d, d);
  m.b1 = Mat::Zero(1, d);
  m.w2 = Mat::Identity(d, d);
  m.b2 = Mat::Zero(1, d);
  m.w3 = 4.0 * Mat::Identity(d, d);
  m.b3 = Mat::Zero(1, d);
  Mat x = 1e-3 * Rng(2).normal_mat(4, d);
  Mat y = mlp_forward(m, x);
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("mlp scalar-head gradient matches finite differences") {
  Mlp m = mlp_init(3, 4, 1, Rng(3), 1.0);
  Mat x = Rng(4).normal_mat(6, 3);

  auto loss = [&]() {
    ad::Tape tape;
    MlpLeaves ids = mlp_register(tape, m);
    return tape.scalar(tape.sum(mlp_forward(tape, ids, tape.constant(x))));
  };

  ad::Tape tape;
  MlpLeaves ids = mlp_register(tape, m);
  tape.backward(tape.sum(mlp_forward(tape, ids, tape.constant(x))));
  MlpGrads g = mlp_grads(tape, ids);

  const double h = 1e-6;
  Mat* params[] = {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3};
  const Mat* grads[] = {&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, &g.b3};
  double worst = 0.0;
  for (int p = 0; p < 6; ++p) {
    for (Eigen::Index r = 0; r < params[p]->rows(); ++r)
      for (Eigen::Index c = 0; c < params[p]->cols(); ++c) {
        double fd = central_diff(*params[p], r, c, loss, h);
        worst = std::max(worst, rel_err((*grads[p])(r, c), fd));
      }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("elementwise and reduction ops match finite differences") {
  Rng rng(11);
  Mat a = rng.normal_mat(5, 3);
  auto loss = [&]() {
    ad::Tape tape;
    int la = tape.leaf(a);
    int mix = tape.mul(tape.softplus(la), tape.gelu(tape.affine(la, 0.7, 0.1)));
    int v = tape.row_sum_sq(tape.add_const(mix, Mat::Constant(5, 3, 0.2)));
    return tape.scalar(tape.affine(tape.sum(tape.square(v)), 0.1, 0.0));
  };
  ad::Tape tape;
  int la = tape.leaf(a);
  int mix = tape.mul(tape.softplus(la), tape.gelu(tape.affine(la, 0.7, 0.1)));
  int v = tape.row_sum_sq(tape.add_const(mix, Mat::Constant(5, 3, 0.2)));
  tape.backward(tape.affine(tape.sum(tape.square(v)), 0.1, 0.0));

  double worst = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      worst = std::max(worst, rel_err(tape.grad(la)(r, c), central_diff(a, r, c, loss, 1e-6)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("scalar broadcast, cumsum and selection ops match finite differences") {
  Rng rng(12);
  Mat a = rng.normal_mat(4, 1);
  Mat logits = rng.normal_mat(4, 6);
  std::vector<std::array<int, 2>> sel = {{0, 3}, {1, -1}, {5, 2}, {4, -1}};

  auto build = [&](ad::Tape& tape, int& la, int& ll) {
    la = tape.leaf(a);
    ll = tape.leaf(logits);
    int cum = tape.cumsum(tape.softplus(la));
    int total = tape.entry(cum, 3, 0);
    int beta = tape.div_scalar(cum, total);
    int b1 = tape.entry(beta, 1, 0);
    int flows = tape.add_const(tape.scalar_times_const(b1, Mat::Constant(4, 1, 2.0)),
                               Mat::Constant(4, 1, -0.3));
    int lp = tape.sub(tape.sel_log_sum_exp(ll, sel), tape.row_log_sum_exp(ll));
    int mixed = tape.add(flows, lp);
    int centered = tape.sub_scalar(mixed, tape.affine(tape.sum(mixed), 0.25, 0.0));
    return tape.sum(tape.square(centered));
  };

  ad::Tape tape;
  int la, ll;
  tape.backward(build(tape, la, ll));

  auto loss = [&]() {
    ad::Tape t2;
    int x, y;
    return t2.scalar(build(t2, x, y));
  };
  double worst = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    worst = std::max(worst, rel_err(tape.grad(la)(r, 0), central_diff(a, r, 0, loss, 1e-6)));
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      worst =
          std::max(worst, rel_err(tape.grad(ll)(r, c), central_diff(logits, r, c, loss, 1e-6)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("non-scalar backward is rejected") {
  ad::Tape tape;
  int leaf = tape.leaf(Mat::Zero(2, 2));
  CHECK_THROWS(tape.backward(leaf));
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Mat p = Rng(5).normal_mat(3, 2);
  Mat before = p;
  ParamGroup g;
  g.add("p", &p);
  AdamState s = adam_init(g, 1e-2);
  adam_step(s, g, {Mat::Zero(3, 2)});
  CHECK((p - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.t == 1);
}

TEST_CASE("adam first step moves by about lr in the gradient sign") {
  Mat p = Mat::Zero(2, 1);
  ParamGroup g;
  g.add("p", &p);
  AdamState s = adam_init(g, 1e-3);
  Mat grad(2, 1);
  grad << 0.7, -2.0;
  adam_step(s, g, {grad});
  CHECK(p(0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(p(1, 0) == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam decreases a quadratic monotonically") {
  Mat x(1, 1);
  x << 4.0;
  ParamGroup g;
  g.add("x", &x);
  AdamState s = adam_init(g, 1e-1);
  double prev = 0.5 * x(0, 0) * x(0, 0);
  for (int i = 0; i < 10; ++i) {
    Mat grad = x;  // d/dx of x^2/2
    adam_step(s, g, {grad});
    double cur = 0.5 * x(0, 0) * x(0, 0);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("adam rejects non-finite gradients by name") {
  Mat p = Mat::Zero(1, 1);
  ParamGroup g;
  g.add("weights.w1", &p);
  AdamState s = adam_init(g, 1e-3);
  Mat bad(1, 1);
  bad << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(s, g, {bad}),
                       "adam_step: non-finite gradient for weights.w1", std::runtime_error);
}

TEST_CASE("global norm clip") {
  std::vector<Mat> grads = {Mat::Constant(2, 2, 3.0), Mat::Constant(1, 2, 4.0)};
  double norm = std::sqrt(4 * 9.0 + 2 * 16.0);
  CHECK(clip_global_norm(grads, norm + 1.0) == false);
  CHECK(clip_global_norm(grads, 1.0) == true);
  double sq = 0.0;
  for (const Mat& g : grads) sq += g.squaredNorm();
  CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mlp parameter count matches the closed form") {
  Mlp m = mlp_init(5, 8, 3, Rng(0));
  CHECK(m.param_count() == (5 + 1) * 8 + (8 + 1) * 8 + (8 + 1) * 3);
}
