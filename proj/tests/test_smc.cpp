#include <doctest.h>

#include <cmath>

#include "rsmc/math.hpp"
#include "rsmc/smc.hpp"
#include "test_helpers.hpp"

using namespace rsmc;
using namespace rsmc::smc;

namespace {

process::PolicyParams zero_policy(int dim) {
  auto p = process::policy_init(dim, 8, Rng(0));
  p.drift.w1.setZero();
  p.drift.w2.setZero();
  p.drift.w3.setZero();
  p.drift.b3.setZero();
  return p;
}

flows::FlowParams geometric_flow(int dim, int n_steps) {
  auto f = flows::flow_init(dim, 8, n_steps, Rng(1));
  f.correction.w1.setZero();
  f.correction.w2.setZero();
  f.correction.w3.setZero();
  f.correction.b3.setZero();
  return f;  // equal phi: linear beta, zero correction -> geometric annealing
}

}  // namespace

TEST_CASE("ess values") {
  Vec equal = Vec::Zero(4);
  CHECK(ess(equal) == doctest::Approx(4.0).epsilon(1e-12));

  Vec w(3);
  w << std::log(2.0), 0.0, 0.0;
  CHECK(ess(w) == doctest::Approx(16.0 / 6.0).epsilon(1e-12));

  Vec dom(4);
  dom << 30.0, 0.0, 0.0, 0.0;
  CHECK(std::abs(ess(dom) - 1.0) < 1e-10);

  Vec with_inf(3);
  with_inf << kNegInf, 0.0, 0.0;  // flagged particles carry no mass
  CHECK(ess(with_inf) == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS(ess(Vec::Constant(3, kNegInf)));
}

TEST_CASE("ess equals K only for equal weights") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Vec w = rng.normal_vec(16);
    double e = ess(w);
    CHECK(e >= 1.0);
    CHECK(e <= 16.0 + 1e-12);
    if ((w.array() - w[0]).abs().maxCoeff() > 1e-6) CHECK(e < 16.0 - 1e-9);
  }
}

TEST_CASE("adaptive tempering satisfies its contract") {
  SUBCASE("guard branch when the ess is already high") {
    Vec w(4);
    w << 0.1, 0.0, -0.1, 0.05;
    CHECK(adaptive_iw_tempering(w, 0.5) == 1.0);
  }

  SUBCASE("lambda zero flattens any weights") {
    Rng rng(3);
    Vec w = 20.0 * rng.normal_vec(8);
    CHECK(ess((0.0 * w.array()).matrix()) == doctest::Approx(8.0));
  }

  SUBCASE("grid-search oracle agreement") {
    Vec w(4);
    w << 10.0, 0.0, 0.0, 0.0;
    double gamma = 0.9;
    double lambda = adaptive_iw_tempering(w, gamma);
    CHECK(lambda < 1.0);
    CHECK(ess((lambda * w.array()).matrix()) >= 0.9 * 4.0);

    double grid = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      double l = i * 1e-4;
      if (ess((l * w.array()).matrix()) >= gamma * 4.0) grid = l;
    }
    CHECK(std::abs(lambda - grid) <= 2e-4);
  }

  SUBCASE("random weight contract") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      Vec w = 5.0 * rng.normal_vec(32);
      for (double gamma : {0.05, 0.5, 0.9}) {
        double lambda = adaptive_iw_tempering(w, gamma);
        CHECK(ess((lambda * w.array()).matrix()) >= gamma * 32.0 - 1e-9);
      }
    }
  }

  SUBCASE("gamma out of range") { CHECK_THROWS(adaptive_iw_tempering(Vec::Zero(4), 1.5)); }
}

TEST_CASE("tempered resampling limit cases") {
  Rng rng(5);
  Vec w(6);
  w << 3.0, 1.0, 0.0, -1.0, 2.0, 0.5;

  SUBCASE("gamma 0 keeps lambda 1 and uniform residuals") {
    auto r = tempered_resample(w, 0.0, rng);
    CHECK(r.lambda == 1.0);
    for (Eigen::Index k = 0; k < r.log_w_residual.size(); ++k)
      CHECK(r.log_w_residual[k] == doctest::Approx(-std::log(6.0)).epsilon(1e-12));
  }

  SUBCASE("gamma 1 pushes lambda to 0: residuals track the originals") {
    auto r = tempered_resample(w, 1.0, rng);
    CHECK(r.lambda <= 2e-6);
    Vec selected(6);
    for (int k = 0; k < 6; ++k) selected[k] = (1.0 - r.lambda) * w[r.indices[k]];
    log_normalise(selected);
    CHECK((selected - r.log_w_residual).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("count preserved and residuals normalised") {
    auto r = tempered_resample(w, 0.5, rng);
    CHECK(static_cast<int>(r.indices.size()) == 6);
    CHECK(std::abs(log_sum_exp(r.log_w_residual)) <= 1e-9);
  }
}

TEST_CASE("flagged particles are never resampled") {
  Rng rng(6);
  Vec w(4);
  w << 0.0, kNegInf, 1.0, 0.5;
  for (int trial = 0; trial < 200; ++trial) {
    auto r = tempered_resample(w, 0.0, rng);
    for (int idx : r.indices) CHECK(idx != 1);
  }
}

TEST_CASE("tempered resampling is unbiased with the explicit normaliser") {
  // E[(1/K) sum_k w_{a(k)}^{1-lambda} f(x_{a(k)}) * sum_j w_j^lambda] = sum_i w_i f_i
  Vec log_w(3);
  log_w << std::log(0.2), std::log(1.4), std::log(0.9);
  Vec f(3);
  f << 2.0, -1.0, 0.5;
  double gamma = 0.8;
  double truth = 0.0;
  for (int i = 0; i < 3; ++i) truth += std::exp(log_w[i]) * f[i];

  Rng rng(7);
  const int reps = 100000;
  std::vector<double> est(reps);
  for (int r = 0; r < reps; ++r) {
    auto rr = tempered_resample(log_w, gamma, rng);
    double norm = 0.0;
    for (int i = 0; i < 3; ++i) norm += std::exp(rr.lambda * log_w[i]);
    double acc = 0.0;
    for (int k = 0; k < 3; ++k)
      acc += std::exp((1.0 - rr.lambda) * log_w[rr.indices[k]]) * f[rr.indices[k]];
    est[r] = acc / 3.0 * norm;
  }
  auto ms = rsmc::testing::mean_se(est);
  CHECK(std::abs(ms.mean - truth) < 3.0 * ms.se);
}

TEST_CASE("incremental weight telescoping reproduces the AIS weight") {
  auto sched = process::make_schedule(6, 1.4, 2.5);
  auto target = targets::make_planted_gauss(7.0);
  auto policy = process::policy_init(1, 8, Rng(8));
  auto flow = flows::flow_init(1, 8, 6, Rng(9));
  flow.phi = 0.4 * Rng(10).normal_mat(6, 1);

  auto batch = process::rollout_forward(policy, sched, target, 16, Rng(11));
  Vec ais = batch.ais_log_weight();
  for (int k = 0; k < 16; ++k) {
    process::Trajectory traj = batch.extract(k);
    double acc = 0.0;
    for (int i = 0; i < 6; ++i) acc += smc_weight_update(flow, target, sched, traj, i);
    CHECK(std::abs(acc - ais[k]) <= 1e-9);
  }
}

TEST_CASE("final incremental weight carries the terminal reward exactly") {
  auto sched = process::make_schedule(3, 1.0, 2.5);
  auto target = targets::make_planted_gauss(7.0);
  auto policy = zero_policy(1);
  auto flow = geometric_flow(1, 3);
  auto batch = process::rollout_forward(policy, sched, target, 4, Rng(12));
  for (int k = 0; k < 4; ++k) {
    process::Trajectory traj = batch.extract(k);
    double wt = smc_weight_update(flow, target, sched, traj, 2);
    double f2 = flows::flow_log_value(flow, target, sched, traj.states.row(2).transpose(), 2);
    double expect = traj.log_r + traj.log_back[2] - f2 - traj.log_fwd[2];
    CHECK(wt == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("smc with kappa=0 equals AIS particle by particle") {
  auto sched = process::make_schedule(8, 1.3, 2.5);
  auto target = targets::make_planted_gauss(7.0);
  Rng shared(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto policy = process::policy_init(1, 8, Rng(100 + trial));
    auto flow = flows::flow_init(1, 8, 8, Rng(200 + trial));
    flow.phi = Rng(300 + trial).normal_mat(8, 1);

    Rng run = shared.substream(trial);
    auto res = smc_sampling(target, policy, flow, sched, 32, 2, 0.0, 0.05, run);
    auto ais = ais_sampling(target, policy, sched, 32, run);

    // identical substreams: bit-level trajectory equality
    CHECK((res.terminals - ais.batch.states.back()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(res.resample_steps.empty());
    CHECK((res.log_w_bar - ais.log_w).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("single-particle smc degenerates to one AIS weight") {
  auto sched = process::make_schedule(4, 1.2, 2.5);
  auto target = targets::make_planted_gauss(7.0);
  auto policy = process::policy_init(1, 8, Rng(14));
  auto flow = geometric_flow(1, 4);
  auto res = smc_sampling(target, policy, flow, sched, 1, 2, 0.5, 0.0, Rng(15));
  auto ais = ais_sampling(target, policy, sched, 1, Rng(15));
  CHECK(std::abs(res.log_z_hat - ais.log_w[0]) <= 1e-9);
}

TEST_CASE("segment records match the internal normaliser accumulation") {
  auto sched = process::make_schedule(8, 1.5, 2.5);
  auto target = targets::make_planted_gauss(7.0);
  auto policy = process::policy_init(1, 8, Rng(16));
  auto flow = geometric_flow(1, 8);
  auto res = smc_sampling(target, policy, flow, sched, 64, 2, 0.9, 0.1, Rng(17));
  double acc = 0.0;
  for (const auto& seg : res.segments)
    acc += log_sum_exp((seg.log_w_start + seg.log_w_increment).eval());
  CHECK(std::abs(acc - res.log_z_hat) <= 1e-9);
}

TEST_CASE("time-reversal construction gives constant AIS weights") {
  // zero drift with sigma-matched target: every log-weight equals log Z
  auto sched = process::make_schedule(6, 1.0, 2.5);
  auto target = targets::make_planted_gauss(7.0);
  auto policy = zero_policy(1);
  auto res = ais_sampling(target, policy, sched, 256, Rng(18));
  for (int k = 0; k < 256; ++k) CHECK(std::abs(res.log_w[k] - std::log(7.0)) <= 1e-6);

  Vec norm = res.log_w;
  log_normalise(norm);
  CHECK(std::abs(norm.array().exp().sum() - 1.0) <= 1e-9);
}

TEST_CASE("log-mean-exp of AIS weights lower-bounds log Z on average") {
  auto sched = process::make_schedule(6, 1.5, 2.5);  // mismatched scale: real spread
  auto target = targets::make_planted_gauss(7.0);
  auto policy = zero_policy(1);
  std::vector<double> est(100);
  Rng root(19);
  for (int r = 0; r < 100; ++r) {
    auto res = ais_sampling(target, policy, sched, 64, root.substream(r));
    est[r] = log_mean_exp(res.log_w);
  }
  auto ms = rsmc::testing::mean_se(est);
  CHECK(ms.mean <= std::log(7.0) + 3.0 * ms.se);
}

TEST_CASE("resampling keeps particle count and normalisation inside smc") {
  auto sched = process::make_schedule(8, 2.0, 2.5);
  auto target = targets::make_gmm(2, 4, 2);
  auto policy = zero_policy(2);
  auto flow = geometric_flow(2, 8);
  // kappa = 1 forces resampling at every interior boundary
  auto res = smc_sampling(target, policy, flow, sched, 128, 2, 1.0, 0.1, Rng(20));
  CHECK(res.terminals.rows() == 128);
  CHECK(std::abs(log_sum_exp(res.log_w)) <= 1e-9);
  CHECK(res.resample_steps.size() == 3);  // boundaries 2,4,6 but never the final one
  CHECK(res.ess_segments.size() == 4);
}

TEST_CASE("systematic resampling variant also preserves the contract") {
  Rng rng(22);
  Vec w(5);
  w << 1.0, 0.0, -1.0, 0.5, 0.2;
  auto r = tempered_resample(w, 0.0, rng, /*systematic=*/true);
  CHECK(static_cast<int>(r.indices.size()) == 5);
  CHECK(std::abs(log_sum_exp(r.log_w_residual)) <= 1e-9);
}

TEST_CASE("smc_sampling validates its preconditions") {
  auto sched = process::make_schedule(6, 1.0, 2.5);
  auto target = targets::make_planted_gauss();
  auto policy = zero_policy(1);
  auto flow = geometric_flow(1, 6);
  CHECK_THROWS(smc_sampling(target, policy, flow, sched, 8, 4, 0.2, 0.05, Rng(21)));
  CHECK_THROWS(smc_sampling(target, policy, flow, sched, 8, 2, 1.5, 0.05, Rng(21)));
}
