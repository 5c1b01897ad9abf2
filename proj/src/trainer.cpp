#include "rsmc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::train {

namespace {

constexpr std::uint64_t kEpochTag = 0x45;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Algo algo_from_string(const std::string& s) {
  if (s == "iwt") return Algo::Iwt;
  if (s == "smc") return Algo::Smc;
  if (s == "replay") return Algo::Replay;
  if (s == "combined") return Algo::Combined;
  throw std::invalid_argument("unknown algorithm '" + s + "' (iwt|smc|replay|combined)");
}

std::string algo_to_string(Algo a) {
  switch (a) {
    case Algo::Iwt: return "iwt";
    case Algo::Smc: return "smc";
    case Algo::Replay: return "replay";
    case Algo::Combined: return "combined";
  }
  return "iwt";
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochRecord>& records) {
  out << "epoch,mode,loss_tb,loss_subtb,lambda_star,ess_mean,log_z_hat,log_z_theta,wall_ms\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.mode << ',' << fmt(r.loss_tb) << ',' << fmt(r.loss_subtb) << ','
        << fmt(r.lambda_star) << ',' << fmt(r.ess_mean) << ',' << fmt(r.log_z_hat) << ','
        << fmt(r.log_z_theta) << ",0\n";
  }
}

Trainer::Trainer(const io::TrainConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), buffer_(static_cast<std::size_t>(cfg.buffer_capacity)) {
  io::validate(cfg_);
  Rng init(Rng::key(seed_, 0x1717));

  if (cfg_.is_discrete()) {
    proc_ = discrete::make_prepend_append(cfg_.vocab, cfg_.n_steps);
    dreward_ = discrete::discrete_reward(cfg_.target);
    dpolicy_ = discrete::discrete_policy_init(proc_, cfg_.hidden_policy, init.substream(1));
    g_policy_.add("policy.w1", &dpolicy_.net.w1);
    g_policy_.add("policy.b1", &dpolicy_.net.b1);
    g_policy_.add("policy.w2", &dpolicy_.net.w2);
    g_policy_.add("policy.b2", &dpolicy_.net.b2);
    g_policy_.add("policy.w3", &dpolicy_.net.w3);
    g_policy_.add("policy.b3", &dpolicy_.net.b3);
    g_logz_.add("logz", &dpolicy_.log_z);
  } else {
    target_ = targets::make_target(cfg_.target, cfg_.dim, cfg_.target_seed);
    sched_ = process::make_schedule(cfg_.n_steps, cfg_.sigma, cfg_.ou_rate, cfg_.ou_min_frac);
    policy_ = process::policy_init(target_.dim, cfg_.hidden_policy, init.substream(1),
                                   cfg_.langevin, cfg_.grad_clip);
    flow_ = flows::flow_init(target_.dim, cfg_.hidden_flow, cfg_.n_steps, init.substream(2),
                             cfg_.beta_schedule == "learnt", cfg_.flow_correction);
    g_policy_.add("policy.w1", &policy_.drift.w1);
    g_policy_.add("policy.b1", &policy_.drift.b1);
    g_policy_.add("policy.w2", &policy_.drift.w2);
    g_policy_.add("policy.b2", &policy_.drift.b2);
    g_policy_.add("policy.w3", &policy_.drift.w3);
    g_policy_.add("policy.b3", &policy_.drift.b3);
    if (policy_.langevin) {
      g_policy_.add("policy.nn2.w1", &policy_.langevin_scale->w1);
      g_policy_.add("policy.nn2.b1", &policy_.langevin_scale->b1);
      g_policy_.add("policy.nn2.w2", &policy_.langevin_scale->w2);
      g_policy_.add("policy.nn2.b2", &policy_.langevin_scale->b2);
      g_policy_.add("policy.nn2.w3", &policy_.langevin_scale->w3);
      g_policy_.add("policy.nn2.b3", &policy_.langevin_scale->b3);
    }
    g_logz_.add("logz", &policy_.log_z);
    if (flow_.use_correction) {
      g_flow_.add("flow.w1", &flow_.correction.w1);
      g_flow_.add("flow.b1", &flow_.correction.b1);
      g_flow_.add("flow.w2", &flow_.correction.w2);
      g_flow_.add("flow.b2", &flow_.correction.b2);
      g_flow_.add("flow.w3", &flow_.correction.w3);
      g_flow_.add("flow.b3", &flow_.correction.b3);
    }
    if (flow_.learn_schedule) g_beta_.add("beta.phi", &flow_.phi);
  }

  adam_policy_ = adam_init(g_policy_, cfg_.lr_policy);
  adam_logz_ = adam_init(g_logz_, cfg_.lr_logz);
  adam_flow_ = adam_init(g_flow_, cfg_.lr_flow);
  adam_beta_ = adam_init(g_beta_, cfg_.lr_beta);
}

double Trainer::log_z_theta() const {
  return cfg_.is_discrete() ? dpolicy_.log_z(0, 0) : policy_.log_z(0, 0);
}

Trainer::ThetaUpdate Trainer::update_theta(const process::TrajectoryBatch& batch,
                                           const Vec& weights) {
  ad::Tape tape;
  process::PolicyLeaves leaves = process::policy_register(tape, policy_);
  objectives::ScoredBatch sb;
  sb.step_log_fwd = process::score_forward_on_tape(tape, leaves, policy_, sched_,
                                                   cfg_.langevin ? &target_ : nullptr, batch);
  sb.log_back = batch.log_back;
  sb.log_p0 = batch.log_p0;
  sb.log_r = batch.log_r;
  sb.log_z = leaves.log_z;

  int loss;
  int per_traj = -1;
  if (cfg_.loss == "lv") {
    loss = objectives::lv_loss_node(tape, sb);
  } else {
    int delta = objectives::tb_delta_node(tape, sb);
    if (cfg_.loss_clip > 0.0) delta = tape.clamp(delta, -cfg_.loss_clip, cfg_.loss_clip);
    per_traj = tape.square(delta);
    loss = tape.dot_const(per_traj, Mat(weights));
  }
  double value = tape.scalar(loss);
  if (!std::isfinite(value))
    throw std::runtime_error("training: non-finite loss at epoch " +
                             std::to_string(epochs_done_ + 1));
  tape.backward(loss);

  auto mg = mlp_grads(tape, leaves.drift);
  std::vector<Mat> gp = {mg.w1, mg.b1, mg.w2, mg.b2, mg.w3, mg.b3};
  if (leaves.has_nn2) {
    auto ng = mlp_grads(tape, leaves.nn2);
    gp.insert(gp.end(), {ng.w1, ng.b1, ng.w2, ng.b2, ng.w3, ng.b3});
  }
  clip_global_norm(gp, cfg_.grad_norm_clip);
  adam_step(adam_policy_, g_policy_, gp);

  std::vector<Mat> gz = {tape.grad(leaves.log_z)};
  if (gz[0].size() == 0) gz[0] = Mat::Zero(1, 1);
  clip_global_norm(gz, cfg_.grad_norm_clip);
  adam_step(adam_logz_, g_logz_, gz);

  ThetaUpdate u;
  u.loss = value;
  if (per_traj >= 0) u.per_trajectory = tape.value(per_traj).col(0);
  return u;
}

Trainer::ThetaUpdate Trainer::update_theta_discrete(const discrete::DiscreteBatch& batch,
                                                    const Vec& weights) {
  ad::Tape tape;
  discrete::DiscretePolicyLeaves leaves = discrete::discrete_policy_register(tape, dpolicy_);
  objectives::ScoredBatch sb;
  sb.step_log_fwd = discrete::score_forward_on_tape(tape, leaves, proc_, batch);
  sb.log_back = batch.log_back;
  sb.log_p0 = batch.log_p0;
  sb.log_r = batch.log_r;
  sb.log_z = leaves.log_z;

  int loss;
  int per_traj = -1;
  if (cfg_.loss == "lv") {
    loss = objectives::lv_loss_node(tape, sb);
  } else {
    int delta = objectives::tb_delta_node(tape, sb);
    if (cfg_.loss_clip > 0.0) delta = tape.clamp(delta, -cfg_.loss_clip, cfg_.loss_clip);
    per_traj = tape.square(delta);
    loss = tape.dot_const(per_traj, Mat(weights));
  }
  double value = tape.scalar(loss);
  if (!std::isfinite(value))
    throw std::runtime_error("training: non-finite loss at epoch " +
                             std::to_string(epochs_done_ + 1));
  tape.backward(loss);

  auto mg = mlp_grads(tape, leaves.net);
  std::vector<Mat> gp = {mg.w1, mg.b1, mg.w2, mg.b2, mg.w3, mg.b3};
  clip_global_norm(gp, cfg_.grad_norm_clip);
  adam_step(adam_policy_, g_policy_, gp);

  std::vector<Mat> gz = {tape.grad(leaves.log_z)};
  if (gz[0].size() == 0) gz[0] = Mat::Zero(1, 1);
  clip_global_norm(gz, cfg_.grad_norm_clip);
  adam_step(adam_logz_, g_logz_, gz);

  ThetaUpdate u;
  u.loss = value;
  if (per_traj >= 0) u.per_trajectory = tape.value(per_traj).col(0);
  return u;
}

double Trainer::update_phi(const process::TrajectoryBatch& batch) {
  if (!flow_.learn_schedule && !flow_.use_correction) return 0.0;  // nothing to train
  int n_steps = batch.n_steps();
  int count = batch.count();
  Vec weights = objectives::uniform_weights(count);

  ad::Tape tape;
  flows::FlowLeaves leaves = flows::flow_register(tape, flow_);
  int log_z_const = tape.constant(policy_.log_z);

  // policy terms are detached: phi training cannot push the policy
  Mat cum_fwd(count, n_steps + 1), cum_back(count, n_steps + 1);
  cum_fwd.col(0).setZero();
  cum_back.col(0).setZero();
  for (int n = 0; n < n_steps; ++n) {
    cum_fwd.col(n + 1) = cum_fwd.col(n) + batch.log_fwd.col(n);
    cum_back.col(n + 1) = cum_back.col(n) + batch.log_back.col(n);
  }

  int loss;
  if (cfg_.loss == "subtb_lambda") {
    objectives::SubtbLambdaInputs in;
    in.flow_nodes.resize(n_steps + 1);
    for (int n = 0; n <= n_steps; ++n)
      in.flow_nodes[n] =
          flows::flow_values_on_tape(tape, leaves, flow_, target_, sched_, batch.states[n], n);
    in.log_z = log_z_const;
    in.step_log_fwd.resize(n_steps);
    for (int n = 0; n < n_steps; ++n)
      in.step_log_fwd[n] = tape.constant(Mat(batch.log_fwd.col(n)));
    in.log_back = batch.log_back;
    loss = objectives::subtb_lambda_loss_node(tape, in, cfg_.lambda, weights);
  } else {
    int n_chunks = n_steps / cfg_.chunk_l;
    objectives::SubtbChunkInputs in;
    in.boundary_flow.resize(n_chunks + 1);
    for (int j = 0; j <= n_chunks; ++j) {
      int n = j * cfg_.chunk_l;
      in.boundary_flow[j] =
          flows::flow_values_on_tape(tape, leaves, flow_, target_, sched_, batch.states[n], n);
    }
    in.log_z = log_z_const;
    in.cum_log_fwd = cum_fwd;
    in.cum_log_back = cum_back;
    loss = objectives::subtb_chunk_loss_node(tape, in, cfg_.chunk_l, weights);
  }

  double value = tape.scalar(loss);
  if (!std::isfinite(value))
    throw std::runtime_error("training: non-finite flow loss at epoch " +
                             std::to_string(epochs_done_ + 1));
  tape.backward(loss);

  if (flow_.use_correction) {
    auto fg = mlp_grads(tape, leaves.corr);
    std::vector<Mat> gf = {fg.w1, fg.b1, fg.w2, fg.b2, fg.w3, fg.b3};
    clip_global_norm(gf, cfg_.grad_norm_clip);
    adam_step(adam_flow_, g_flow_, gf);
  }
  if (flow_.learn_schedule) {
    std::vector<Mat> gb = {tape.grad(leaves.phi)};
    if (gb[0].size() == 0) gb[0] = Mat::Zero(flow_.phi.rows(), 1);
    clip_global_norm(gb, cfg_.grad_norm_clip);
    adam_step(adam_beta_, g_beta_, gb);
  }
  return value;
}

EpochRecord Trainer::epoch_step(Algo algo) {
  int epoch = epochs_done_ + 1;
  auto t0 = std::chrono::steady_clock::now();
  EpochRecord rec =
      cfg_.is_discrete() ? epoch_discrete(algo, epoch) : epoch_continuous(algo, epoch);
  rec.epoch = epoch;
  rec.log_z_theta = log_z_theta();
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  epochs_done_ = epoch;
  records_.push_back(rec);
  return rec;
}

EpochRecord Trainer::epoch_continuous(Algo algo, int epoch) {
  EpochRecord rec;
  int k = cfg_.batch_k;
  bool on_policy = (epoch % cfg_.offpolicy_i == 0);
  Rng er(Rng::key(seed_, kEpochTag, static_cast<std::uint64_t>(epoch)));

  process::TrajectoryBatch batch;
  Vec weights = objectives::uniform_weights(k);
  rec.mode = "on_policy";

  switch (algo) {
    case Algo::Iwt: {
      auto ais = smc::ais_sampling(target_, policy_, sched_, k, er.substream(0xA));
      ++rollout_calls_;
      batch = std::move(ais.batch);
      if (!on_policy) {
        double lambda = smc::adaptive_iw_tempering(ais.log_w, cfg_.gamma);
        rec.lambda_star = lambda;
        Vec lw = lambda * ais.log_w;
        log_normalise(lw);
        weights = lw.array().exp();
        rec.ess_mean = smc::ess(lw);
      } else {
        rec.ess_mean = static_cast<double>(k);
      }
      rec.log_z_hat = replay::batch_z_ais(ais.log_w);
      break;
    }
    case Algo::Smc: {
      if (on_policy) {
        batch = process::rollout_forward(policy_, sched_, target_, k, er.substream(0xA));
        ++rollout_calls_;
        rec.log_z_hat = replay::batch_z_ais(batch.ais_log_weight());
      } else {
        rec.mode = "smc";
        auto res = smc::smc_sampling(target_, policy_, flow_, sched_, k, cfg_.chunk_l,
                                     cfg_.kappa, cfg_.gamma, er.substream(0xB),
                                     cfg_.resample_systematic);
        batch = process::sample_backward(policy_, sched_, target_, res.terminals,
                                         er.substream(0xC));
        rec.log_z_hat = res.log_z_hat;
        rec.ess_mean = res.ess_segments.mean();
        rec.ess_min = res.ess_segments.minCoeff();
        if (!res.resample_lambdas.empty()) {
          double acc = 0.0;
          for (double l : res.resample_lambdas) acc += l;
          rec.lambda_star = acc / static_cast<double>(res.resample_lambdas.size());
        }
      }
      break;
    }
    case Algo::Replay: {
      if (on_policy || buffer_.empty()) {
        if (!on_policy) rec.mode = "on_policy";  // fallback from an empty buffer
        auto ais = smc::ais_sampling(target_, policy_, sched_, k, er.substream(0xA));
        ++rollout_calls_;
        batch = std::move(ais.batch);
        buffer_.insert_batch(batch.states.back(), ais.log_w, batch.log_r, epoch);
        rec.log_z_hat = replay::batch_z_ais(ais.log_w);
      } else {
        rec.mode = "replay";
        Rng draw_rng = er.substream(0xD);
        auto idx = buffer_.draw(k, cfg_.gamma,
                                replay::priority_from_string(cfg_.prioritisation), draw_rng);
        rec.lambda_star = buffer_.last_lambda();
        Mat terminals(k, target_.dim);
        for (int i = 0; i < k; ++i) terminals.row(i) = buffer_.entry(idx[i]).x.transpose();
        batch = process::sample_backward(policy_, sched_, target_, terminals, er.substream(0xC));
        ThetaUpdate u = update_theta(batch, weights);
        rec.loss_tb = u.loss;
        if (u.per_trajectory.size() > 0) buffer_.update_loss(idx, u.per_trajectory);
        return rec;
      }
      break;
    }
    case Algo::Combined: {
      if (on_policy) {
        auto ais = smc::ais_sampling(target_, policy_, sched_, k, er.substream(0xA));
        ++rollout_calls_;
        batch = std::move(ais.batch);
        buffer_.insert_batch(batch.states.back(), ais.log_w, batch.log_r, epoch);
        rec.log_z_hat = replay::batch_z_ais(ais.log_w);
      } else {
        rec.mode = "replay";
        auto res = smc::smc_sampling(target_, policy_, flow_, sched_, k, cfg_.chunk_l,
                                     cfg_.kappa, cfg_.gamma, er.substream(0xB),
                                     cfg_.resample_systematic);
        Vec log_r = targets::log_r_rows(target_, res.terminals);
        buffer_.insert_batch(res.terminals, res.log_w_bar, log_r, epoch);
        rec.log_z_hat = res.log_z_hat;
        rec.ess_mean = res.ess_segments.mean();
        rec.ess_min = res.ess_segments.minCoeff();

        Rng draw_rng = er.substream(0xD);
        auto idx = buffer_.draw(k, cfg_.gamma,
                                replay::priority_from_string(cfg_.prioritisation), draw_rng);
        rec.lambda_star = buffer_.last_lambda();
        Mat terminals(k, target_.dim);
        for (int i = 0; i < k; ++i) terminals.row(i) = buffer_.entry(idx[i]).x.transpose();
        batch = process::sample_backward(policy_, sched_, target_, terminals, er.substream(0xC));
      }
      break;
    }
  }

  if (algo == Algo::Smc || algo == Algo::Combined) rec.loss_subtb = update_phi(batch);
  ThetaUpdate u = update_theta(batch, weights);
  rec.loss_tb = u.loss;
  return rec;
}

EpochRecord Trainer::epoch_discrete(Algo algo, int epoch) {
  if (algo == Algo::Smc || algo == Algo::Combined)
    throw std::runtime_error(
        "training: smc/combined need the diffusion process; use iwt or replay");
  EpochRecord rec;
  int k = cfg_.batch_k;
  bool on_policy = (epoch % cfg_.offpolicy_i == 0);
  Rng er(Rng::key(seed_, kEpochTag, static_cast<std::uint64_t>(epoch)));

  discrete::DiscreteBatch batch;
  Vec weights = objectives::uniform_weights(k);
  rec.mode = "on_policy";

  if (algo == Algo::Iwt) {
    batch = discrete::rollout_forward(dpolicy_, proc_, dreward_, k, er.substream(0xA),
                                      cfg_.epsilon);
    ++rollout_calls_;
    Vec log_w = batch.ais_log_weight();
    if (!on_policy) {
      double lambda = smc::adaptive_iw_tempering(log_w, cfg_.gamma);
      rec.lambda_star = lambda;
      Vec lw = lambda * log_w;
      log_normalise(lw);
      weights = lw.array().exp();
      rec.ess_mean = smc::ess(lw);
    } else {
      rec.ess_mean = static_cast<double>(k);
    }
    rec.log_z_hat = replay::batch_z_ais(log_w);
  } else {  // Replay
    if (on_policy || buffer_.empty()) {
      batch = discrete::rollout_forward(dpolicy_, proc_, dreward_, k, er.substream(0xA),
                                        cfg_.epsilon);
      ++rollout_calls_;
      Vec log_w = batch.ais_log_weight();
      buffer_.insert_batch(batch.states.back(), log_w, batch.log_r, epoch);
      rec.log_z_hat = replay::batch_z_ais(log_w);
    } else {
      rec.mode = "replay";
      Rng draw_rng = er.substream(0xD);
      auto idx = buffer_.draw(k, cfg_.gamma,
                              replay::priority_from_string(cfg_.prioritisation), draw_rng);
      rec.lambda_star = buffer_.last_lambda();
      std::vector<std::string> terminals(k);
      for (int i = 0; i < k; ++i) terminals[i] = buffer_.entry(idx[i]).xs;
      batch = discrete::sample_backward(dpolicy_, proc_, dreward_, terminals, er.substream(0xC));
      ThetaUpdate u = update_theta_discrete(batch, weights);
      rec.loss_tb = u.loss;
      if (u.per_trajectory.size() > 0) buffer_.update_loss(idx, u.per_trajectory);
      return rec;
    }
  }

  ThetaUpdate u = update_theta_discrete(batch, weights);
  rec.loss_tb = u.loss;
  return rec;
}

void Trainer::run(Algo algo, const std::function<void(const Trainer&, int)>& after_epoch) {
  while (epochs_done_ < cfg_.n_epoch) {
    epoch_step(algo);
    if (after_epoch) after_epoch(*this, epochs_done_);
  }
}

io::Checkpoint Trainer::snapshot() const {
  io::Checkpoint c;
  c.config = io::config_to_json(cfg_);
  c.seed = seed_;
  c.epoch = epochs_done_;
  auto pack = [&](const ParamGroup& g) {
    for (std::size_t i = 0; i < g.mats.size(); ++i) c.params[g.names[i]] = *g.mats[i];
  };
  pack(g_policy_);
  pack(g_logz_);
  pack(g_flow_);
  pack(g_beta_);
  auto pack_adam = [&](const std::string& name, const AdamState& s) {
    if (s.m.empty()) return;
    io::Checkpoint::AdamSnapshot snap;
    snap.lr = s.lr;
    snap.t = s.t;
    snap.m = s.m;
    snap.v = s.v;
    c.adam[name] = std::move(snap);
  };
  pack_adam("policy", adam_policy_);
  pack_adam("logz", adam_logz_);
  pack_adam("flow", adam_flow_);
  pack_adam("beta", adam_beta_);
  if (!buffer_.empty()) c.buffer = io::buffer_to_json(buffer_);
  return c;
}

void Trainer::restore(const io::Checkpoint& ckpt) {
  epochs_done_ = ckpt.epoch;
  seed_ = ckpt.seed;
  auto unpack = [&](const ParamGroup& g) {
    for (std::size_t i = 0; i < g.mats.size(); ++i) {
      auto it = ckpt.params.find(g.names[i]);
      if (it == ckpt.params.end())
        throw std::runtime_error("restore: missing parameter " + g.names[i]);
      if (it->second.rows() != g.mats[i]->rows() || it->second.cols() != g.mats[i]->cols())
        throw std::runtime_error("restore: shape mismatch for " + g.names[i]);
      *g.mats[i] = it->second;
    }
  };
  unpack(g_policy_);
  unpack(g_logz_);
  unpack(g_flow_);
  unpack(g_beta_);
  auto unpack_adam = [&](const std::string& name, AdamState& s) {
    auto it = ckpt.adam.find(name);
    if (it == ckpt.adam.end()) return;
    s.lr = it->second.lr;
    s.t = it->second.t;
    s.m = it->second.m;
    s.v = it->second.v;
  };
  unpack_adam("policy", adam_policy_);
  unpack_adam("logz", adam_logz_);
  unpack_adam("flow", adam_flow_);
  unpack_adam("beta", adam_beta_);
  if (!ckpt.buffer.is_null()) io::buffer_from_json(ckpt.buffer, buffer_);
}

}  // namespace rsmc::train
