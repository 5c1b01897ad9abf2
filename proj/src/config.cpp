#include "rsmc/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace rsmc::io {

namespace {

TrainConfig desk_profile() {
  TrainConfig c;
  c.profile = "desk";
  c.n_steps = 32;
  c.batch_k = 512;
  c.n_epoch = 3000;
  c.hidden_policy = 64;
  c.hidden_flow = 64;
  return c;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known) {
  std::string bad;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.count(it.key()) == 0) bad += (bad.empty() ? "" : ", ") + it.key();
  }
  if (!bad.empty()) throw std::invalid_argument("config: unknown keys: " + bad);
}

}  // namespace

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");

  const std::set<std::string> known = {
      "profile",       "target",        "dim",
      "target_seed",   "process",       "vocab",
      "n_steps",       "sigma",         "ou_rate",
      "ou_min_frac",   "langevin",      "grad_clip",     "n_epoch",
      "batch_k",       "chunk_l",       "kappa",
      "gamma",         "offpolicy_i",   "buffer_capacity",
      "prioritisation", "epsilon",      "loss",
      "lambda",        "loss_clip",     "lr_policy",
      "lr_logz",       "lr_flow",       "lr_beta",
      "grad_norm_clip", "hidden_policy", "hidden_flow",
      "beta_schedule", "flow_correction", "checkpoint_every",
      "resample_systematic"};
  reject_unknown(j, known);

  TrainConfig c;
  if (j.contains("profile")) {
    std::string p = j.at("profile").get<std::string>();
    if (p == "desk")
      c = desk_profile();
    else if (p == "paper")
      c = TrainConfig{};
    else
      throw std::invalid_argument("config: unknown profile '" + p + "'");
  }

  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("target", c.target);
  get("dim", c.dim);
  get("target_seed", c.target_seed);
  get("process", c.process);
  get("vocab", c.vocab);
  get("n_steps", c.n_steps);
  get("sigma", c.sigma);
  get("ou_rate", c.ou_rate);
  get("ou_min_frac", c.ou_min_frac);
  get("langevin", c.langevin);
  get("grad_clip", c.grad_clip);
  get("n_epoch", c.n_epoch);
  get("batch_k", c.batch_k);
  get("chunk_l", c.chunk_l);
  get("kappa", c.kappa);
  get("gamma", c.gamma);
  get("offpolicy_i", c.offpolicy_i);
  get("buffer_capacity", c.buffer_capacity);
  get("prioritisation", c.prioritisation);
  get("epsilon", c.epsilon);
  get("loss", c.loss);
  get("lambda", c.lambda);
  get("loss_clip", c.loss_clip);
  get("lr_policy", c.lr_policy);
  get("lr_logz", c.lr_logz);
  get("lr_flow", c.lr_flow);
  get("lr_beta", c.lr_beta);
  get("grad_norm_clip", c.grad_norm_clip);
  get("hidden_policy", c.hidden_policy);
  get("hidden_flow", c.hidden_flow);
  get("beta_schedule", c.beta_schedule);
  get("flow_correction", c.flow_correction);
  get("checkpoint_every", c.checkpoint_every);
  get("resample_systematic", c.resample_systematic);

  validate(c);
  return c;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("config: field '" + field + "': " + why);
  };
  if (c.process != "diffusion" && c.process != "prepend_append")
    fail("process", "must be 'diffusion' or 'prepend_append'");
  if (c.dim < 1) fail("dim", "must be positive");
  if (c.n_steps < 1) fail("n_steps", "must be >= 1");
  if (c.chunk_l < 1) fail("chunk_l", "must be >= 1");
  if (c.n_steps % c.chunk_l != 0) fail("chunk_l", "n_steps must be divisible by chunk_l");
  if (c.sigma <= 0.0) fail("sigma", "must be positive");
  if (c.ou_min_frac <= 0.0 || c.ou_min_frac > 1.0) fail("ou_min_frac", "must be in (0,1]");
  if (c.kappa < 0.0 || c.kappa > 1.0) fail("kappa", "must be in [0,1]");
  if (c.gamma < 0.0 || c.gamma > 1.0) fail("gamma", "must be in [0,1]");
  if (c.offpolicy_i < 1) fail("offpolicy_i", "must be >= 1");
  if (c.batch_k < 1) fail("batch_k", "must be >= 1");
  if (c.n_epoch < 1) fail("n_epoch", "must be >= 1");
  if (c.buffer_capacity < 1) fail("buffer_capacity", "must be >= 1");
  if (c.batch_k > c.buffer_capacity) fail("buffer_capacity", "must be >= batch_k");
  if (c.lr_policy <= 0.0) fail("lr_policy", "must be positive");
  if (c.lr_logz <= 0.0) fail("lr_logz", "must be positive");
  if (c.lr_flow <= 0.0) fail("lr_flow", "must be positive");
  if (c.lr_beta <= 0.0) fail("lr_beta", "must be positive");
  if (c.epsilon < 0.0 || c.epsilon > 1.0) fail("epsilon", "must be in [0,1]");
  if (c.epsilon > 0.0 && !c.is_discrete())
    fail("epsilon", "epsilon-exploration applies to the discrete process only");
  if (c.loss != "tb" && c.loss != "lv" && c.loss != "subtb_lambda" && c.loss != "subtb_chunk")
    fail("loss", "must be one of tb, lv, subtb_lambda, subtb_chunk");
  if (c.lambda <= 0.0) fail("lambda", "must be > 0");
  if (c.beta_schedule != "learnt" && c.beta_schedule != "linear")
    fail("beta_schedule", "must be 'learnt' or 'linear'");
  if (c.prioritisation != "iw" && c.prioritisation != "uniform" &&
      c.prioritisation != "reward" && c.prioritisation != "loss")
    fail("prioritisation", "must be one of iw, uniform, reward, loss");
  if (c.is_discrete()) {
    if (c.vocab.empty()) fail("vocab", "must be non-empty for the discrete process");
  }
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_config: parse error at byte " + std::to_string(e.byte) +
                             " in " + path);
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["profile"] = c.profile;
  j["target"] = c.target;
  j["dim"] = c.dim;
  j["target_seed"] = c.target_seed;
  j["process"] = c.process;
  j["vocab"] = c.vocab;
  j["n_steps"] = c.n_steps;
  j["sigma"] = c.sigma;
  j["ou_rate"] = c.ou_rate;
  j["ou_min_frac"] = c.ou_min_frac;
  j["langevin"] = c.langevin;
  j["grad_clip"] = c.grad_clip;
  j["n_epoch"] = c.n_epoch;
  j["batch_k"] = c.batch_k;
  j["chunk_l"] = c.chunk_l;
  j["kappa"] = c.kappa;
  j["gamma"] = c.gamma;
  j["offpolicy_i"] = c.offpolicy_i;
  j["buffer_capacity"] = c.buffer_capacity;
  j["prioritisation"] = c.prioritisation;
  j["epsilon"] = c.epsilon;
  j["loss"] = c.loss;
  j["lambda"] = c.lambda;
  j["loss_clip"] = c.loss_clip;
  j["lr_policy"] = c.lr_policy;
  j["lr_logz"] = c.lr_logz;
  j["lr_flow"] = c.lr_flow;
  j["lr_beta"] = c.lr_beta;
  j["grad_norm_clip"] = c.grad_norm_clip;
  j["hidden_policy"] = c.hidden_policy;
  j["hidden_flow"] = c.hidden_flow;
  j["beta_schedule"] = c.beta_schedule;
  j["flow_correction"] = c.flow_correction;
  j["checkpoint_every"] = c.checkpoint_every;
  j["resample_systematic"] = c.resample_systematic;
  return j;
}

}  // namespace rsmc::io
