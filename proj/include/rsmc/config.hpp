#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace rsmc::io {

// Full training configuration. Defaults follow the reference hyperparameter
// profile ("paper"); the "desk" profile is a small-problem override set
// suitable for CPU runs.
struct TrainConfig {
  std::string profile = "paper";

  // target
  std::string target = "gmm40";
  int dim = 2;
  std::uint64_t target_seed = 0;

  // generative process
  std::string process = "diffusion";  // "diffusion" | "prepend_append"
  std::string vocab = "AB";           // discrete only
  int n_steps = 64;
  double sigma = 1.0;
  double ou_rate = 2.5;
  double ou_min_frac = 0.02;
  bool langevin = false;
  double grad_clip = 100.0;

  // training loop
  int n_epoch = 20000;
  int batch_k = 2000;
  int chunk_l = 4;
  double kappa = 0.2;
  double gamma = 0.05;
  int offpolicy_i = 2;
  int buffer_capacity = 200000;
  std::string prioritisation = "iw";  // iw | uniform | reward | loss
  double epsilon = 0.0;               // discrete exploration rate

  // losses
  std::string loss = "tb";  // tb | lv | subtb_lambda | subtb_chunk
  double lambda = 0.9;
  double loss_clip = 0.0;  // 0 = off; cap on |log-ratio| per trajectory

  // optimiser
  double lr_policy = 1e-3;
  double lr_logz = 1e-1;
  double lr_flow = 1e-3;
  double lr_beta = 1e-1;
  double grad_norm_clip = 10.0;

  // models
  int hidden_policy = 256;
  int hidden_flow = 64;
  std::string beta_schedule = "learnt";  // learnt | linear
  bool flow_correction = true;

  // plumbing
  int checkpoint_every = 0;  // 0 = final only
  bool resample_systematic = false;

  bool is_discrete() const { return process == "prepend_append"; }
};

// Parse + validate. Unknown keys are an error (listed in the message);
// invariant violations name the offending field. The optional "profile" key
// selects the base defaults before the remaining keys are applied.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::string& path);

nlohmann::json config_to_json(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

}  // namespace rsmc::io
