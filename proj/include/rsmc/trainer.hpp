#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "rsmc/adam.hpp"
#include "rsmc/buffer.hpp"
#include "rsmc/checkpoint.hpp"
#include "rsmc/config.hpp"
#include "rsmc/discrete.hpp"
#include "rsmc/flows.hpp"
#include "rsmc/objectives.hpp"
#include "rsmc/process.hpp"
#include "rsmc/smc.hpp"
#include "rsmc/targets.hpp"

namespace rsmc::train {

enum class Algo { Iwt, Smc, Replay, Combined };

Algo algo_from_string(const std::string& s);
std::string algo_to_string(Algo a);

struct EpochRecord {
  int epoch = 0;
  std::string mode;  // on_policy | smc | replay
  double loss_tb = std::numeric_limits<double>::quiet_NaN();
  double loss_subtb = std::numeric_limits<double>::quiet_NaN();
  double lambda_star = 1.0;
  double ess_mean = std::numeric_limits<double>::quiet_NaN();
  double ess_min = std::numeric_limits<double>::quiet_NaN();  // not in the CSV schema
  double log_z_hat = std::numeric_limits<double>::quiet_NaN();
  double log_z_theta = 0.0;
  double wall_ms = 0.0;  // measured; the CSV column is pinned to 0 for determinism
};

// Fixed schema: epoch,mode,loss_tb,loss_subtb,lambda_star,ess_mean,log_z_hat,
// log_z_theta,wall_ms. The wall_ms column is written as 0 so that
// (config, seed) -> byte-identical file; measured times stay in the records.
void write_metrics_csv(std::ostream& out, const std::vector<EpochRecord>& records);

class Trainer {
 public:
  Trainer(const io::TrainConfig& cfg, std::uint64_t seed);

  EpochRecord epoch_step(Algo algo);
  void run(Algo algo, const std::function<void(const Trainer&, int)>& after_epoch = {});

  io::Checkpoint snapshot() const;
  void restore(const io::Checkpoint& ckpt);

  const io::TrainConfig& config() const { return cfg_; }
  int epochs_done() const { return epochs_done_; }
  const std::vector<EpochRecord>& records() const { return records_; }
  const targets::TargetSpec& target() const { return target_; }
  const process::DiffusionSchedule& schedule() const { return sched_; }
  const process::PolicyParams& policy() const { return policy_; }
  const flows::FlowParams& flow() const { return flow_; }
  const discrete::DiscretePolicy& discrete_policy() const { return dpolicy_; }
  const discrete::PrependAppendProcess& discrete_process() const { return proc_; }
  const replay::ReplayBuffer& buffer() const { return buffer_; }
  double log_z_theta() const;
  long long rollout_calls() const { return rollout_calls_; }

 private:
  EpochRecord epoch_continuous(Algo algo, int epoch);
  EpochRecord epoch_discrete(Algo algo, int epoch);

  struct ThetaUpdate {
    double loss = 0.0;
    Vec per_trajectory;
  };
  ThetaUpdate update_theta(const process::TrajectoryBatch& batch, const Vec& weights);
  ThetaUpdate update_theta_discrete(const discrete::DiscreteBatch& batch, const Vec& weights);
  double update_phi(const process::TrajectoryBatch& batch);

  io::TrainConfig cfg_;
  std::uint64_t seed_ = 0;
  int epochs_done_ = 0;
  long long rollout_calls_ = 0;

  targets::TargetSpec target_;
  process::DiffusionSchedule sched_;
  process::PolicyParams policy_;
  flows::FlowParams flow_;
  discrete::PrependAppendProcess proc_;
  discrete::DiscretePolicy dpolicy_;
  std::function<double(const std::string&)> dreward_;
  replay::ReplayBuffer buffer_;

  ParamGroup g_policy_, g_logz_, g_flow_, g_beta_;
  AdamState adam_policy_, adam_logz_, adam_flow_, adam_beta_;

  std::vector<EpochRecord> records_;
};

}  // namespace rsmc::train
