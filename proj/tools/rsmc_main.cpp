#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <cstdio>
#include <string>

#include "rsmc/checkpoint.hpp"
#include "rsmc/config.hpp"
#include "rsmc/enumeration.hpp"
#include "rsmc/metrics.hpp"
#include "rsmc/smc.hpp"
#include "rsmc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

rsmc::train::Trainer trainer_from_checkpoint(const std::string& path) {
  auto ckpt = rsmc::io::load_checkpoint(path);
  auto cfg = rsmc::io::config_from_json(ckpt.config);
  rsmc::train::Trainer t(cfg, ckpt.seed);
  t.restore(ckpt);
  return t;
}

void write_samples_csv(const std::string& path, const rsmc::Mat& samples,
                       const rsmc::Vec* log_w = nullptr,
                       const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "sample";
  for (Eigen::Index j = 0; j < samples.cols(); ++j) out << ",x" << j;
  if (log_w != nullptr) out << ",log_w";
  out << "\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << ',' << samples(i, j);
    if (log_w != nullptr) out << ',' << (*log_w)[i];
    out << "\n";
  }
}

int cmd_train(const std::string& config_path, const std::string& algo_str,
              std::uint64_t seed, const std::string& out_dir) {
  auto cfg = rsmc::io::load_config(config_path);
  auto algo = rsmc::train::algo_from_string(algo_str);
  fs::create_directories(out_dir);

  rsmc::train::Trainer trainer(cfg, seed);
  auto save = [&](const rsmc::train::Trainer& t, const std::string& name) {
    rsmc::io::save_checkpoint((fs::path(out_dir) / name).string(), t.snapshot());
  };

  trainer.run(algo, [&](const rsmc::train::Trainer& t, int epoch) {
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save(t, "ckpt_" + std::to_string(epoch) + ".json");
    if (epoch % 100 == 0)
      std::cerr << "epoch " << epoch << "/" << cfg.n_epoch
                << " loss_tb=" << t.records().back().loss_tb
                << " logZ=" << t.log_z_theta() << "\n";
  });
  save(trainer, "ckpt_final.json");

  std::ofstream metrics((fs::path(out_dir) / "metrics.csv").string(), std::ios::binary);
  rsmc::train::write_metrics_csv(metrics, trainer.records());

  double total_ms = 0.0;
  for (const auto& r : trainer.records()) total_ms += r.wall_ms;
  std::ofstream timing((fs::path(out_dir) / "timing.log").string());
  timing << "total_wall_ms " << total_ms << "\n";
  std::cerr << "done: " << trainer.epochs_done() << " epochs, " << total_ms / 1000.0 << " s\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, int count, std::uint64_t seed,
               const std::string& out_path) {
  auto trainer = trainer_from_checkpoint(ckpt_path);
  rsmc::Rng rng(rsmc::Rng::key(seed, 0x5A));
  if (trainer.config().is_discrete()) {
    auto batch = rsmc::discrete::rollout_forward(
        trainer.discrete_policy(), trainer.discrete_process(),
        rsmc::discrete::discrete_reward(trainer.config().target), count, rng);
    std::ofstream out(out_path);
    out << "sample,x\n";
    for (int i = 0; i < count; ++i) out << i << ',' << batch.states.back()[i] << "\n";
  } else {
    auto batch = rsmc::process::rollout_forward(trainer.policy(), trainer.schedule(),
                                                trainer.target(), count, rng);
    write_samples_csv(out_path, batch.states.back());
  }
  std::cout << "wrote " << count << " samples to " << out_path << "\n";
  return 0;
}

int cmd_smc(const std::string& ckpt_path, int count, int segment_len, double kappa,
            double gamma, std::uint64_t seed, const std::string& out_path) {
  auto trainer = trainer_from_checkpoint(ckpt_path);
  if (trainer.config().is_discrete())
    throw std::runtime_error("smc: requires a diffusion-process checkpoint");
  int seg = segment_len > 0 ? segment_len : trainer.config().chunk_l;
  auto res = rsmc::smc::smc_sampling(trainer.target(), trainer.policy(), trainer.flow(),
                                     trainer.schedule(), count, seg, kappa, gamma,
                                     rsmc::Rng(rsmc::Rng::key(seed, 0x5C)),
                                     trainer.config().resample_systematic);
  char note[64];
  std::snprintf(note, sizeof(note), "log_z_hat=%.17g", res.log_z_hat);
  write_samples_csv(out_path, res.terminals, &res.log_w_bar, note);
  std::cout << note << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& metrics_list, int n,
             std::uint64_t seed, const std::string& csv_path) {
  auto trainer = trainer_from_checkpoint(ckpt_path);
  if (trainer.config().is_discrete())
    throw std::runtime_error("eval: continuous-process checkpoints only");
  const auto& target = trainer.target();
  const auto& policy = trainer.policy();
  const auto& sched = trainer.schedule();
  rsmc::Rng rng(rsmc::Rng::key(seed, 0x5E));

  rsmc::metrics::EvalReport rep;
  rep.sample_count = n;
  rep.seed = seed;

  json j;
  std::stringstream requested(metrics_list);
  std::string item;
  while (std::getline(requested, item, ',')) {
    if (item == "elbo") {
      rep.elbo = rsmc::metrics::elbo(policy, target, sched, n, rng.substream(1));
      j["elbo"] = *rep.elbo;
    } else if (item == "eubo") {
      rep.eubo = rsmc::metrics::eubo(policy, target, sched, n, rng.substream(2));
      j["eubo"] = *rep.eubo;
    } else if (item == "sinkhorn") {
      rsmc::Rng r1 = rng.substream(3), r2 = rng.substream(4);
      rsmc::Mat truth = rsmc::targets::exact_sample(target, r1, n);
      auto batch = rsmc::process::rollout_forward(policy, sched, target, n, r2);
      bool converged = true;
      rep.sinkhorn = rsmc::metrics::sinkhorn_distance(batch.states.back(), truth, 1.0,
                                                      &converged);
      rep.sinkhorn_converged = converged;
      j["sinkhorn"] = *rep.sinkhorn;
      if (!converged) j["sinkhorn_warning"] = "iteration cap reached";
    } else if (item == "mmd") {
      rsmc::Rng r1 = rng.substream(5), r2 = rng.substream(6);
      rsmc::Mat truth = rsmc::targets::exact_sample(target, r1, n);
      auto batch = rsmc::process::rollout_forward(policy, sched, target, n, r2);
      rep.mmd = rsmc::metrics::mmd(batch.states.back(), truth);
      j["mmd"] = *rep.mmd;
    } else if (item == "modes") {
      if (trainer.config().target != "gmm40")
        throw std::runtime_error("eval: mode coverage needs a gmm40 target");
      auto spec = rsmc::targets::gmm_spec(target.dim, 40, trainer.config().target_seed);
      rsmc::Rng r2 = rng.substream(7);
      auto batch = rsmc::process::rollout_forward(policy, sched, target, n, r2);
      rep.mode_count = rsmc::metrics::mode_coverage(batch.states.back(), spec.means);
      j["modes"] = *rep.mode_count;
    } else if (item == "logz") {
      rep.log_z_hat = trainer.log_z_theta();
      j["logz"] = *rep.log_z_hat;
    } else {
      throw std::runtime_error("eval: unknown metric '" + item + "'");
    }
  }
  j["n"] = n;
  j["seed"] = seed;
  std::cout << j.dump(1) << "\n";

  if (!csv_path.empty()) {
    bool exists = fs::exists(csv_path);
    std::ofstream out(csv_path, std::ios::app);
    if (!exists) out << "checkpoint,seed,n,elbo,eubo,sinkhorn,mmd,modes\n";
    auto opt = [](const std::optional<double>& v) {
      return v ? std::to_string(*v) : std::string("nan");
    };
    out << ckpt_path << ',' << seed << ',' << n << ',' << opt(rep.elbo) << ',' << opt(rep.eubo)
        << ',' << opt(rep.sinkhorn) << ',' << opt(rep.mmd) << ','
        << (rep.mode_count ? std::to_string(*rep.mode_count) : std::string("nan")) << "\n";
  }
  return 0;
}

int cmd_dump_buffer(const std::string& ckpt_path, const std::string& out_path) {
  auto ckpt = rsmc::io::load_checkpoint(ckpt_path);
  if (ckpt.buffer.is_null()) throw std::runtime_error("dump-buffer: checkpoint has no buffer");
  rsmc::replay::ReplayBuffer buf(ckpt.buffer.at("capacity").get<std::size_t>());
  rsmc::io::buffer_from_json(ckpt.buffer, buf);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << "index,state,log_weight,batch_id\n";
  out.precision(17);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const auto& e = buf.entry(static_cast<int>(i));
    out << i << ',';
    if (e.x.size() > 0) {
      for (Eigen::Index d = 0; d < e.x.size(); ++d) out << (d ? ";" : "") << e.x[d];
    } else {
      out << e.xs;
    }
    out << ',' << e.log_weight << ',' << e.batch_id << "\n";
  }
  std::cout << "wrote " << buf.size() << " entries to " << out_path << "\n";
  return 0;
}

int cmd_enumerate(const std::string& vocab, int len, const std::string& reward) {
  auto table = rsmc::oracle::enumerate_dag(vocab, len, rsmc::discrete::discrete_reward(reward));
  json j;
  j["vocab"] = vocab;
  j["len"] = len;
  j["reward"] = reward;
  j["terminals"] = table.terminals.size();
  j["log_z"] = table.log_z;
  j["z"] = std::exp(table.log_z);
  long long max_traj = 0;
  for (long long c : table.trajectory_counts) max_traj = std::max(max_traj, c);
  j["max_trajectories_per_terminal"] = max_traj;
  std::cout << j.dump(1) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural amortised samplers trained off-policy with SMC behaviour policies"};
  app.require_subcommand(1);

  std::string config_path, algo = "iwt", out_dir = "runs/out";
  std::uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "train a sampler");
  train->add_option("--config", config_path, "JSON config")->required();
  train->add_option("--algo", algo, "iwt|smc|replay|combined");
  train->add_option("--seed", seed, "run seed")->required();
  train->add_option("--out", out_dir, "output directory");

  std::string ckpt_path, out_path = "samples.csv";
  int count = 1000;
  auto* sample = app.add_subcommand("sample", "roll out the trained sampler");
  sample->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  sample->add_option("--n", count, "sample count");
  sample->add_option("--seed", seed, "run seed")->required();
  sample->add_option("--out", out_path, "output CSV");

  int seg = 0;
  double kappa = 0.2, gamma = 0.05;
  auto* smc = app.add_subcommand("smc", "run SMC with the learnt proposal and twists");
  smc->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  smc->add_option("--k", count, "particle count");
  smc->add_option("--l", seg, "segment length (default: config chunk_l)");
  smc->add_option("--kappa", kappa, "resampling ESS threshold");
  smc->add_option("--gamma", gamma, "tempering ESS threshold");
  smc->add_option("--seed", seed, "run seed")->required();
  smc->add_option("--out", out_path, "output CSV");

  std::string metric_list = "elbo", csv_path;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--metrics", metric_list, "comma list: elbo,eubo,sinkhorn,mmd,modes,logz");
  eval->add_option("--n", count, "evaluation sample count");
  eval->add_option("--seed", seed, "run seed")->required();
  eval->add_option("--csv", csv_path, "append a CSV row here");

  auto* dump = app.add_subcommand("dump-buffer", "export the replay buffer as CSV");
  dump->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  dump->add_option("--out", out_path, "output CSV");

  std::string vocab = "AB", reward = "uniform";
  int len = 3;
  auto* enumerate = app.add_subcommand("enumerate", "exhaustive discrete oracle");
  enumerate->add_option("--vocab", vocab, "vocabulary characters");
  enumerate->add_option("--len", len, "terminal string length");
  enumerate->add_option("--reward", reward, "uniform|count_a_pow2");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train)) return cmd_train(config_path, algo, seed, out_dir);
    if (app.got_subcommand(sample)) return cmd_sample(ckpt_path, count, seed, out_path);
    if (app.got_subcommand(smc)) return cmd_smc(ckpt_path, count, seg, kappa, gamma, seed, out_path);
    if (app.got_subcommand(eval)) return cmd_eval(ckpt_path, metric_list, count, seed, csv_path);
    if (app.got_subcommand(dump)) return cmd_dump_buffer(ckpt_path, out_path);
    if (app.got_subcommand(enumerate)) return cmd_enumerate(vocab, len, reward);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
