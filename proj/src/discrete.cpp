#include "rsmc/discrete.hpp"

#include <cmath>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::discrete {

PrependAppendProcess make_prepend_append(const std::string& vocab, int length) {
  if (vocab.empty()) throw std::invalid_argument("prepend_append: empty vocabulary");
  if (length < 1) throw std::invalid_argument("prepend_append: length must be >= 1");
  for (std::size_t i = 0; i < vocab.size(); ++i)
    for (std::size_t j = i + 1; j < vocab.size(); ++j)
      if (vocab[i] == vocab[j]) throw std::invalid_argument("prepend_append: duplicate symbol");
  return PrependAppendProcess{vocab, length};
}

std::string PrependAppendProcess::apply_action(const std::string& x, int action) const {
  int v = vocab_size();
  if (action < 0 || action >= 2 * v) throw std::invalid_argument("apply_action: bad action");
  if (action < v) return std::string(1, vocab[action]) + x;
  return x + std::string(1, vocab[action - v]);
}

std::vector<std::string> PrependAppendProcess::parents(const std::string& x) const {
  if (x.empty()) return {};
  std::string drop_first = x.substr(1);
  std::string drop_last = x.substr(0, x.size() - 1);
  if (drop_first == drop_last) return {drop_first};
  return {drop_first, drop_last};
}

double PrependAppendProcess::log_back(const std::string& x) const {
  return -std::log(static_cast<double>(parents(x).size()));
}

Vec PrependAppendProcess::encode(const std::string& x) const {
  Vec e = Vec::Zero(enc_dim());
  int v = vocab_size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto pos = vocab.find(x[i]);
    if (pos == std::string::npos) throw std::invalid_argument("encode: symbol not in vocabulary");
    e[static_cast<int>(i) * v + static_cast<int>(pos)] = 1.0;
  }
  e[enc_dim() - 1] = static_cast<double>(x.size()) / length;
  return e;
}

Mat PrependAppendProcess::encode_batch(const std::vector<std::string>& xs) const {
  Mat m(static_cast<Eigen::Index>(xs.size()), enc_dim());
  for (std::size_t k = 0; k < xs.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = encode(xs[k]);
  return m;
}

std::array<int, 2> PrependAppendProcess::actions_for_child(const std::string& x,
                                                           const std::string& child) const {
  std::array<int, 2> out{-1, -1};
  int v = vocab_size();
  int found = 0;
  if (child.size() == x.size() + 1) {
    if (child.compare(1, x.size(), x) == 0) {
      auto pos = vocab.find(child.front());
      if (pos != std::string::npos) out[found++] = static_cast<int>(pos);
    }
    if (child.compare(0, x.size(), x) == 0) {
      auto pos = vocab.find(child.back());
      if (pos != std::string::npos) out[found++] = v + static_cast<int>(pos);
    }
  }
  if (found == 0) throw std::invalid_argument("actions_for_child: not a child state");
  return out;
}

std::function<double(const std::string&)> discrete_reward(const std::string& name) {
  if (name == "uniform") return [](const std::string&) { return 0.0; };
  if (name == "count_a_pow2")
    return [](const std::string& x) {
      int n = 0;
      for (char c : x)
        if (c == 'A') ++n;
      return n * std::numbers::ln2;
    };
  throw std::invalid_argument("discrete_reward: unknown reward '" + name + "'");
}

DiscretePolicy discrete_policy_init(const PrependAppendProcess& proc, int hidden, Rng rng) {
  DiscretePolicy p;
  p.net = mlp_init(proc.enc_dim(), hidden, proc.action_count(), rng.substream(31));
  p.log_z = Mat::Zero(1, 1);
  return p;
}

namespace {

Vec action_log_probs(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                     const std::string& x) {
  Mat logits = mlp_forward(policy.net, proc.encode(x).transpose());
  Vec lp = logits.row(0).transpose();
  return (lp.array() - log_sum_exp(lp)).matrix();
}

}  // namespace

std::vector<std::pair<std::string, double>> child_log_probs(const DiscretePolicy& policy,
                                                            const PrependAppendProcess& proc,
                                                            const std::string& x) {
  Vec lp = action_log_probs(policy, proc, x);
  std::vector<std::pair<std::string, double>> out;
  for (int a = 0; a < proc.action_count(); ++a) {
    std::string child = proc.apply_action(x, a);
    bool merged = false;
    for (auto& [c, p] : out) {
      if (c == child) {
        Vec two(2);
        two << p, lp[a];
        p = log_sum_exp(two);
        merged = true;
        break;
      }
    }
    if (!merged) out.emplace_back(std::move(child), lp[a]);
  }
  return out;
}

StepSample forward_step(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                        const std::string& x, Rng& rng, double epsilon) {
  if (static_cast<int>(x.size()) >= proc.length)
    throw std::invalid_argument("forward_step: state already terminal");
  Vec lp = action_log_probs(policy, proc, x);
  int n_actions = proc.action_count();

  StepSample s;
  double u = rng.uniform();
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    s.action = static_cast<int>(u * n_actions) % n_actions;
  } else {
    double acc = 0.0;
    s.action = n_actions - 1;
    for (int a = 0; a < n_actions; ++a) {
      acc += std::exp(lp[a]);
      if (u <= acc) {
        s.action = a;
        break;
      }
    }
  }
  s.child = proc.apply_action(x, s.action);
  auto acts = proc.actions_for_child(x, s.child);
  if (acts[1] >= 0) {
    Vec two(2);
    two << lp[acts[0]], lp[acts[1]];
    s.log_fwd = log_sum_exp(two);
  } else {
    s.log_fwd = lp[acts[0]];
  }
  return s;
}

Vec DiscreteBatch::ais_log_weight() const {
  return log_r + log_back.rowwise().sum() - log_p0 - log_fwd.rowwise().sum();
}

DiscreteBatch rollout_forward(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                              const std::function<double(const std::string&)>& log_reward,
                              int count, const Rng& rng, double epsilon) {
  int n = proc.length;
  DiscreteBatch batch;
  batch.states.assign(n + 1, std::vector<std::string>(count));
  batch.log_fwd.resize(count, n);
  batch.log_back.resize(count, n);
  batch.log_p0 = Vec::Zero(count);
  batch.log_r.resize(count);
  for (int k = 0; k < count; ++k) {
    Rng stream = rng.substream(1, k);
    std::string x;
    for (int step = 0; step < n; ++step) {
      StepSample s = forward_step(policy, proc, x, stream, epsilon);
      batch.log_fwd(k, step) = s.log_fwd;
      batch.log_back(k, step) = proc.log_back(s.child);
      x = std::move(s.child);
      batch.states[step + 1][k] = x;
    }
    batch.log_r[k] = log_reward(x);
  }
  return batch;
}

DiscreteBatch sample_backward(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                              const std::function<double(const std::string&)>& log_reward,
                              const std::vector<std::string>& terminals, const Rng& rng) {
  int n = proc.length;
  int count = static_cast<int>(terminals.size());
  DiscreteBatch batch;
  batch.states.assign(n + 1, std::vector<std::string>(count));
  batch.log_fwd.resize(count, n);
  batch.log_back.resize(count, n);
  batch.log_p0 = Vec::Zero(count);
  batch.log_r.resize(count);
  for (int k = 0; k < count; ++k) {
    Rng stream = rng.substream(3, k);
    std::string x = terminals[k];
    batch.log_r[k] = log_reward(x);
    batch.states[n][k] = x;
    for (int step = n; step >= 1; --step) {
      auto ps = proc.parents(x);
      batch.log_back(k, step - 1) = -std::log(static_cast<double>(ps.size()));
      x = ps[stream.uniform_index(ps.size())];
      batch.states[step - 1][k] = x;
    }
  }
  // score stored transitions under the current policy
  for (int k = 0; k < count; ++k) {
    for (int step = 0; step < n; ++step) {
      Vec lp = action_log_probs(policy, proc, batch.states[step][k]);
      auto acts = proc.actions_for_child(batch.states[step][k], batch.states[step + 1][k]);
      if (acts[1] >= 0) {
        Vec two(2);
        two << lp[acts[0]], lp[acts[1]];
        batch.log_fwd(k, step) = log_sum_exp(two);
      } else {
        batch.log_fwd(k, step) = lp[acts[0]];
      }
    }
  }
  return batch;
}

DiscretePolicyLeaves discrete_policy_register(ad::Tape& tape, const DiscretePolicy& policy) {
  DiscretePolicyLeaves l;
  l.net = mlp_register(tape, policy.net);
  l.log_z = tape.leaf(policy.log_z);
  return l;
}

std::vector<int> score_forward_on_tape(ad::Tape& tape, const DiscretePolicyLeaves& leaves,
                                       const PrependAppendProcess& proc,
                                       const DiscreteBatch& batch) {
  int n = batch.n_steps();
  int count = batch.count();
  std::vector<int> out;
  out.reserve(n);
  for (int step = 0; step < n; ++step) {
    int enc = tape.constant(proc.encode_batch(batch.states[step]));
    int logits = mlp_forward(tape, leaves.net, enc);
    std::vector<std::array<int, 2>> sel(count);
    for (int k = 0; k < count; ++k)
      sel[k] = proc.actions_for_child(batch.states[step][k], batch.states[step + 1][k]);
    int selected = tape.sel_log_sum_exp(logits, std::move(sel));
    out.push_back(tape.sub(selected, tape.row_log_sum_exp(logits)));
  }
  return out;
}

}  // namespace rsmc::discrete
