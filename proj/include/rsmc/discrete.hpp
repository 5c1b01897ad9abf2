#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rsmc/mlp.hpp"
#include "rsmc/rng.hpp"
#include "rsmc/tape.hpp"
#include "rsmc/types.hpp"

namespace rsmc::discrete {

// Sequence generation that grows a string from both ends. Actions 0..V-1
// prepend vocab[a]; actions V..2V-1 append vocab[a-V]. State identity is the
// string itself, so actions that land on the same child merge: the child's
// probability is the sum of its action probabilities. The backward kernel is
// uniform over the distinct parents (drop-first, drop-last).
struct PrependAppendProcess {
  std::string vocab;
  int length = 0;  // N: terminal strings have exactly this many characters

  int vocab_size() const { return static_cast<int>(vocab.size()); }
  int action_count() const { return 2 * vocab_size(); }
  int enc_dim() const { return length * vocab_size() + 1; }

  std::string apply_action(const std::string& x, int action) const;
  std::vector<std::string> parents(const std::string& x) const;
  double log_back(const std::string& x) const;  // -log(#parents)

  // One-hot per position plus a length channel, zero-padded to N.
  Vec encode(const std::string& x) const;
  Mat encode_batch(const std::vector<std::string>& xs) const;

  // Action indices (prepend idx, append idx or -1) that produce `child`
  // from `x`; used both for scoring and for tape selection.
  std::array<int, 2> actions_for_child(const std::string& x, const std::string& child) const;
};

PrependAppendProcess make_prepend_append(const std::string& vocab, int length);

// Named discrete rewards for the CLI and oracle tests.
// "uniform": R = 1; "count_a_pow2": R = 2^{#A}.
std::function<double(const std::string&)> discrete_reward(const std::string& name);

struct DiscretePolicy {
  Mlp net;     // enc_dim -> 2V logits
  Mat log_z;   // 1x1
};

DiscretePolicy discrete_policy_init(const PrependAppendProcess& proc, int hidden, Rng rng);

// Child states of x with merged log-probabilities under the policy.
std::vector<std::pair<std::string, double>> child_log_probs(const DiscretePolicy& policy,
                                                            const PrependAppendProcess& proc,
                                                            const std::string& x);

struct StepSample {
  std::string child;
  int action = 0;
  double log_fwd = 0.0;  // merged child probability under the true policy
};

// Sample one forward step. With probability epsilon the action is drawn
// uniformly; the returned log_fwd is always the true policy's.
StepSample forward_step(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                        const std::string& x, Rng& rng, double epsilon = 0.0);

struct DiscreteBatch {
  std::vector<std::vector<std::string>> states;  // [N+1][K]
  Mat log_fwd;   // K x N
  Mat log_back;  // K x N
  Vec log_r;     // K
  Vec log_p0;    // K, all zero (the empty string is the unique start)

  int n_steps() const { return static_cast<int>(states.size()) - 1; }
  int count() const { return static_cast<int>(states[0].size()); }
  Vec ais_log_weight() const;
};

DiscreteBatch rollout_forward(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                              const std::function<double(const std::string&)>& log_reward,
                              int count, const Rng& rng, double epsilon = 0.0);

DiscreteBatch sample_backward(const DiscretePolicy& policy, const PrependAppendProcess& proc,
                              const std::function<double(const std::string&)>& log_reward,
                              const std::vector<std::string>& terminals, const Rng& rng);

struct DiscretePolicyLeaves {
  MlpLeaves net;
  int log_z = -1;
};

DiscretePolicyLeaves discrete_policy_register(ad::Tape& tape, const DiscretePolicy& policy);

std::vector<int> score_forward_on_tape(ad::Tape& tape, const DiscretePolicyLeaves& leaves,
                                       const PrependAppendProcess& proc,
                                       const DiscreteBatch& batch);

}  // namespace rsmc::discrete
