#pragma once

#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "rsmc/rng.hpp"
#include "rsmc/smc.hpp"
#include "rsmc/types.hpp"

namespace rsmc::replay {

// Batch-level normalising-constant weight for on-policy (AIS) batches:
// log of the mean weight.
double batch_z_ais(const VecRef& log_w);

// Batch-level weight for SMC batches: product over segments of the
// self-normalised-times-incremental sums, in log space.
double batch_z_smc(const std::vector<smc::SegmentRecord>& segments);

enum class Priority { IW, Uniform, Reward, Loss };

Priority priority_from_string(const std::string& s);
std::string priority_to_string(Priority p);

struct BufferEntry {
  Vec x;           // continuous terminal state (empty when discrete)
  std::string xs;  // discrete terminal state
  double log_weight = 0.0;  // log(K * Zhat * W), one scale for AIS and SMC batches
  int batch_id = 0;
  int epoch = 0;
  double log_r = 0.0;
  double loss = std::numeric_limits<double>::quiet_NaN();  // cached last-seen loss
};

// Importance-weighted experience replay. Single-writer: the training loop
// serialises inserts and draws. Eviction drops whole oldest batches.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void insert_batch(const Mat& states, const VecRef& log_w_bar, const VecRef& log_r, int epoch);
  void insert_batch(const std::vector<std::string>& states, const VecRef& log_w_bar,
                    const VecRef& log_r, int epoch);

  // K entry indices drawn with replacement; IW and Reward priorities are
  // adaptively tempered with threshold gamma * |B|.
  std::vector<int> draw(int count, double gamma, Priority mode, Rng& rng) const;

  void update_loss(const std::vector<int>& indices, const VecRef& losses);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const BufferEntry& entry(int i) const { return entries_[i]; }
  Vec log_weights() const;
  int next_batch_id() const { return next_batch_id_; }

  // last tempering exponent used by an IW/Reward draw
  double last_lambda() const { return last_lambda_; }

  std::deque<BufferEntry>& raw_entries() { return entries_; }
  const std::deque<BufferEntry>& raw_entries() const { return entries_; }
  void set_next_batch_id(int id) { next_batch_id_ = id; }

 private:
  void push_and_evict(std::vector<BufferEntry>&& batch);

  std::size_t capacity_;
  std::deque<BufferEntry> entries_;
  int next_batch_id_ = 0;
  mutable double last_lambda_ = 1.0;
};

}  // namespace rsmc::replay
