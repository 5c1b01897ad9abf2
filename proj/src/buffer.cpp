#include "rsmc/buffer.hpp"

#include <cmath>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::replay {

double batch_z_ais(const VecRef& log_w) {
  if (log_w.size() < 1) throw std::invalid_argument("batch_z_ais: empty batch");
  return log_mean_exp(log_w);
}

double batch_z_smc(const std::vector<smc::SegmentRecord>& segments) {
  double log_z = 0.0;
  for (const auto& seg : segments)
    log_z += log_sum_exp((seg.log_w_start + seg.log_w_increment).eval());
  return log_z;
}

Priority priority_from_string(const std::string& s) {
  if (s == "iw") return Priority::IW;
  if (s == "uniform") return Priority::Uniform;
  if (s == "reward") return Priority::Reward;
  if (s == "loss") return Priority::Loss;
  throw std::invalid_argument("unknown prioritisation mode '" + s + "'");
}

std::string priority_to_string(Priority p) {
  switch (p) {
    case Priority::IW: return "iw";
    case Priority::Uniform: return "uniform";
    case Priority::Reward: return "reward";
    case Priority::Loss: return "loss";
  }
  return "iw";
}

void ReplayBuffer::push_and_evict(std::vector<BufferEntry>&& batch) {
  if (batch.size() > capacity_)
    throw std::invalid_argument("replay buffer: batch larger than capacity");
  int id = next_batch_id_++;
  for (auto& e : batch) {
    e.batch_id = id;
    entries_.push_back(std::move(e));
  }
  // evict oldest whole batches; batch-level weights lose meaning if split
  while (entries_.size() > capacity_) {
    int oldest = entries_.front().batch_id;
    while (!entries_.empty() && entries_.front().batch_id == oldest) entries_.pop_front();
  }
}

void ReplayBuffer::insert_batch(const Mat& states, const VecRef& log_w_bar, const VecRef& log_r,
                                int epoch) {
  if (states.rows() != log_w_bar.size() || states.rows() != log_r.size())
    throw std::invalid_argument("insert_batch: size mismatch");
  std::vector<BufferEntry> batch(states.rows());
  for (Eigen::Index k = 0; k < states.rows(); ++k) {
    batch[k].x = states.row(k).transpose();
    batch[k].log_weight = log_w_bar[k];
    batch[k].log_r = log_r[k];
    batch[k].epoch = epoch;
  }
  push_and_evict(std::move(batch));
}

void ReplayBuffer::insert_batch(const std::vector<std::string>& states, const VecRef& log_w_bar,
                                const VecRef& log_r, int epoch) {
  if (static_cast<Eigen::Index>(states.size()) != log_w_bar.size() ||
      log_w_bar.size() != log_r.size())
    throw std::invalid_argument("insert_batch: size mismatch");
  std::vector<BufferEntry> batch(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) {
    batch[k].xs = states[k];
    batch[k].log_weight = log_w_bar[static_cast<Eigen::Index>(k)];
    batch[k].log_r = log_r[static_cast<Eigen::Index>(k)];
    batch[k].epoch = epoch;
  }
  push_and_evict(std::move(batch));
}

Vec ReplayBuffer::log_weights() const {
  Vec w(static_cast<Eigen::Index>(entries_.size()));
  for (std::size_t i = 0; i < entries_.size(); ++i)
    w[static_cast<Eigen::Index>(i)] = entries_[i].log_weight;
  return w;
}

std::vector<int> ReplayBuffer::draw(int count, double gamma, Priority mode, Rng& rng) const {
  if (entries_.empty()) throw std::runtime_error("replay buffer: draw from empty buffer");
  int n = static_cast<int>(entries_.size());
  Vec log_priority(n);
  last_lambda_ = 1.0;

  switch (mode) {
    case Priority::Uniform:
      log_priority.setZero();
      break;
    case Priority::IW: {
      log_priority = log_weights();
      last_lambda_ = smc::adaptive_iw_tempering(log_priority, gamma);
      log_priority *= last_lambda_;
      break;
    }
    case Priority::Reward: {
      for (int i = 0; i < n; ++i) log_priority[i] = entries_[i].log_r;
      last_lambda_ = smc::adaptive_iw_tempering(log_priority, gamma);
      log_priority *= last_lambda_;
      break;
    }
    case Priority::Loss: {
      double max_loss = 0.0;
      bool any = false;
      for (int i = 0; i < n; ++i) {
        if (std::isfinite(entries_[i].loss)) {
          any = true;
          max_loss = std::max(max_loss, entries_[i].loss);
        }
      }
      if (!any) throw std::runtime_error("replay buffer: loss priority with no cached losses");
      // entries never seen by the loss get the current max priority
      for (int i = 0; i < n; ++i) {
        double p = std::isfinite(entries_[i].loss) ? entries_[i].loss : max_loss;
        log_priority[i] = std::log(p + 1e-12);
      }
      break;
    }
  }

  log_normalise(log_priority);
  Vec cdf(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(log_priority[i]);
    cdf[i] = acc;
  }
  cdf[n - 1] = 1.0;

  std::vector<int> idx(count);
  for (int k = 0; k < count; ++k) {
    double u = rng.uniform();
    int lo = 0, hi = n - 1;
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (cdf[mid] < u)
        lo = mid + 1;
      else
        hi = mid;
    }
    idx[k] = lo;
  }
  return idx;
}

void ReplayBuffer::update_loss(const std::vector<int>& indices, const VecRef& losses) {
  if (static_cast<Eigen::Index>(indices.size()) != losses.size())
    throw std::invalid_argument("update_loss: size mismatch");
  for (std::size_t i = 0; i < indices.size(); ++i)
    entries_[indices[i]].loss = losses[static_cast<Eigen::Index>(i)];
}

}  // namespace rsmc::replay
