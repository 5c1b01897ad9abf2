#include "rsmc/enumeration.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::oracle {

EnumerationTable enumerate_dag(const std::string& vocab, int length,
                               const std::function<double(const std::string&)>& log_reward) {
  double states = std::pow(static_cast<double>(vocab.size()), length);
  if (states > 1e6) throw std::runtime_error("enumerate_dag: state budget exceeded");

  EnumerationTable t;
  t.proc = discrete::make_prepend_append(vocab, length);
  t.levels.resize(length + 1);
  t.levels[0] = {""};
  for (int n = 1; n <= length; ++n) {
    std::set<std::string> next;
    for (const std::string& s : t.levels[n - 1])
      for (int a = 0; a < t.proc.action_count(); ++a) next.insert(t.proc.apply_action(s, a));
    t.levels[n].assign(next.begin(), next.end());
  }

  // state-path counts via DP over distinct states
  std::map<std::string, long long> count;
  count[""] = 1;
  for (int n = 0; n < length; ++n) {
    std::map<std::string, long long> next;
    for (const std::string& s : t.levels[n]) {
      std::set<std::string> children;
      for (int a = 0; a < t.proc.action_count(); ++a) children.insert(t.proc.apply_action(s, a));
      for (const std::string& c : children) next[c] += count[s];
    }
    count = std::move(next);
  }

  t.terminals = t.levels[length];
  t.log_r.resize(static_cast<Eigen::Index>(t.terminals.size()));
  t.trajectory_counts.resize(t.terminals.size());
  for (std::size_t i = 0; i < t.terminals.size(); ++i) {
    t.log_r[static_cast<Eigen::Index>(i)] = log_reward(t.terminals[i]);
    t.trajectory_counts[i] = count.at(t.terminals[i]);
    t.terminal_index[t.terminals[i]] = static_cast<int>(i);
  }
  t.log_z = log_sum_exp(t.log_r);
  return t;
}

std::map<std::string, double> exact_policy_marginal(const EnumerationTable& table,
                                                    const TabularPolicy& policy) {
  std::map<std::string, double> log_prob;
  log_prob[""] = 0.0;
  int length = table.proc.length;
  for (int n = 0; n < length; ++n) {
    std::map<std::string, double> next;
    for (const std::string& s : table.levels[n]) {
      auto found = log_prob.find(s);
      if (found == log_prob.end()) continue;  // unreachable under this policy
      double lp_s = found->second;
      for (const auto& [child, lp] : policy(s)) {
        auto it = next.find(child);
        if (it == next.end()) {
          next[child] = lp_s + lp;
        } else {
          Vec two(2);
          two << it->second, lp_s + lp;
          it->second = log_sum_exp(two);
        }
      }
    }
    log_prob = std::move(next);
  }
  std::map<std::string, double> out;
  for (const auto& [s, lp] : log_prob) out[s] = std::exp(lp);
  return out;
}

OptimalPolicy tb_optimal_policy(const EnumerationTable& table) {
  // G(x) = R(x) at terminals; G(s) = sum_c p_back(s|c) G(c). The policy
  // p*(c|s) = p_back(s|c) G(c) / G(s) zeroes TB on every trajectory and
  // G(empty) is the optimal Z.
  int length = table.proc.length;
  std::map<std::string, double> log_g;
  for (std::size_t i = 0; i < table.terminals.size(); ++i)
    log_g[table.terminals[i]] = table.log_r[static_cast<Eigen::Index>(i)];

  OptimalPolicy opt;
  for (int n = length - 1; n >= 0; --n) {
    for (const std::string& s : table.levels[n]) {
      std::set<std::string> children;
      for (int a = 0; a < table.proc.action_count(); ++a)
        children.insert(table.proc.apply_action(s, a));
      std::vector<std::pair<std::string, double>> terms;
      Vec vals(static_cast<Eigen::Index>(children.size()));
      Eigen::Index i = 0;
      for (const std::string& c : children) {
        double v = table.proc.log_back(c) + log_g.at(c);
        terms.emplace_back(c, v);
        vals[i++] = v;
      }
      double lse = log_sum_exp(vals);
      log_g[s] = lse;
      for (auto& [c, v] : terms) v -= lse;
      opt.child_log_probs[s] = std::move(terms);
    }
  }
  opt.log_z = log_g.at("");
  return opt;
}

double l1_to_target(const EnumerationTable& table, const std::map<std::string, double>& p) {
  double l1 = 0.0;
  for (std::size_t i = 0; i < table.terminals.size(); ++i) {
    double pi = std::exp(table.log_r[static_cast<Eigen::Index>(i)] - table.log_z);
    auto it = p.find(table.terminals[i]);
    double q = it == p.end() ? 0.0 : it->second;
    l1 += std::abs(pi - q);
  }
  return l1;
}

}  // namespace rsmc::oracle
