#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rsmc/discrete.hpp"
#include "rsmc/types.hpp"

namespace rsmc::oracle {

// Exhaustive walk of the prepend/append state DAG for small vocab/length.
// States are deduplicated by string, so merged actions are counted once as
// edges and trajectory counts respect the 2^{N-1} bound.
struct EnumerationTable {
  discrete::PrependAppendProcess proc;
  std::vector<std::vector<std::string>> levels;  // distinct states per length
  std::vector<std::string> terminals;
  Vec log_r;
  double log_z = 0.0;
  std::vector<long long> trajectory_counts;  // state paths per terminal
  std::map<std::string, int> terminal_index;
};

// Precondition: |V|^N <= 10^6; otherwise a capability error.
EnumerationTable enumerate_dag(const std::string& vocab, int length,
                               const std::function<double(const std::string&)>& log_reward);

// A tabular forward policy: state -> (child, log prob) pairs.
using TabularPolicy =
    std::function<std::vector<std::pair<std::string, double>>(const std::string&)>;

// Exact terminal marginals p(x) = sum over trajectories, via DP over the DAG.
std::map<std::string, double> exact_policy_marginal(const EnumerationTable& table,
                                                    const TabularPolicy& policy);

// The unique policy with zero TB loss on every trajectory, built by backward
// DP against the fixed uniform-parent backward kernel; log_z is the matching
// optimal log Z.
struct OptimalPolicy {
  std::map<std::string, std::vector<std::pair<std::string, double>>> child_log_probs;
  double log_z = 0.0;

  TabularPolicy as_policy() const {
    auto map = child_log_probs;
    return [map](const std::string& x) { return map.at(x); };
  }
};

OptimalPolicy tb_optimal_policy(const EnumerationTable& table);

// L1 distance between a terminal distribution and the normalised target.
double l1_to_target(const EnumerationTable& table, const std::map<std::string, double>& p);

}  // namespace rsmc::oracle
