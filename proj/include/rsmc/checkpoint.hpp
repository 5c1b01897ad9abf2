#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsmc/buffer.hpp"
#include "rsmc/types.hpp"

namespace rsmc::io {

inline constexpr int kCheckpointVersion = 1;

// On-disk training state. Doubles round-trip losslessly through the JSON
// serialisation, so save -> load -> save is byte-identical.
struct Checkpoint {
  int version = kCheckpointVersion;
  nlohmann::json config;
  std::uint64_t seed = 0;
  int epoch = 0;  // epochs completed
  std::map<std::string, Mat> params;

  struct AdamSnapshot {
    double lr = 0.0;
    long long t = 0;
    std::vector<Mat> m, v;
  };
  std::map<std::string, AdamSnapshot> adam;

  nlohmann::json buffer;  // null when the run has no replay buffer
};

nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

nlohmann::json buffer_to_json(const replay::ReplayBuffer& buf);
void buffer_from_json(const nlohmann::json& j, replay::ReplayBuffer& buf);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rsmc::io
