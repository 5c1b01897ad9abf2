#include "rsmc/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace rsmc::io {

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json j;
  j["shape"] = {m.rows(), m.cols()};
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

Mat mat_from_json(const nlohmann::json& j) {
  auto shape = j.at("shape");
  Eigen::Index rows = shape.at(0).get<Eigen::Index>();
  Eigen::Index cols = shape.at(1).get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::runtime_error("checkpoint: matrix payload size mismatch");
  Mat m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data.at(i++).get<double>();
  return m;
}

nlohmann::json buffer_to_json(const replay::ReplayBuffer& buf) {
  nlohmann::json j;
  j["capacity"] = buf.capacity();
  j["next_batch_id"] = buf.next_batch_id();
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : buf.raw_entries()) {
    nlohmann::json je;
    if (e.x.size() > 0) {
      std::vector<double> x(e.x.data(), e.x.data() + e.x.size());
      je["x"] = x;
    } else {
      je["xs"] = e.xs;
    }
    je["lw"] = e.log_weight;
    je["bid"] = e.batch_id;
    je["ep"] = e.epoch;
    je["lr"] = e.log_r;
    if (std::isfinite(e.loss)) je["loss"] = e.loss;
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  return j;
}

void buffer_from_json(const nlohmann::json& j, replay::ReplayBuffer& buf) {
  buf.raw_entries().clear();
  buf.set_next_batch_id(j.at("next_batch_id").get<int>());
  for (const auto& je : j.at("entries")) {
    replay::BufferEntry e;
    if (je.contains("x")) {
      auto x = je.at("x").get<std::vector<double>>();
      e.x = Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
    } else {
      e.xs = je.at("xs").get<std::string>();
    }
    e.log_weight = je.at("lw").get<double>();
    e.batch_id = je.at("bid").get<int>();
    e.epoch = je.at("ep").get<int>();
    e.log_r = je.at("lr").get<double>();
    e.loss = je.contains("loss") ? je.at("loss").get<double>()
                                 : std::numeric_limits<double>::quiet_NaN();
    buf.raw_entries().push_back(std::move(e));
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["version"] = ckpt.version;
  j["config"] = ckpt.config;
  j["seed"] = ckpt.seed;
  j["epoch"] = ckpt.epoch;
  nlohmann::json params;
  for (const auto& [name, m] : ckpt.params) params[name] = mat_to_json(m);
  j["params"] = std::move(params);
  nlohmann::json adam;
  for (const auto& [name, s] : ckpt.adam) {
    nlohmann::json ja;
    ja["lr"] = s.lr;
    ja["t"] = s.t;
    nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
    for (const auto& mm : s.m) m.push_back(mat_to_json(mm));
    for (const auto& vv : s.v) v.push_back(mat_to_json(vv));
    ja["m"] = std::move(m);
    ja["v"] = std::move(v);
    adam[name] = std::move(ja);
  }
  j["adam"] = std::move(adam);
  if (!ckpt.buffer.is_null()) j["buffer"] = ckpt.buffer;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: parse error at byte " + std::to_string(e.byte) +
                             " in " + path);
  }
  Checkpoint c;
  c.version = j.at("version").get<int>();
  if (c.version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(c.version) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  c.config = j.at("config");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.epoch = j.at("epoch").get<int>();
  for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it)
    c.params[it.key()] = mat_from_json(it.value());
  if (j.contains("adam")) {
    for (auto it = j.at("adam").begin(); it != j.at("adam").end(); ++it) {
      Checkpoint::AdamSnapshot s;
      s.lr = it.value().at("lr").get<double>();
      s.t = it.value().at("t").get<long long>();
      for (const auto& m : it.value().at("m")) s.m.push_back(mat_from_json(m));
      for (const auto& v : it.value().at("v")) s.v.push_back(mat_from_json(v));
      c.adam[it.key()] = std::move(s);
    }
  }
  if (j.contains("buffer")) c.buffer = j.at("buffer");
  return c;
}

}  // namespace rsmc::io
