#include "trace/nn/checkpoint.hpp"

#include <fstream>

#include "trace/errors.hpp"

namespace trace::nn {

using nlohmann::json;

json config_to_json(const NetworkConfig& c) {
  return {{"state_dim", c.state_dim}, {"cond_dim", c.cond_dim},     {"hidden", c.hidden},
          {"blocks", c.blocks},       {"cond_width", c.cond_width}, {"time_freqs", c.time_freqs}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  try {
    c.state_dim = j.at("state_dim").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.cond_width = j.at("cond_width").get<int>();
    c.time_freqs = j.value("time_freqs", 8);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const NetworkParams& params) {
  json tensors = json::array();
  for (const auto& t : params.tensors()) {
    Eigen::Map<const Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(t.rows * t.cols));
    for (Eigen::Index r = 0; r < t.rows; ++r)
      for (Eigen::Index c = 0; c < t.cols; ++c) row_major.push_back(m(r, c));
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"values", row_major}});
  }
  return {{"format", kCheckpointFormat},
          {"config", config_to_json(params.config)},
          {"tensors", std::move(tensors)}};
}

NetworkParams params_from_json(const json& doc) {
  if (doc.value("format", "") != kCheckpointFormat)
    throw SchemaError(std::string("checkpoint: expected format ") + kCheckpointFormat);
  const NetworkConfig cfg = config_from_json(doc.at("config"));
  NetworkParams params = init_network(0, cfg);
  auto tensors = params.tensors();
  const auto& stored = doc.at("tensors");
  if (stored.size() != tensors.size()) throw SchemaError("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& s = stored[i];
    auto& t = tensors[i];
    if (s.at("name").get<std::string>() != t.name)
      throw SchemaError("checkpoint: expected tensor " + t.name);
    const auto shape = s.at("shape").get<std::vector<Eigen::Index>>();
    const auto values = s.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols ||
        values.size() != static_cast<std::size_t>(t.rows * t.cols))
      throw SchemaError("checkpoint: shape mismatch for " + t.name);
    Eigen::Map<Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < t.rows; ++r)
      for (Eigen::Index c = 0; c < t.cols; ++c) m(r, c) = values[k++];
  }
  return params;
}

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << to_json(params).dump();
  if (!out) throw IoError("write failed for " + path.string());
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return params_from_json(doc);
}

}  // namespace trace::nn
