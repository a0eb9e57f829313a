#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relapse/encoder.hpp"
#include "relapse/io.hpp"
#include "relapse/normalize.hpp"

// Checkpoint container: parameters as a flat (name, shape, float64 values)
// list inside one JSON document per patient, together with the
// normalization statistics and enough metadata to rebuild the model.

namespace relapse {

using nlohmann::json;

inline constexpr const char* kCheckpointFormat = "relapse-checkpoint-v1";

inline json encoder_config_to_json(const EncoderConfig& c) {
  return {{"d_model", c.d_model},     {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},   {"ffn_dim", c.ffn_dim},
          {"dropout_rate", c.dropout_rate},
          {"positional_mode", to_string(c.positional_mode)}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.d_model = j.at("d_model").get<std::int64_t>();
  c.n_heads = j.at("n_heads").get<std::int64_t>();
  c.n_layers = j.at("n_layers").get<std::int64_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.positional_mode =
      positional_mode_from_string(j.at("positional_mode").get<std::string>());
  return c;
}

template <typename T>
json params_to_json(const std::vector<NamedParam<T>>& params) {
  json out = json::array();
  for (const auto& [name, p] : params) {
    json entry;
    entry["name"] = name;
    entry["shape"] = p->shape;
    json values = json::array();
    for (const T v : p->value) values.push_back(static_cast<double>(v));
    entry["values"] = std::move(values);
    out.push_back(std::move(entry));
  }
  return out;
}

template <typename T>
void params_from_json(const json& j,
                      const std::vector<NamedParam<T>>& params) {
  if (j.size() != params.size())
    throw DataError("checkpoint: expected " + std::to_string(params.size()) +
                    " parameters, found " + std::to_string(j.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = j.at(i);
    if (entry.at("name").get<std::string>() != params[i].name)
      throw DataError("checkpoint: parameter order mismatch at '" +
                      params[i].name + "'");
    const auto shape = entry.at("shape").get<ad::Shape>();
    if (shape != params[i].tensor->shape)
      throw DataError("checkpoint: shape mismatch for '" + params[i].name + "'");
    const auto& values = entry.at("values");
    if (static_cast<std::int64_t>(values.size()) != params[i].tensor->size())
      throw DataError("checkpoint: value count mismatch for '" +
                      params[i].name + "'");
    for (std::size_t k = 0; k < values.size(); ++k)
      params[i].tensor->value[k] = static_cast<T>(values.at(k).get<double>());
  }
}

inline json stats_to_json(const ChannelStats& st) {
  json j;
  j["mean"] = st.mean;
  j["stddev"] = st.stddev;
  j["centered_only"] = st.centered_only;
  j["flagged"] = st.flagged;
  return j;
}

inline ChannelStats stats_from_json(const json& j) {
  ChannelStats st;
  st.mean = j.at("mean").get<std::array<double, kNumChannels>>();
  st.stddev = j.at("stddev").get<std::array<double, kNumChannels>>();
  st.centered_only = j.at("centered_only").get<std::array<bool, kNumChannels>>();
  st.flagged = j.at("flagged").get<std::array<bool, kNumChannels>>();
  return st;
}

// head layer dims recovered from the stored weight shapes
template <typename T>
std::vector<std::int64_t> mlp_dims_from_json(const json& params) {
  std::vector<std::int64_t> dims;
  for (const auto& entry : params) {
    const auto shape = entry.at("shape").get<ad::Shape>();
    if (shape.size() != 2) continue;  // biases
    if (dims.empty()) dims.push_back(shape[0]);
    dims.push_back(shape[1]);
  }
  return dims;
}

template <typename T>
Mlp<T> mlp_from_json(const json& params) {
  Rng scratch(0);
  Mlp<T> mlp(mlp_dims_from_json<T>(params), scratch);
  std::string prefix = params.at(0).at("name").get<std::string>();
  prefix = prefix.substr(0, prefix.find('.'));
  params_from_json<T>(params, mlp.parameters(prefix));
  return mlp;
}

inline void write_checkpoint(const std::filesystem::path& path, const json& j) {
  auto out = io::open_out(path);
  out << j.dump(1) << '\n';
}

inline json read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw StageOrderError("missing checkpoint " + path.string() +
                          "; run `relapse train` first");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("checkpoint parse error in " + path.string() + ": " +
                    e.what());
  }
  if (j.value("format", "") != kCheckpointFormat)
    throw DataError("unrecognized checkpoint format in " + path.string());
  return j;
}

}  // namespace relapse
