#pragma once

#include "sst/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sst {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct TrainingInfo {
  std::string phase = "init";  // init | pretrain | finetune | scratch
  int epochs = 0;
  double final_loss = 0.0;
  friend bool operator==(const TrainingInfo&, const TrainingInfo&) = default;
};

/// Serializable model state. Parameters are stored as 32-bit floats in
/// parameter_layout() order.
struct Checkpoint {
  ModelConfig config;
  std::vector<NamedArray> params;
  TrainingInfo info;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename Scalar>
Checkpoint make_checkpoint(const SSTransformer<Scalar>& model, TrainingInfo info) {
  Checkpoint c{model.config(), {}, std::move(info)};
  const auto& specs = model.layout();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& v = model.parameters()[i].value();
    NamedArray a{specs[i].name, specs[i].shape, std::vector<float>(static_cast<std::size_t>(v.size()))};
    for (Index j = 0; j < v.size(); ++j) a.values[static_cast<std::size_t>(j)] = static_cast<float>(v(j));
    c.params.push_back(std::move(a));
  }
  return c;
}

/// Rebuilds a model; every parameter is overwritten from the checkpoint.
template <typename Scalar>
SSTransformer<Scalar> model_from_checkpoint(const Checkpoint& c) {
  SSTransformer<Scalar> model(c.config, 0);
  const auto& specs = model.layout();
  if (specs.size() != c.params.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(c.params.size()) +
                             " tensors, config implies " + std::to_string(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& a = c.params[i];
    if (a.name != specs[i].name || a.shape != specs[i].shape)
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " is " + a.name + " " +
                               shape_str(a.shape) + ", expected " + specs[i].name + " " +
                               shape_str(specs[i].shape));
    auto& dst = model.parameters()[i].mutable_value();
    for (Index j = 0; j < dst.size(); ++j) dst(j) = static_cast<Scalar>(a.values[static_cast<std::size_t>(j)]);
  }
  return model;
}

/// Writes `dir/meta.json` and `dir/weights.bin` (f32 little-endian,
/// concatenated in layout order).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace sst
