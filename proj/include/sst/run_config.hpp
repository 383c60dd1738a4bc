#pragma once

#include "sst/baselines.hpp"
#include "sst/model.hpp"
#include "sst/synthetic.hpp"
#include "sst/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace sst {

enum class PretrainData { TrainSplit, AllBikes };

/// Every stage's settings in one place. Read from JSON (missing fields keep
/// their defaults, unknown fields are rejected), then flag overrides apply.
struct RunConfig {
  SynthConfig synth;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 42;
  ModelConfig model;
  TrainConfig pretrain = {.epochs = 50};
  TrainConfig finetune = {.epochs = 30};
  PretrainData pretrain_data = PretrainData::TrainSplit;
  LogRegOptions logreg;
  int knn_k = 5;
  TrainConfig scratch = {.epochs = 30};

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::ordered_json run_config_to_json(const RunConfig& c);
/// Field errors name the dotted path, e.g. "pretrain.epochs".
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> label_fraction;
  std::optional<LossScope> loss_scope;
  std::optional<Precision> precision;
};

/// --seed reseeds every stage; --label-fraction applies to the supervised
/// stages; --loss-scope to pretraining; --precision to all training.
void apply_overrides(RunConfig& c, const Overrides& o);

LossScope parse_loss_scope(const std::string& s);
Precision parse_precision(const std::string& s);
std::string to_string(LossScope s);
std::string to_string(Precision p);

/// Writes config.resolved.json into `dir`.
void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace sst
