#include "sst/checkpoint.hpp"

#include "sst/io.hpp"

#include <set>

namespace sst {

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"t_steps", c.t_steps},   {"input_dim", c.input_dim},         {"d_model", c.d_model},
          {"n_heads", c.n_heads},   {"n_layers", c.n_layers},           {"d_ff", c.d_ff},
          {"mask_ratio", c.mask_ratio}, {"mask_mean_len", c.mask_mean_len}, {"dropout", c.dropout},
          {"n_classes", c.n_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known = {"t_steps",    "input_dim",     "d_model", "n_heads",
                                              "n_layers",   "d_ff",          "mask_ratio",
                                              "mask_mean_len", "dropout",    "n_classes"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("model config: unknown field '" + key + "'");
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("model config: field '") + key + "' has the wrong type");
    }
  };
  read("t_steps", c.t_steps);
  read("input_dim", c.input_dim);
  read("d_model", c.d_model);
  read("n_heads", c.n_heads);
  read("n_layers", c.n_layers);
  read("d_ff", c.d_ff);
  read("mask_ratio", c.mask_ratio);
  read("mask_mean_len", c.mask_mean_len);
  read("dropout", c.dropout);
  read("n_classes", c.n_classes);
  c.validate();
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["config"] = model_config_to_json(ckpt.config);
  std::int64_t total = 0;
  std::string weights;
  auto tensors = nlohmann::json::array();
  for (const auto& p : ckpt.params) {
    for (float v : p.values)
      if (!std::isfinite(v)) throw std::runtime_error("refusing to save non-finite parameter " + p.name);
    tensors.push_back({{"name", p.name}, {"shape", p.shape}});
    total += static_cast<std::int64_t>(p.values.size());
    weights += io::float_bytes(p.values);
  }
  meta["parameters"] = tensors;
  meta["total_params"] = total;
  meta["training"] = {{"phase", ckpt.info.phase},
                      {"epochs", ckpt.info.epochs},
                      {"final_loss", ckpt.info.final_loss}};
  io::write_file_atomic(dir / "weights.bin", weights);
  io::write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json") || !std::filesystem::exists(dir / "weights.bin"))
    throw std::runtime_error("checkpoint " + dir.string() + " is missing meta.json or weights.bin");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + dir.string() + ": corrupt meta.json: " + e.what());
  }
  Checkpoint c;
  c.config = model_config_from_json(meta.at("config"));
  const auto& t = meta.at("training");
  c.info = {t.at("phase").get<std::string>(), t.at("epochs").get<int>(), t.at("final_loss").get<double>()};

  const auto weights = io::floats_from_bytes(io::read_file(dir / "weights.bin"), (dir / "weights.bin").string());
  const auto expected = parameter_layout(c.config);
  const auto& listed = meta.at("parameters");
  if (listed.size() != expected.size())
    throw std::runtime_error("checkpoint " + dir.string() + ": meta lists " + std::to_string(listed.size()) +
                             " tensors, config implies " + std::to_string(expected.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    NamedArray a{listed[i].at("name").get<std::string>(), listed[i].at("shape").get<Shape>(), {}};
    if (a.name != expected[i].name || a.shape != expected[i].shape)
      throw std::runtime_error("checkpoint " + dir.string() + ": tensor " + a.name + " " + shape_str(a.shape) +
                               " does not match expected " + expected[i].name + " " +
                               shape_str(expected[i].shape));
    const auto n = static_cast<std::size_t>(shape_size(a.shape));
    if (offset + n > weights.size())
      throw std::runtime_error("checkpoint " + dir.string() + ": weights.bin length mismatch (" +
                               std::to_string(weights.size()) + " floats, need at least " +
                               std::to_string(offset + n) + ")");
    a.values.assign(weights.begin() + static_cast<std::ptrdiff_t>(offset),
                    weights.begin() + static_cast<std::ptrdiff_t>(offset + n));
    offset += n;
    c.params.push_back(std::move(a));
  }
  if (offset != weights.size())
    throw std::runtime_error("checkpoint " + dir.string() + ": weights.bin length mismatch (" +
                             std::to_string(weights.size()) + " floats, expected " + std::to_string(offset) + ")");
  if (meta.contains("total_params") && meta.at("total_params").get<std::size_t>() != offset)
    throw std::runtime_error("checkpoint " + dir.string() + ": total_params disagrees with weights.bin");
  return c;
}

}  // namespace sst
