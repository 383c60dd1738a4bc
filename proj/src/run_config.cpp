#include "sst/run_config.hpp"

#include "sst/checkpoint.hpp"
#include "sst/io.hpp"

#include <set>

namespace sst {

LossScope parse_loss_scope(const std::string& s) {
  if (s == "full") return LossScope::Full;
  if (s == "masked" || s == "masked_only") return LossScope::MaskedOnly;
  throw ConfigError("loss_scope must be 'full' or 'masked', got '" + s + "'");
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw ConfigError("precision must be 'f32' or 'f64', got '" + s + "'");
}

std::string to_string(LossScope s) { return s == LossScope::Full ? "full" : "masked"; }
std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

void RunConfig::validate() const {
  synth.validate();
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split.ratio must lie in (0, 1)");
  model.validate();
  auto check = [](const TrainConfig& t, const std::string& section) {
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(section + ": " + e.what());
    }
  };
  check(pretrain, "pretrain");
  check(finetune, "finetune");
  check(scratch, "baselines.scratch");
  if (logreg.epochs < 1 || logreg.batch_size < 1 || !(logreg.lr >= 0.0))
    throw ConfigError("baselines.logreg: epochs and batch_size must be >= 1, lr >= 0");
  if (knn_k < 1) throw ConfigError("baselines.knn_k must be >= 1");
}

namespace {

nlohmann::ordered_json train_to_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["seed"] = t.seed;
  j["loss_scope"] = to_string(t.loss_scope);
  j["label_fraction"] = t.label_fraction;
  j["precision"] = to_string(t.precision);
  return j;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& path) {
  if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key))
      throw ConfigError("unknown field '" + (path.empty() ? key : path + "." + key) + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + (path.empty() ? std::string(key) : path + "." + key) + "' has the wrong type");
  }
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig t, const std::string& path) {
  reject_unknown(j, {"epochs", "batch_size", "lr", "seed", "loss_scope", "label_fraction", "precision"}, path);
  read(j, "epochs", t.epochs, path);
  read(j, "batch_size", t.batch_size, path);
  read(j, "lr", t.lr, path);
  read(j, "seed", t.seed, path);
  read(j, "label_fraction", t.label_fraction, path);
  std::string s;
  if (j.contains("loss_scope")) {
    read(j, "loss_scope", s, path);
    t.loss_scope = parse_loss_scope(s);
  }
  if (j.contains("precision")) {
    read(j, "precision", s, path);
    t.precision = parse_precision(s);
  }
  return t;
}

template <typename Fn>
auto with_prefix(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["synth"] = synth_config_to_json(c.synth);
  j["split"] = {{"ratio", c.split_ratio}, {"seed", c.split_seed}};
  j["model"] = model_config_to_json(c.model);
  j["pretrain"] = train_to_json(c.pretrain);
  j["pretrain"]["data"] = c.pretrain_data == PretrainData::TrainSplit ? "train" : "all";
  j["finetune"] = train_to_json(c.finetune);
  nlohmann::ordered_json b;
  b["logreg"] = {{"epochs", c.logreg.epochs},
                 {"lr", c.logreg.lr},
                 {"batch_size", c.logreg.batch_size},
                 {"seed", c.logreg.seed}};
  b["knn_k"] = c.knn_k;
  b["scratch"] = train_to_json(c.scratch);
  j["baselines"] = b;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  reject_unknown(j, {"seed", "synth", "split", "model", "pretrain", "finetune", "baselines"}, "");
  if (j.contains("seed")) {
    std::uint64_t seed = 0;
    read(j, "seed", seed, "");
    Overrides o;
    o.seed = seed;
    apply_overrides(c, o);
  }
  if (j.contains("synth")) c.synth = with_prefix("synth", [&] { return synth_config_from_json(j.at("synth"), c.synth); });
  if (j.contains("split")) {
    const auto& s = j.at("split");
    reject_unknown(s, {"ratio", "seed"}, "split");
    read(s, "ratio", c.split_ratio, "split");
    read(s, "seed", c.split_seed, "split");
  }
  if (j.contains("model")) c.model = with_prefix("model", [&] { return model_config_from_json(j.at("model")); });
  if (j.contains("pretrain")) {
    auto p = j.at("pretrain");
    if (p.is_object() && p.contains("data")) {
      std::string d;
      read(p, "data", d, "pretrain");
      if (d == "train") c.pretrain_data = PretrainData::TrainSplit;
      else if (d == "all") c.pretrain_data = PretrainData::AllBikes;
      else throw ConfigError("pretrain.data must be 'train' or 'all'");
      p.erase("data");
    }
    c.pretrain = with_prefix("pretrain", [&] { return train_from_json(p, c.pretrain, "pretrain"); });
  }
  if (j.contains("finetune"))
    c.finetune = with_prefix("finetune", [&] { return train_from_json(j.at("finetune"), c.finetune, "finetune"); });
  if (j.contains("baselines")) {
    const auto& b = j.at("baselines");
    reject_unknown(b, {"logreg", "knn_k", "scratch"}, "baselines");
    if (b.contains("logreg")) {
      const auto& l = b.at("logreg");
      reject_unknown(l, {"epochs", "lr", "batch_size", "seed"}, "baselines.logreg");
      read(l, "epochs", c.logreg.epochs, "baselines.logreg");
      read(l, "lr", c.logreg.lr, "baselines.logreg");
      read(l, "batch_size", c.logreg.batch_size, "baselines.logreg");
      read(l, "seed", c.logreg.seed, "baselines.logreg");
    }
    read(b, "knn_k", c.knn_k, "baselines");
    if (b.contains("scratch"))
      c.scratch = with_prefix("baselines.scratch",
                              [&] { return train_from_json(b.at("scratch"), c.scratch, "baselines.scratch"); });
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) {
    c.synth.seed = *o.seed;
    c.split_seed = *o.seed;
    c.pretrain.seed = *o.seed;
    c.finetune.seed = *o.seed;
    c.scratch.seed = *o.seed;
    c.logreg.seed = *o.seed;
  }
  if (o.label_fraction) {
    c.finetune.label_fraction = *o.label_fraction;
    c.scratch.label_fraction = *o.label_fraction;
  }
  if (o.loss_scope) c.pretrain.loss_scope = *o.loss_scope;
  if (o.precision) {
    c.pretrain.precision = *o.precision;
    c.finetune.precision = *o.precision;
    c.scratch.precision = *o.precision;
  }
}

void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "config.resolved.json", run_config_to_json(c).dump(2) + "\n");
}

}  // namespace sst
