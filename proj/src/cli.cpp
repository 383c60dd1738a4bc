#include "sst/cli.hpp"

#include "sst/baselines.hpp"
#include "sst/checkpoint.hpp"
#include "sst/data_model.hpp"
#include "sst/evaluation.hpp"
#include "sst/feature_engine.hpp"
#include "sst/io.hpp"
#include "sst/run_config.hpp"
#include "sst/synthetic.hpp"
#include "sst/training.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <malloc.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace sst::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<std::string, std::string>> kCommands = {
    {"synth", "generate a labeled synthetic fleet (trips.csv, gps.csv, labels.csv, manifest.json)"},
    {"ingest", "parse raw CSVs, assemble per-bike records, write stratified train/ and test/ splits"},
    {"featurize", "build standardized feature tensors (train-fitted statistics)"},
    {"pretrain", "masked-reconstruction pretraining; writes a checkpoint"},
    {"finetune", "linear probing of a pretrained checkpoint; writes a checkpoint"},
    {"train-baselines", "logistic regression, kNN and the scratch Transformer; writes reports.jsonl"},
    {"eval", "score a checkpoint on a labeled tensor; writes report.jsonl"},
    {"predict", "write bike_id,prob_unusable,status rows for a tensor"},
    {"report", "render the comparison table from report JSONL files"},
    {"pipeline", "run every stage in order under one output directory"},
};

// Stage failure: reported with exit code 1.
struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string tensor;
  std::string checkpoint;
  std::string norm;
  std::string name;
  std::vector<std::string> reports;
  std::optional<double> label_fraction;
  std::optional<std::string> loss_scope;
  std::optional<std::string> precision;
  bool observed_t = false;
};

RunConfig resolve_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  Overrides o;
  o.seed = f.seed;
  o.label_fraction = f.label_fraction;
  if (f.loss_scope) o.loss_scope = parse_loss_scope(*f.loss_scope);
  if (f.precision) o.precision = parse_precision(*f.precision);
  apply_overrides(c, o);
  c.validate();
  return c;
}

fs::path require_dir(const std::string& value, const char* flag, const char* what) {
  if (value.empty()) throw StageError(std::string("missing ") + what + " (" + flag + ")");
  if (!fs::exists(value)) throw StageError(std::string(what) + " not found: " + value);
  return value;
}

fs::path require_out(const std::string& value) {
  if (value.empty()) throw StageError("missing output directory (--out)");
  fs::create_directories(value);
  return value;
}

// A split tensor directory holds train/ and test/; a plain one is used as is.
fs::path train_part(const fs::path& dir) { return fs::exists(dir / "train" / "meta.json") ? dir / "train" : dir; }
fs::path test_part(const fs::path& dir) { return fs::exists(dir / "test" / "meta.json") ? dir / "test" : dir; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, text);
}

void write_log(const fs::path& dir, const TrainLog& log) {
  std::ostringstream os;
  write_train_log(os, log);
  write_text(dir / "train_log.jsonl", os.str());
}

FeatureTensor concat(const FeatureTensor& a, const FeatureTensor& b) {
  if (a.t != b.t || a.d != b.d) throw StageError("train and test tensors have different shapes");
  FeatureTensor out = a;
  out.n = a.n + b.n;
  out.values.insert(out.values.end(), b.values.begin(), b.values.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.bike_ids.insert(out.bike_ids.end(), b.bike_ids.begin(), b.bike_ids.end());
  return out;
}

std::string model_name(const Checkpoint& ckpt) {
  if (ckpt.info.phase == "finetune") return "SSTransformer";
  if (ckpt.info.phase == "scratch") return "Transformer";
  return ckpt.info.phase;
}

void append_reports(const fs::path& path, std::vector<MetricsReport>& into) {
  std::ifstream in(path);
  if (!in) throw StageError("report file not found: " + path.string());
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) into.push_back(report_from_json_line(line));
}

std::string report_lines(const std::vector<MetricsReport>& reports) {
  std::string s;
  for (const auto& r : reports) s += report_to_json_line(r) + "\n";
  return s;
}

// ---- stages ---------------------------------------------------------------

void stage_synth(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto fleet = generate_fleet(c.synth);
  write_fleet(fleet, out);
  write_resolved_config(c, out);
  log << "synth: " << c.synth.n_bikes << " bikes, " << fleet.tables.trips.size() << " trips, "
      << fleet.tables.gps.size() << " gps points -> " << out.string() << "\n";
}

void stage_ingest(const RunConfig& c, const fs::path& data, const fs::path& out, std::ostream& log) {
  const auto raw = read_raw_dir(data);
  const auto assembled = assemble_records(raw.trips, raw.gps, raw.labels);
  const auto split = stratified_split(assembled.records, c.split_ratio, c.split_seed);
  write_raw_dir(out / "train", flatten_records(split.train));
  write_raw_dir(out / "test", flatten_records(split.test));
  auto counts = [](const std::vector<BikeRecord>& rs) {
    std::size_t u = 0;
    for (const auto& r : rs) u += r.label == Status::Unusable;
    return nlohmann::ordered_json{{"normal", rs.size() - u}, {"unusable", u}};
  };
  nlohmann::ordered_json report;
  report["kept"] = assembled.records.size();
  report["skipped"] = assembled.skipped;
  report["skipped_ids"] = assembled.skipped_ids;
  report["train"] = counts(split.train);
  report["test"] = counts(split.test);
  write_text(out / "ingest_report.json", report.dump(2) + "\n");
  write_resolved_config(c, out);
  log << "ingest: " << assembled.records.size() << " bikes kept, " << assembled.skipped << " skipped; train "
      << split.train.size() << ", test " << split.test.size() << "\n";
}

std::vector<BikeRecord> load_records(const fs::path& dir) {
  const auto raw = read_raw_dir(dir);
  return assemble_records(raw.trips, raw.gps, raw.labels).records;
}

// The tensor's T wins over the configured one; featurize may have chosen it
// from the observed trajectory lengths.
RunConfig follow_tensor_t(RunConfig c, const FeatureTensor& data, std::ostream& log) {
  if (data.t != c.model.t_steps) {
    log << "model t_steps " << c.model.t_steps << " -> " << data.t << " (from tensor)\n";
    c.model.t_steps = static_cast<int>(data.t);
  }
  return c;
}

void stage_featurize(RunConfig c, const fs::path& data, const fs::path& out, const std::string& norm_dir,
                     bool observed_t, std::ostream& log) {
  std::optional<NormStats> frozen;
  if (!norm_dir.empty()) frozen = load_feature_tensor(require_dir(norm_dir, "--norm", "normalization tensor")).norm;
  const bool split = fs::exists(data / "train") && fs::exists(data / "test");
  if (observed_t) c.model.t_steps = observed_t_steps(load_records(split ? data / "train" : data));
  const int t = c.model.t_steps;
  if (split) {
    const auto train = build_dataset(load_records(data / "train"), frozen, t);
    const auto test = build_dataset(load_records(data / "test"), train.norm, t);
    save_feature_tensor(train, out / "train");
    save_feature_tensor(test, out / "test");
    log << "featurize: train n=" << train.n << ", test n=" << test.n << ", T=" << t << "\n";
  } else {
    const auto ft = build_dataset(load_records(data), frozen, t);
    save_feature_tensor(ft, out);
    log << "featurize: n=" << ft.n << ", T=" << t << "\n";
  }
  write_resolved_config(c, out);
}

template <typename Scalar>
void pretrain_as(const RunConfig& c, const FeatureTensor& data, const fs::path& out, std::ostream& log) {
  const auto result = pretrain<Scalar>(data, c.model, c.pretrain);
  save_checkpoint(make_checkpoint(result.model, {"pretrain", c.pretrain.epochs, result.log.final_loss}), out);
  write_log(out, result.log);
  log << "pretrain: " << c.pretrain.epochs << " epochs, final loss " << result.log.final_loss << "\n";
}

void stage_pretrain(RunConfig c, const fs::path& tensor, const fs::path& out, std::ostream& log) {
  auto data = load_feature_tensor(train_part(tensor));
  if (c.pretrain_data == PretrainData::AllBikes && test_part(tensor) != train_part(tensor))
    data = concat(data, load_feature_tensor(test_part(tensor)));
  c = follow_tensor_t(std::move(c), data, log);
  if (c.pretrain.precision == Precision::F64) pretrain_as<double>(c, data, out, log);
  else pretrain_as<float>(c, data, out, log);
  write_resolved_config(c, out);
}

template <typename Scalar>
void finetune_as(const RunConfig& c, const FeatureTensor& data, const Checkpoint& ckpt, const fs::path& out,
                 std::ostream& log) {
  const auto result = finetune<Scalar>(data, ckpt, c.finetune);
  save_checkpoint(make_checkpoint(result.model, {"finetune", c.finetune.epochs, result.log.final_loss}), out);
  write_log(out, result.log);
  log << "finetune: " << c.finetune.epochs << " epochs, final loss " << result.log.final_loss
      << ", train accuracy " << result.log.final_train_accuracy.value_or(0.0) << "\n";
}

void stage_finetune(const RunConfig& c, const fs::path& tensor, const fs::path& ckpt_dir, const fs::path& out,
                    std::ostream& log) {
  const auto data = load_feature_tensor(train_part(tensor));
  const auto ckpt = load_checkpoint(ckpt_dir);
  if (c.finetune.precision == Precision::F64) finetune_as<double>(c, data, ckpt, out, log);
  else finetune_as<float>(c, data, ckpt, out, log);
  write_resolved_config(c, out);
}

template <typename Scalar>
MetricsReport scratch_as(const RunConfig& c, const FeatureTensor& train, const FeatureTensor& test,
                         const fs::path& out) {
  const auto result = train_scratch_transformer<Scalar>(train, c.model, c.scratch);
  save_checkpoint(make_checkpoint(result.model, {"scratch", c.scratch.epochs, result.log.final_loss}), out);
  write_log(out, result.log);
  return evaluate(result.model, test, "Transformer");
}

void stage_baselines(RunConfig c, const fs::path& tensor, const fs::path& out, std::ostream& log) {
  const auto train = load_feature_tensor(train_part(tensor));
  const auto test = load_feature_tensor(test_part(tensor));
  c = follow_tensor_t(std::move(c), train, log);
  std::vector<MetricsReport> reports;
  reports.push_back(evaluate_logreg(train, test, c.logreg));
  reports.push_back(evaluate_knn(train, test, c.knn_k));
  reports.push_back(c.scratch.precision == Precision::F64 ? scratch_as<double>(c, train, test, out / "scratch")
                                                          : scratch_as<float>(c, train, test, out / "scratch"));
  write_text(out / "reports.jsonl", report_lines(reports));
  write_resolved_config(c, out);
  for (const auto& r : reports) log << "baseline " << r.model << ": f1 " << r.f1 << "\n";
}

Checkpoint require_checkpoint(const std::string& path) {
  return load_checkpoint(require_dir(path, "--checkpoint", "trained model checkpoint"));
}

void stage_eval(const RunConfig& c, const fs::path& tensor, const Checkpoint& ckpt, const fs::path& out,
                std::string name, std::ostream& log) {
  const auto data = load_feature_tensor(test_part(tensor));
  if (name.empty()) name = model_name(ckpt);
  const auto report = evaluate(model_from_checkpoint<double>(ckpt), data, name);
  write_text(out / "report.jsonl", report_to_json_line(report) + "\n");
  write_resolved_config(c, out);
  log << "eval " << name << ": acc " << report.accuracy << ", f1 " << report.f1 << "\n";
}

void stage_predict(const RunConfig& c, const fs::path& tensor, const Checkpoint& ckpt, const fs::path& out,
                   std::ostream& log) {
  const auto data = load_feature_tensor(test_part(tensor));
  const auto probs = predict_probabilities(model_from_checkpoint<double>(ckpt), data);
  std::string text = "bike_id,prob_unusable,status\n";
  char buf[64];
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%.6f,%d\n", probs[i][1], static_cast<int>(decide(probs[i][0], probs[i][1])));
    text += data.bike_ids[i] + buf;
  }
  write_text(out / "predictions.csv", text);
  write_resolved_config(c, out);
  log << "predict: " << probs.size() << " rows -> " << (out / "predictions.csv").string() << "\n";
}

void stage_report(const RunConfig& c, const std::vector<std::string>& files, const fs::path& out, std::ostream& os) {
  if (files.empty()) throw StageError("missing report files (--reports)");
  std::vector<MetricsReport> reports;
  for (const auto& f : files) append_reports(f, reports);
  const auto table = render_table(reports);
  write_text(out / "table.txt", table.text);
  write_text(out / "report.jsonl", report_lines(reports));
  write_resolved_config(c, out);
  os << table.text;
}

void stage_pipeline(const RunConfig& c, const fs::path& out, bool observed_t, std::ostream& os, std::ostream& log) {
  stage_synth(c, out / "data", log);
  stage_ingest(c, out / "data", out / "split", log);
  stage_featurize(c, out / "split", out / "features", "", observed_t, log);
  stage_pretrain(c, out / "features", out / "pretrain", log);
  stage_finetune(c, out / "features", out / "pretrain", out / "finetune", log);
  stage_eval(c, out / "features", load_checkpoint(out / "finetune"), out / "eval", "", log);
  stage_baselines(c, out / "features", out / "baselines", log);
  stage_report(c, {(out / "baselines" / "reports.jsonl").string(), (out / "eval" / "report.jsonl").string()},
               out / "report", os);
  write_resolved_config(c, out);
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "reseed every stage");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--label-fraction", f.label_fraction, "fraction of labeled training rows per class");
  cmd->add_option("--loss-scope", f.loss_scope, "pretraining loss scope: full|masked");
  cmd->add_option("--precision", f.precision, "training precision: f32|f64");
}

}  // namespace

std::string usage() {
  std::string s = "usage: sstbike <command> [options]\n\ncommands:\n";
  for (const auto& [name, help] : kCommands) {
    std::string padded = name;
    padded.resize(17, ' ');
    s += "  " + padded + help + "\n";
  }
  s += "\nrun 'sstbike <command> --help' for the options of a command\n";
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << usage();
    return 2;
  }
  const std::string& command = args.front();
  if (command == "--help" || command == "-h" || command == "help") {
    out << usage();
    return 0;
  }
  const bool known = std::any_of(kCommands.begin(), kCommands.end(), [&](const auto& c) { return c.first == command; });
  if (!known) {
    err << "unknown command '" << command << "'\n\n" << usage();
    return 2;
  }

  CLI::App app{"sstbike " + command};
  app.name("sstbike " + command);
  Flags f;
  add_common(&app, f);
  if (command == "ingest" || command == "featurize") app.add_option("--data", f.data, "input data directory");
  if (command == "featurize") app.add_option("--norm", f.norm, "tensor directory whose statistics are reused");
  if (command == "featurize" || command == "pipeline")
    app.add_flag("--observed-t", f.observed_t, "use the longest training trajectory (capped at 256) as T");
  if (command == "pretrain" || command == "finetune" || command == "train-baselines" || command == "eval" ||
      command == "predict")
    app.add_option("--tensor", f.tensor, "feature tensor directory (train/ and test/ are used when present)");
  if (command == "finetune" || command == "eval" || command == "predict")
    app.add_option("--checkpoint", f.checkpoint, "checkpoint directory");
  if (command == "eval") app.add_option("--name", f.name, "model name in the report");
  if (command == "report") app.add_option("--reports", f.reports, "report JSONL files")->expected(1, -1);

  try {
    std::vector<std::string> rest(args.begin() + 1, args.end());
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "sstbike " << command << ": " << e.what() << "\n";
    return 2;
  }

  RunConfig config;
  try {
    config = resolve_config(f);
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << "\n";
    return 1;
  }

  try {
    if (command == "synth") {
      stage_synth(config, require_out(f.out), err);
    } else if (command == "ingest") {
      const auto data = require_dir(f.data, "--data", "raw data directory");
      stage_ingest(config, data, require_out(f.out), err);
    } else if (command == "featurize") {
      const auto data = require_dir(f.data, "--data", "data directory");
      stage_featurize(config, data, require_out(f.out), f.norm, f.observed_t, err);
    } else if (command == "pretrain") {
      const auto tensor = require_dir(f.tensor, "--tensor", "feature tensor");
      stage_pretrain(config, tensor, require_out(f.out), err);
    } else if (command == "finetune") {
      const auto tensor = require_dir(f.tensor, "--tensor", "feature tensor");
      const auto ckpt = require_dir(f.checkpoint, "--checkpoint", "pretrained checkpoint");
      stage_finetune(config, tensor, ckpt, require_out(f.out), err);
    } else if (command == "train-baselines") {
      const auto tensor = require_dir(f.tensor, "--tensor", "feature tensor");
      stage_baselines(config, tensor, require_out(f.out), err);
    } else if (command == "eval") {
      const auto tensor = require_dir(f.tensor, "--tensor", "feature tensor");
      const auto ckpt = require_checkpoint(f.checkpoint);
      stage_eval(config, tensor, ckpt, require_out(f.out), f.name, err);
    } else if (command == "predict") {
      const auto tensor = require_dir(f.tensor, "--tensor", "feature tensor");
      const auto ckpt = require_checkpoint(f.checkpoint);
      stage_predict(config, tensor, ckpt, require_out(f.out), err);
    } else if (command == "report") {
      stage_report(config, f.reports, require_out(f.out), out);
    } else if (command == "pipeline") {
      stage_pipeline(config, require_out(f.out), f.observed_t, out, err);
    }
  } catch (const std::exception& e) {
    err << command << " failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

void keep_heap_resident() {
  // Large activations would otherwise go through mmap/munmap each step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

int run(int argc, char** argv) {
  keep_heap_resident();
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace sst::cli
