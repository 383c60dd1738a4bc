#pragma once

#include "sst/checkpoint.hpp"
#include "sst/feature_engine.hpp"
#include "sst/model.hpp"
#include "sst/numerics/adam.hpp"
#include "sst/rng.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sst {

enum class LossScope { Full, MaskedOnly };
enum class Precision { F32, F64 };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  LossScope loss_scope = LossScope::Full;
  double label_fraction = 1.0;
  Precision precision = Precision::F32;

  void validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be finite and >= 0");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0))
      throw ConfigError("train config: label_fraction must lie in (0, 1]");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochLog {
  std::string phase;
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  double final_loss = 0.0;
  std::optional<double> final_train_accuracy;
};

/// One JSON object per line: {"phase","epoch","loss","seconds"}.
inline void write_train_log(std::ostream& out, const TrainLog& log) {
  for (const auto& e : log.epochs)
    out << nlohmann::json{{"phase", e.phase}, {"epoch", e.epoch}, {"loss", e.loss}, {"seconds", e.seconds}}.dump()
        << '\n';
}

// Substream tags for derive_seed.
namespace seed_tag {
inline constexpr std::uint64_t kInit = 1, kShuffle = 2, kMask = 3, kDropout = 4, kHead = 5, kLabels = 6;
}

/// Mean absolute reconstruction error over all N*T*D cells. With
/// LossScope::MaskedOnly the mean runs over the cells of masked steps only.
template <typename Scalar>
Tensor<Scalar> mae_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& xr, LossScope scope = LossScope::Full,
                        const MaskSpec* mask = nullptr) {
  if (scope == LossScope::Full) return mean_abs_error(x, xr);
  if (!mask) throw std::invalid_argument("mae_loss: masked scope needs a mask");
  return mean_abs_error(x, xr, std::span<const std::uint8_t>(mask->masked));
}

/// Mean negative log-likelihood of the true class from probability rows,
/// probabilities clamped to [1e-12, 1 - 1e-12].
template <typename Scalar>
Tensor<Scalar> ce_loss(std::span<const int> labels, const Tensor<Scalar>& probs) {
  return nll_of_probs(probs, labels, 1e-12);
}

/// Rows `rows` of the feature tensor as an [rows, T, D] tensor.
template <typename Scalar>
Tensor<Scalar> gather_batch(const FeatureTensor& ft, std::span<const std::size_t> rows) {
  const auto stride = static_cast<std::size_t>(ft.t * ft.d);
  typename Tensor<Scalar>::Array v(static_cast<Index>(rows.size() * stride));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < stride; ++j)
      v(static_cast<Index>(i * stride + j)) = static_cast<Scalar>(ft.values[rows[i] * stride + j]);
  return Tensor<Scalar>({static_cast<Index>(rows.size()), ft.t, ft.d}, std::move(v));
}

inline std::vector<int> label_ints(const FeatureTensor& ft, std::span<const std::size_t> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) {
    if (!ft.labels[r]) throw std::invalid_argument("sample " + ft.bike_ids[r] + " is unlabeled");
    y.push_back(static_cast<int>(*ft.labels[r]));
  }
  return y;
}

/// Per class, floor(n_c * fraction) labeled rows chosen by a seeded shuffle,
/// returned in ascending row order.
inline std::vector<std::size_t> subsample_labeled(const FeatureTensor& ft, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < ft.labels.size(); ++i) {
    if (!ft.labels[i]) throw std::invalid_argument("sample " + ft.bike_ids[i] + " is unlabeled");
    by_class[static_cast<int>(*ft.labels[i])].push_back(i);
  }
  if (fraction >= 1.0) {
    std::vector<std::size_t> all(ft.labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<std::size_t> chosen;
  std::mt19937_64 rng(derive_seed(seed, {seed_tag::kLabels}));
  for (auto& members : by_class) {
    const auto take = static_cast<std::size_t>(
        std::floor(static_cast<long double>(members.size()) * fraction + 1e-9L));
    std::shuffle(members.begin(), members.end(), rng);
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline void check_compatible(const ModelConfig& c, const FeatureTensor& ft) {
  if (c.t_steps != ft.t || c.input_dim != ft.d)
    throw ConfigError("model expects T=" + std::to_string(c.t_steps) + ", D=" + std::to_string(c.input_dim) +
                      " but tensor has T=" + std::to_string(ft.t) + ", D=" + std::to_string(ft.d));
}

template <typename Scalar>
struct TrainResult {
  SSTransformer<Scalar> model;
  TrainLog log;
};

namespace detail {

template <typename Fn>
void for_each_batch(std::size_t n, int epoch, const TrainConfig& tcfg, Fn&& step) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(tcfg.seed, {seed_tag::kShuffle, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto bs = static_cast<std::size_t>(tcfg.batch_size);
  for (std::size_t start = 0, b = 0; start < n; start += bs, ++b)
    step(std::span<const std::size_t>(order).subspan(start, std::min(bs, n - start)), b);
}

inline void check_finite(double loss, const std::string& phase, int epoch) {
  if (!std::isfinite(loss))
    throw std::runtime_error(phase + " diverged at epoch " + std::to_string(epoch) + " (loss is not finite)");
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Masked-reconstruction pretraining from a fresh initialization. Labels are
/// ignored. Every batch draws a fresh mask and dropout stream derived from
/// (seed, epoch, batch).
template <typename Scalar>
TrainResult<Scalar> pretrain(const FeatureTensor& data, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  check_compatible(mcfg, data);
  if (data.n == 0) throw std::invalid_argument("pretrain: empty tensor");
  TrainResult<Scalar> out{SSTransformer<Scalar>(mcfg, derive_seed(tcfg.seed, {seed_tag::kInit})), {}};
  auto& model = out.model;
  auto& params = model.parameters();
  AdamState<Scalar> adam(AdamOptions{tcfg.lr});
  const auto n = static_cast<std::size_t>(data.n);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double total = 0.0;
    detail::for_each_batch(n, epoch, tcfg, [&](std::span<const std::size_t> rows, std::size_t b) {
      const auto x = gather_batch<Scalar>(data, rows);
      const auto tags = {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)};
      const auto mask = generate_mask(x.dim(0), x.dim(1), mcfg.mask_ratio, mcfg.mask_mean_len,
                                      derive_seed(derive_seed(tcfg.seed, {seed_tag::kMask}), tags));
      std::mt19937_64 drop_rng(derive_seed(derive_seed(tcfg.seed, {seed_tag::kDropout}), tags));
      const auto recon = model.reconstruct_masked(x, mask, Mode::Train, &drop_rng);
      const auto loss = mae_loss(x, recon, tcfg.loss_scope, &mask);
      for (auto& p : params) p.clear_grad();
      backward(loss);
      adam_step(params, adam);
      total += static_cast<double>(loss.item()) * static_cast<double>(rows.size());
    });
    const double epoch_loss = total / static_cast<double>(n);
    detail::check_finite(epoch_loss, "pretraining", epoch);
    out.log.epochs.push_back({"pretrain", epoch, epoch_loss, detail::seconds_since(t0)});
  }
  for (auto& p : params) p.clear_grad();
  out.log.final_loss = out.log.epochs.back().loss;
  return out;
}

/// Time-pooled encoder features [rows, d_model] in eval mode, no graph.
template <typename Scalar>
Tensor<Scalar> pooled_features(const SSTransformer<Scalar>& model, const FeatureTensor& data,
                               std::span<const std::size_t> rows, std::size_t batch = 128) {
  NoGradGuard guard;
  const auto dm = static_cast<Index>(model.config().d_model);
  typename Tensor<Scalar>::Array pooled(static_cast<Index>(rows.size()) * dm);
  for (std::size_t start = 0; start < rows.size(); start += batch) {
    const auto chunk = rows.subspan(start, std::min(batch, rows.size() - start));
    const auto h = mean_over_time(model.encode(model.embed(gather_batch<Scalar>(data, chunk)), Mode::Eval));
    pooled.segment(static_cast<Index>(start) * dm, h.size()) = h.value();
  }
  return Tensor<Scalar>({static_cast<Index>(rows.size()), dm}, std::move(pooled));
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& m, std::span<const std::size_t> rows) {
  const Index w = m.dim(1);
  typename Tensor<Scalar>::Array v(static_cast<Index>(rows.size()) * w);
  for (std::size_t i = 0; i < rows.size(); ++i)
    v.segment(static_cast<Index>(i) * w, w) = m.value().segment(static_cast<Index>(rows[i]) * w, w);
  return Tensor<Scalar>({static_cast<Index>(rows.size()), w}, std::move(v));
}

/// Linear probing: loads the checkpoint, attaches a fresh head and trains
/// only head.w / head.b against ce_loss. The encoder runs in eval mode and
/// is never updated, so its pooled features are computed once.
template <typename Scalar>
TrainResult<Scalar> finetune(const FeatureTensor& data, const Checkpoint& ckpt, const TrainConfig& tcfg) {
  tcfg.validate();
  check_compatible(ckpt.config, data);
  if (!data.fully_labeled()) throw std::invalid_argument("finetune: tensor has unlabeled samples");
  TrainResult<Scalar> out{model_from_checkpoint<Scalar>(ckpt), {}};
  auto& model = out.model;
  model.reset_head(derive_seed(tcfg.seed, {seed_tag::kHead}));

  const auto rows = subsample_labeled(data, tcfg.label_fraction, tcfg.seed);
  if (rows.empty()) throw std::invalid_argument("finetune: label_fraction leaves no training rows");
  const auto labels = label_ints(data, rows);
  const auto features = pooled_features(model, data, rows);
  std::vector<Tensor<Scalar>> head = {model.param("head.w"), model.param("head.b")};
  AdamState<Scalar> adam(AdamOptions{tcfg.lr});

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double total = 0.0;
    detail::for_each_batch(rows.size(), epoch, tcfg, [&](std::span<const std::size_t> local, std::size_t) {
      std::vector<int> y;
      for (std::size_t i : local) y.push_back(labels[i]);
      const auto loss = ce_loss<Scalar>(y, model.classify_pooled(gather_rows(features, local)));
      for (auto& p : head) p.clear_grad();
      backward(loss);
      adam_step(head, adam);
      total += static_cast<double>(loss.item()) * static_cast<double>(local.size());
    });
    const double epoch_loss = total / static_cast<double>(rows.size());
    detail::check_finite(epoch_loss, "finetuning", epoch);
    out.log.epochs.push_back({"finetune", epoch, epoch_loss, detail::seconds_since(t0)});
  }
  for (auto& p : head) p.clear_grad();
  out.log.final_loss = out.log.epochs.back().loss;

  NoGradGuard guard;
  const auto probs = model.classify_pooled(features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    correct += static_cast<int>(probs.value()(static_cast<Index>(2 * i + 1)) > probs.value()(static_cast<Index>(2 * i))) == labels[i];
  out.log.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  return out;
}

/// Masked reconstruction error of `model` on `data` in eval mode, with
/// masks derived from `seed`.
template <typename Scalar>
double reconstruction_mae(const SSTransformer<Scalar>& model, const FeatureTensor& data, std::uint64_t seed,
                          LossScope scope = LossScope::Full, std::size_t batch = 128) {
  NoGradGuard guard;
  const auto& c = model.config();
  const auto n = static_cast<std::size_t>(data.n);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  double total = 0.0, weight = 0.0;
  for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
    const auto chunk = std::span<const std::size_t>(rows).subspan(start, std::min(batch, n - start));
    const auto x = gather_batch<Scalar>(data, chunk);
    const auto mask = generate_mask(x.dim(0), x.dim(1), c.mask_ratio, c.mask_mean_len,
                                    derive_seed(seed, {static_cast<std::uint64_t>(b)}));
    const auto loss = mae_loss(x, model.reconstruct_masked(x, mask, Mode::Eval), scope, &mask);
    double cells = static_cast<double>(x.size());
    if (scope == LossScope::MaskedOnly) {
      cells = 0;
      for (auto m : mask.masked) cells += m;
    }
    total += static_cast<double>(loss.item()) * cells;
    weight += cells;
  }
  return total / weight;
}

}  // namespace sst
