#pragma once

#include "sst/data_model.hpp"
#include "sst/evaluation.hpp"
#include "sst/feature_engine.hpp"
#include "sst/model.hpp"
#include "sst/training.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sst {

inline constexpr int kFlatDim = 5;

/// One row per bike: (cum_distance_km, trip_count, total_time_min, mean lat,
/// mean lon), read from a feature tensor. The aggregate channels are constant
/// over time so their first step is taken; coordinates are averaged over T.
struct FlatFeatures {
  Eigen::MatrixXd x;  // n x kFlatDim
  std::vector<Status> y;  // empty when the tensor is unlabeled
};

FlatFeatures flatten_features(const FeatureTensor& ft);

struct FlatScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // population std, floored at kStdFloor
};

FlatScaler fit_flat_scaler(const Eigen::MatrixXd& x);
Eigen::MatrixXd apply_flat_scaler(const FlatScaler& s, const Eigen::MatrixXd& x);

struct LogRegModel {
  Eigen::VectorXd w;
  double b = 0.0;

  /// P(Unusable | row).
  double probability(const Eigen::Ref<const Eigen::VectorXd>& row) const;
  Status predict(const Eigen::Ref<const Eigen::VectorXd>& row) const;
};

struct LogRegOptions {
  int epochs = 200;
  double lr = 0.1;
  int batch_size = 32;
  std::uint64_t seed = 42;
  friend bool operator==(const LogRegOptions&, const LogRegOptions&) = default;
};

struct LogRegGradient {
  Eigen::VectorXd w;
  double b = 0.0;
};

/// Mean binary cross-entropy of `m` over the selected rows (all rows when
/// `rows` is empty); fills `grad` with its analytic gradient when non-null.
double logreg_loss(const LogRegModel& m, const Eigen::MatrixXd& x, std::span<const Status> y,
                   LogRegGradient* grad = nullptr, std::span<const std::size_t> rows = {});

/// Mini-batch gradient descent from zero weights with a seeded shuffle.
LogRegModel train_logreg(const Eigen::MatrixXd& x, std::span<const Status> y, const LogRegOptions& opts);

/// Majority label among the k nearest training rows by Euclidean distance.
/// Equal distances keep the lower training index; a split vote is Normal.
Status knn_predict(const Eigen::MatrixXd& train_x, std::span<const Status> train_y,
                   const Eigen::Ref<const Eigen::VectorXd>& query, int k);

/// Same architecture as the self-supervised model, trained end to end on
/// ce_loss from a fresh initialization with dropout active.
template <typename Scalar>
TrainResult<Scalar> train_scratch_transformer(const FeatureTensor& data, const ModelConfig& mcfg,
                                              const TrainConfig& tcfg) {
  tcfg.validate();
  check_compatible(mcfg, data);
  if (!data.fully_labeled()) throw std::invalid_argument("scratch transformer: tensor has unlabeled samples");
  TrainResult<Scalar> out{SSTransformer<Scalar>(mcfg, derive_seed(tcfg.seed, {seed_tag::kInit})), {}};
  auto& model = out.model;
  auto& params = model.parameters();
  const auto rows = subsample_labeled(data, tcfg.label_fraction, tcfg.seed);
  if (rows.empty()) throw std::invalid_argument("scratch transformer: label_fraction leaves no training rows");
  const auto labels = label_ints(data, rows);
  AdamState<Scalar> adam(AdamOptions{tcfg.lr});

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double total = 0.0;
    detail::for_each_batch(rows.size(), epoch, tcfg, [&](std::span<const std::size_t> local, std::size_t b) {
      std::vector<std::size_t> batch_rows;
      std::vector<int> y;
      for (std::size_t i : local) {
        batch_rows.push_back(rows[i]);
        y.push_back(labels[i]);
      }
      std::mt19937_64 drop_rng(derive_seed(derive_seed(tcfg.seed, {seed_tag::kDropout}),
                                           {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)}));
      const auto probs = model.predict_proba(gather_batch<Scalar>(data, batch_rows), Mode::Train, &drop_rng);
      const auto loss = ce_loss<Scalar>(y, probs);
      for (auto& p : params) p.clear_grad();
      backward(loss);
      adam_step(params, adam);
      total += static_cast<double>(loss.item()) * static_cast<double>(local.size());
    });
    const double epoch_loss = total / static_cast<double>(rows.size());
    detail::check_finite(epoch_loss, "scratch training", epoch);
    out.log.epochs.push_back({"scratch", epoch, epoch_loss, detail::seconds_since(t0)});
  }
  for (auto& p : params) p.clear_grad();
  out.log.final_loss = out.log.epochs.back().loss;
  return out;
}

/// Logistic regression and kNN fitted on `train` (scaler fitted on train),
/// scored on `test`. Reports carry no complexity columns.
MetricsReport evaluate_logreg(const FeatureTensor& train, const FeatureTensor& test, const LogRegOptions& opts);
MetricsReport evaluate_knn(const FeatureTensor& train, const FeatureTensor& test, int k);

}  // namespace sst
