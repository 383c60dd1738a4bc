#include "sst/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sst {

FlatFeatures flatten_features(const FeatureTensor& ft) {
  if (ft.d != kFeatureDim) throw std::invalid_argument("flatten_features: tensor must have 5 channels");
  FlatFeatures out;
  out.x.resize(ft.n, kFlatDim);
  for (Index i = 0; i < ft.n; ++i) {
    double lat = 0.0, lon = 0.0;
    for (Index t = 0; t < ft.t; ++t) {
      lat += ft.at(i, t, 0);
      lon += ft.at(i, t, 1);
    }
    out.x(i, 0) = ft.at(i, 0, 2);
    out.x(i, 1) = ft.at(i, 0, 3);
    out.x(i, 2) = ft.at(i, 0, 4);
    out.x(i, 3) = lat / static_cast<double>(ft.t);
    out.x(i, 4) = lon / static_cast<double>(ft.t);
  }
  if (!out.x.allFinite()) throw std::invalid_argument("flatten_features: non-finite values");
  if (ft.fully_labeled())
    for (const auto& l : ft.labels) out.y.push_back(*l);
  return out;
}

FlatScaler fit_flat_scaler(const Eigen::MatrixXd& x) {
  if (x.rows() == 0) throw std::invalid_argument("fit_flat_scaler: no rows");
  FlatScaler s;
  s.mean = x.colwise().mean().transpose();
  s.std = ((x.rowwise() - s.mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
  s.std = s.std.cwiseMax(kStdFloor);
  return s;
}

Eigen::MatrixXd apply_flat_scaler(const FlatScaler& s, const Eigen::MatrixXd& x) {
  if (x.cols() != s.mean.size()) throw std::invalid_argument("apply_flat_scaler: column count mismatch");
  return (x.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array();
}

namespace {

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_labeled(const Eigen::MatrixXd& x, std::span<const Status> y, const char* who) {
  if (x.rows() == 0) throw std::invalid_argument(std::string(who) + ": empty training set");
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(x.rows()) + " rows vs " +
                                std::to_string(y.size()) + " labels");
}

}  // namespace

double LogRegModel::probability(const Eigen::Ref<const Eigen::VectorXd>& row) const {
  return sigmoid(w.dot(row) + b);
}

Status LogRegModel::predict(const Eigen::Ref<const Eigen::VectorXd>& row) const {
  const double p = probability(row);
  return decide(1.0 - p, p);
}

double logreg_loss(const LogRegModel& m, const Eigen::MatrixXd& x, std::span<const Status> y, LogRegGradient* grad,
                   std::span<const std::size_t> rows) {
  check_labeled(x, y, "logreg_loss");
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(y.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows = all;
  }
  if (grad) {
    grad->w = Eigen::VectorXd::Zero(x.cols());
    grad->b = 0.0;
  }
  double loss = 0.0;
  for (std::size_t r : rows) {
    const auto row = x.row(static_cast<Index>(r)).transpose();
    const double z = m.w.dot(row) + m.b;
    const double target = y[r] == Status::Unusable ? 1.0 : 0.0;
    // -[t log s(z) + (1-t) log(1-s(z))] = softplus(z) - t z
    loss += softplus(z) - target * z;
    if (grad) {
      const double residual = sigmoid(z) - target;
      grad->w += residual * row;
      grad->b += residual;
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  if (grad) {
    grad->w *= inv;
    grad->b *= inv;
  }
  return loss * inv;
}

LogRegModel train_logreg(const Eigen::MatrixXd& x, std::span<const Status> y, const LogRegOptions& opts) {
  check_labeled(x, y, "train_logreg");
  if (std::all_of(y.begin(), y.end(), [&](Status s) { return s == y.front(); }))
    throw std::invalid_argument("train_logreg: training set has a single class");
  if (opts.epochs < 1 || opts.batch_size < 1 || !(opts.lr >= 0.0))
    throw std::invalid_argument("train_logreg: epochs and batch_size must be >= 1, lr >= 0");

  LogRegModel m{Eigen::VectorXd::Zero(x.cols()), 0.0};
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(opts.seed);
  const auto bs = static_cast<std::size_t>(opts.batch_size);
  LogRegGradient g;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto batch = std::span<const std::size_t>(order).subspan(start, std::min(bs, order.size() - start));
      logreg_loss(m, x, y, &g, batch);
      m.w -= opts.lr * g.w;
      m.b -= opts.lr * g.b;
    }
  }
  return m;
}

Status knn_predict(const Eigen::MatrixXd& train_x, std::span<const Status> train_y,
                   const Eigen::Ref<const Eigen::VectorXd>& query, int k) {
  check_labeled(train_x, train_y, "knn_predict");
  if (k < 1 || k > train_x.rows())
    throw std::invalid_argument("knn_predict: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(train_x.rows()) + "]");
  if (query.size() != train_x.cols()) throw std::invalid_argument("knn_predict: query dimension mismatch");
  const Eigen::VectorXd dist = (train_x.rowwise() - query.transpose()).rowwise().squaredNorm();
  std::vector<Index> idx(static_cast<std::size_t>(train_x.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  const auto kk = static_cast<std::ptrdiff_t>(k);
  std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](Index a, Index b) {
    return dist(a) < dist(b) || (dist(a) == dist(b) && a < b);
  });
  int unusable = 0;
  for (std::ptrdiff_t i = 0; i < kk; ++i) unusable += train_y[static_cast<std::size_t>(idx[i])] == Status::Unusable;
  return 2 * unusable > k ? Status::Unusable : Status::Normal;
}

namespace {

struct ScaledPair {
  Eigen::MatrixXd train_x, test_x;
  std::vector<Status> train_y, test_y;
};

ScaledPair scaled(const FeatureTensor& train, const FeatureTensor& test) {
  auto tr = flatten_features(train);
  auto te = flatten_features(test);
  if (tr.y.empty() || te.y.empty()) throw std::invalid_argument("baselines need fully labeled tensors");
  const auto scaler = fit_flat_scaler(tr.x);
  return {apply_flat_scaler(scaler, tr.x), apply_flat_scaler(scaler, te.x), std::move(tr.y), std::move(te.y)};
}

}  // namespace

MetricsReport evaluate_logreg(const FeatureTensor& train, const FeatureTensor& test, const LogRegOptions& opts) {
  const auto d = scaled(train, test);
  const auto m = train_logreg(d.train_x, d.train_y, opts);
  std::vector<Status> pred;
  for (Index i = 0; i < d.test_x.rows(); ++i) pred.push_back(m.predict(d.test_x.row(i).transpose()));
  return metrics(confusion(d.test_y, pred), "LogReg");
}

MetricsReport evaluate_knn(const FeatureTensor& train, const FeatureTensor& test, int k) {
  const auto d = scaled(train, test);
  std::vector<Status> pred;
  for (Index i = 0; i < d.test_x.rows(); ++i)
    pred.push_back(knn_predict(d.train_x, d.train_y, d.test_x.row(i).transpose(), k));
  return metrics(confusion(d.test_y, pred), "KNN");
}

}  // namespace sst
