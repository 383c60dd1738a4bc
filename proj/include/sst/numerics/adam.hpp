#pragma once

#include "sst/numerics/tensor.hpp"

#include <cmath>
#include <vector>

namespace sst {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  using Array = typename Tensor<Scalar>::Array;

  AdamOptions options;
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
  long step = 0;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

/// One bias-corrected Adam update over `params`, reading each tensor's
/// accumulated gradient. Tensors without a gradient are left untouched.
/// Moments are allocated on the first call.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  using Array = typename Tensor<Scalar>::Array;
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Array::Zero(p.size()));
      state.second_moment.push_back(Array::Zero(p.size()));
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                     " tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.first_moment[i].size() != params[i].size() ||
        state.second_moment[i].size() != params[i].size())
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i) +
                       " of shape " + shape_str(params[i].shape()));

  ++state.step;
  const auto& o = state.options;
  const Scalar b1 = Scalar(o.beta1), b2 = Scalar(o.beta2);
  const Scalar c1 = Scalar(1.0 - std::pow(o.beta1, static_cast<double>(state.step)));
  const Scalar c2 = Scalar(1.0 - std::pow(o.beta2, static_cast<double>(state.step)));
  const Scalar lr = Scalar(o.lr), eps = Scalar(o.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const Array& g = p.grad();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p.mutable_value() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

}  // namespace sst
