#pragma once

#include "sst/numerics/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>

namespace sst {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

namespace detail {

// Column-major view of a row-major [outer][inner] buffer: one column per
// outer index. Lets suffix broadcasts use Eigen's colwise().
template <typename Scalar>
using ColBlock = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using ConstColBlock = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { Add, Sub, Mul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinaryKind kind) {
  using T = Tensor<Scalar>;
  using Array = typename T::Array;
  const bool b_small = is_suffix(b.shape(), a.shape());
  const bool a_small = !b_small && is_suffix(a.shape(), b.shape());
  if (!b_small && !a_small)
    throw ShapeError("cannot broadcast shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const T& big = b_small ? a : b;
  const T& small = b_small ? b : a;
  const Index inner = small.size();
  const Index outer = big.size() / inner;

  Array out(big.size());
  ConstColBlock<Scalar> B(big.value().data(), inner, outer);
  ColBlock<Scalar> O(out.data(), inner, outer);
  const auto s = small.value().matrix();
  // Operand order matters for Sub only.
  switch (kind) {
    case BinaryKind::Add: O = B.colwise() + s; break;
    case BinaryKind::Mul: O = (B.array().colwise() * s.array()).matrix(); break;
    case BinaryKind::Sub:
      if (b_small) O = B.colwise() - s;
      else O = (-B).colwise() + s;
      break;
  }

  return T::make_result(
      big.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
      [kind, b_small, inner, outer](auto& self) {
        auto* pa = self.parents[0].get();
        auto* pb = self.parents[1].get();
        auto* big_node = b_small ? pa : pb;
        auto* small_node = b_small ? pb : pa;
        ConstColBlock<Scalar> G(self.grad.data(), inner, outer);
        const Scalar big_sign = (kind == BinaryKind::Sub && !b_small) ? Scalar(-1) : Scalar(1);
        const Scalar small_sign = (kind == BinaryKind::Sub && b_small) ? Scalar(-1) : Scalar(1);
        if (kind != BinaryKind::Mul) {
          if (big_node->requires_grad) big_node->grad_buffer() += big_sign * self.grad;
          if (small_node->requires_grad)
            small_node->grad_buffer() += small_sign * G.rowwise().sum().array();
          return;
        }
        const Array& big_val = big_node->value;
        const Array& small_val = small_node->value;
        if (big_node->requires_grad) {
          ColBlock<Scalar> D(big_node->grad_buffer().data(), inner, outer);
          D.array() += G.array().colwise() * small_val;
        }
        if (small_node->requires_grad) {
          ConstColBlock<Scalar> BV(big_val.data(), inner, outer);
          small_node->grad_buffer() += (G.array() * BV.array()).rowwise().sum();
        }
      });
}

}  // namespace detail

/// Elementwise sum; `b` may be a trailing-suffix shape of `a` (or vice versa)
/// and is then broadcast over the leading axes.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::Add);
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::Sub);
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::Mul);
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return Tensor<Scalar>::make_result(x.shape(), x.value() * factor, {x.node_ptr()},
                                     [factor](auto& self) {
                                       self.parents[0]->grad_buffer() += factor * self.grad;
                                     });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return Tensor<Scalar>::make_result(std::move(shape), x.value(), {x.node_ptr()}, [](auto& self) {
    self.parents[0]->grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Array out(1);
  out(0) = x.value().sum();
  return Tensor<Scalar>::make_result({1}, std::move(out), {x.node_ptr()}, [](auto& self) {
    self.parents[0]->grad_buffer() += self.grad(0);
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

/// ReLU; the derivative at exactly 0 is taken as 0.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Array out = x.value().max(Scalar(0));
  return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x.node_ptr()}, [](auto& self) {
    self.parents[0]->grad_buffer() += (self.value > Scalar(0)).select(self.grad, Scalar(0));
  });
}

/// Swaps the last two axes.
template <typename Scalar>
Tensor<Scalar> transpose_last(const Tensor<Scalar>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_str(x.shape()));
  const Index m = x.dim(-2), n = x.dim(-1), batch = x.size() / (m * n);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  typename Tensor<Scalar>::Array out(x.size());
  for (Index b = 0; b < batch; ++b)
    MatrixMap<Scalar>(out.data() + b * m * n, n, m) =
        ConstMatrixMap<Scalar>(x.value().data() + b * m * n, m, n).transpose();
  return Tensor<Scalar>::make_result(std::move(shape), std::move(out), {x.node_ptr()},
                                     [m, n, batch](auto& self) {
                                       auto& g = self.parents[0]->grad_buffer();
                                       for (Index b = 0; b < batch; ++b)
                                         MatrixMap<Scalar>(g.data() + b * m * n, m, n) +=
                                             ConstMatrixMap<Scalar>(self.grad.data() + b * m * n, n, m)
                                                 .transpose();
                                     });
}

/// Batched matrix product over the last two axes. Leading (batch) axes
/// broadcast with the usual right-aligned rules (equal extents, 1, or absent).
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using T = Tensor<Scalar>;
  using Array = typename T::Array;
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2))
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);

  // Fast path: a plain matrix on the right folds a's batch into rows.
  if (b.rank() == 2) {
    const Index rows = a.size() / k;
    Shape shape = a.shape();
    shape.back() = n;
    Array out(rows * n);
    MatrixMap<Scalar>(out.data(), rows, n).noalias() =
        ConstMatrixMap<Scalar>(a.value().data(), rows, k) * ConstMatrixMap<Scalar>(b.value().data(), k, n);
    return T::make_result(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                          [rows, k, n](auto& self) {
                            ConstMatrixMap<Scalar> G(self.grad.data(), rows, n);
                            auto* pa = self.parents[0].get();
                            auto* pb = self.parents[1].get();
                            const auto& av = pa->value;
                            const auto& bv = pb->value;
                            if (pa->requires_grad)
                              MatrixMap<Scalar>(pa->grad_buffer().data(), rows, k).noalias() +=
                                  G * ConstMatrixMap<Scalar>(bv.data(), k, n).transpose();
                            if (pb->requires_grad)
                              MatrixMap<Scalar>(pb->grad_buffer().data(), k, n).noalias() +=
                                  ConstMatrixMap<Scalar>(av.data(), rows, k).transpose() * G;
                          });
  }

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const std::size_t rank = std::max(batch_a.size(), batch_b.size());
  Shape batch(rank);
  std::vector<Index> stride_a(rank, 0), stride_b(rank, 0);
  Index sa = 1, sb = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t r = rank - 1 - i;
    const Index ea = i < batch_a.size() ? batch_a[batch_a.size() - 1 - i] : 1;
    const Index eb = i < batch_b.size() ? batch_b[batch_b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("matmul batch extents not broadcastable: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    batch[r] = std::max(ea, eb);
    stride_a[r] = ea == 1 ? 0 : sa;
    stride_b[r] = eb == 1 ? 0 : sb;
    sa *= ea;
    sb *= eb;
  }
  const Index count = shape_size(batch);
  std::vector<Index> off_a(count), off_b(count);
  std::vector<Index> idx(rank, 0);
  for (Index c = 0; c < count; ++c) {
    Index oa = 0, ob = 0;
    for (std::size_t r = 0; r < rank; ++r) {
      oa += idx[r] * stride_a[r];
      ob += idx[r] * stride_b[r];
    }
    off_a[c] = oa * m * k;
    off_b[c] = ob * k * n;
    for (std::size_t r = rank; r-- > 0;) {
      if (++idx[r] < batch[r]) break;
      idx[r] = 0;
    }
  }

  Shape shape = batch;
  shape.push_back(m);
  shape.push_back(n);
  Array out(count * m * n);
  for (Index c = 0; c < count; ++c)
    MatrixMap<Scalar>(out.data() + c * m * n, m, n).noalias() =
        ConstMatrixMap<Scalar>(a.value().data() + off_a[c], m, k) *
        ConstMatrixMap<Scalar>(b.value().data() + off_b[c], k, n);
  return T::make_result(
      std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
      [m, k, n, count, off_a = std::move(off_a), off_b = std::move(off_b)](auto& self) {
        auto* pa = self.parents[0].get();
        auto* pb = self.parents[1].get();
        const auto& av = pa->value;
        const auto& bv = pb->value;
        for (Index c = 0; c < count; ++c) {
          ConstMatrixMap<Scalar> G(self.grad.data() + c * m * n, m, n);
          if (pa->requires_grad)
            MatrixMap<Scalar>(pa->grad_buffer().data() + off_a[c], m, k).noalias() +=
                G * ConstMatrixMap<Scalar>(bv.data() + off_b[c], k, n).transpose();
          if (pb->requires_grad)
            MatrixMap<Scalar>(pb->grad_buffer().data() + off_b[c], k, n).noalias() +=
                ConstMatrixMap<Scalar>(av.data() + off_a[c], m, k).transpose() * G;
        }
      });
}

/// Softmax along the last axis, max-subtracted.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  const Index n = x.dim(-1), rows = x.size() / n;
  typename Tensor<Scalar>::Array out(x.size());
  ConstMatrixMap<Scalar> X(x.value().data(), rows, n);
  MatrixMap<Scalar> Y(out.data(), rows, n);
  for (Index r = 0; r < rows; ++r) {
    Y.row(r) = (X.row(r).array() - X.row(r).maxCoeff()).exp().matrix();
    Y.row(r) /= Y.row(r).sum();
  }
  return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x.node_ptr()}, [rows, n](auto& self) {
    ConstMatrixMap<Scalar> Yv(self.value.data(), rows, n);
    ConstMatrixMap<Scalar> G(self.grad.data(), rows, n);
    MatrixMap<Scalar> D(self.parents[0]->grad_buffer().data(), rows, n);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = G.cwiseProduct(Yv).rowwise().sum();
    D.array() += Yv.array() * (G.colwise() - dots).array();
  });
}

/// Per-row normalization over the last axis followed by an affine map.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  using T = Tensor<Scalar>;
  using Array = typename T::Array;
  const Index d = x.dim(-1), rows = x.size() / d;
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm affine size mismatch: x " + shape_str(x.shape()) + ", gain " +
                     shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  Array xhat(x.size());
  Array inv_std(rows);
  ConstMatrixMap<Scalar> X(x.value().data(), rows, d);
  MatrixMap<Scalar> Xh(xhat.data(), rows, d);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = X.row(r).mean();
    const Scalar var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    Xh.row(r) = (X.row(r).array() - mu).matrix() * inv_std(r);
  }
  Array out(x.size());
  MatrixMap<Scalar>(out.data(), rows, d) =
      (Xh.array().rowwise() * gain.value().transpose()).rowwise() + bias.value().transpose();
  return T::make_result(
      x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](auto& self) {
        ConstMatrixMap<Scalar> G(self.grad.data(), rows, d);
        ConstMatrixMap<Scalar> Xh(xhat.data(), rows, d);
        auto* px = self.parents[0].get();
        auto* pg = self.parents[1].get();
        auto* pb = self.parents[2].get();
        const auto& g = pg->value;
        if (pg->requires_grad) pg->grad_buffer() += G.cwiseProduct(Xh).colwise().sum().transpose().array();
        if (pb->requires_grad) pb->grad_buffer() += G.colwise().sum().transpose().array();
        if (px->requires_grad) {
          MatrixMap<Scalar> D(px->grad_buffer().data(), rows, d);
          for (Index r = 0; r < rows; ++r) {
            const auto dxh = (G.row(r).array() * g.transpose()).eval();
            const Scalar m1 = dxh.mean();
            const Scalar m2 = (dxh * Xh.row(r).array()).mean();
            D.row(r).array() += inv_std(r) * (dxh - m1 - Xh.row(r).array() * m2);
          }
        }
      });
}

/// [N, T, d] -> [N, d], averaging over axis 1.
template <typename Scalar>
Tensor<Scalar> mean_over_time(const Tensor<Scalar>& x) {
  if (x.rank() != 3) throw ShapeError("mean_over_time needs [N,T,d], got " + shape_str(x.shape()));
  const Index N = x.dim(0), T = x.dim(1), d = x.dim(2);
  typename Tensor<Scalar>::Array out(N * d);
  for (Index i = 0; i < N; ++i)
    MatrixMap<Scalar>(out.data() + i * d, 1, d) =
        ConstMatrixMap<Scalar>(x.value().data() + i * T * d, T, d).colwise().mean();
  return Tensor<Scalar>::make_result({N, d}, std::move(out), {x.node_ptr()}, [N, T, d](auto& self) {
    auto& g = self.parents[0]->grad_buffer();
    const Scalar inv = Scalar(1) / static_cast<Scalar>(T);
    for (Index i = 0; i < N; ++i)
      MatrixMap<Scalar>(g.data() + i * T * d, T, d).rowwise() +=
          ConstMatrixMap<Scalar>(self.grad.data() + i * d, 1, d).row(0) * inv;
  });
}

/// [N, T, H*dk] -> [N, H, T, dk].
template <typename Scalar>
Tensor<Scalar> split_heads(const Tensor<Scalar>& x, Index heads) {
  if (x.rank() != 3 || x.dim(2) % heads != 0)
    throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                     std::to_string(heads) + " heads");
  const Index N = x.dim(0), T = x.dim(1), dm = x.dim(2), dk = dm / heads;
  typename Tensor<Scalar>::Array out(x.size());
  for (Index n = 0; n < N; ++n)
    for (Index h = 0; h < heads; ++h)
      MatrixMap<Scalar>(out.data() + ((n * heads + h) * T) * dk, T, dk) =
          ConstMatrixMap<Scalar>(x.value().data() + n * T * dm, T, dm).middleCols(h * dk, dk);
  return Tensor<Scalar>::make_result(
      {N, heads, T, dk}, std::move(out), {x.node_ptr()}, [N, T, dm, dk, heads](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Index n = 0; n < N; ++n)
          for (Index h = 0; h < heads; ++h)
            MatrixMap<Scalar>(g.data() + n * T * dm, T, dm).middleCols(h * dk, dk) +=
                ConstMatrixMap<Scalar>(self.grad.data() + ((n * heads + h) * T) * dk, T, dk);
      });
}

/// [N, H, T, dk] -> [N, T, H*dk]; inverse of split_heads.
template <typename Scalar>
Tensor<Scalar> merge_heads(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw ShapeError("merge_heads needs [N,H,T,dk], got " + shape_str(x.shape()));
  const Index N = x.dim(0), heads = x.dim(1), T = x.dim(2), dk = x.dim(3), dm = heads * dk;
  typename Tensor<Scalar>::Array out(x.size());
  for (Index n = 0; n < N; ++n)
    for (Index h = 0; h < heads; ++h)
      MatrixMap<Scalar>(out.data() + n * T * dm, T, dm).middleCols(h * dk, dk) =
          ConstMatrixMap<Scalar>(x.value().data() + ((n * heads + h) * T) * dk, T, dk);
  return Tensor<Scalar>::make_result(
      {N, T, dm}, std::move(out), {x.node_ptr()}, [N, T, dm, dk, heads](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Index n = 0; n < N; ++n)
          for (Index h = 0; h < heads; ++h)
            MatrixMap<Scalar>(g.data() + ((n * heads + h) * T) * dk, T, dk) +=
                ConstMatrixMap<Scalar>(self.grad.data() + n * T * dm, T, dm).middleCols(h * dk, dk);
      });
}

/// Inverted dropout. Identity when p == 0.
template <typename Scalar, typename Rng>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const Scalar factor = Scalar(1.0 / (1.0 - p));
  typename Tensor<Scalar>::Array m(x.size());
  for (Index i = 0; i < m.size(); ++i) m(i) = keep(rng) ? factor : Scalar(0);
  return Tensor<Scalar>::make_result(x.shape(), x.value() * m, {x.node_ptr()}, [m](auto& self) {
    self.parents[0]->grad_buffer() += self.grad * m;
  });
}

/// Replaces every masked time step of x [N, T, D] by `token` [D]. `mask` is
/// N*T flags in row-major order. Unmasked cells are copied bit-for-bit.
template <typename Scalar>
Tensor<Scalar> replace_masked_steps(const Tensor<Scalar>& x, std::span<const std::uint8_t> mask,
                                    const Tensor<Scalar>& token) {
  if (x.rank() != 3 || static_cast<Index>(mask.size()) != x.dim(0) * x.dim(1) ||
      token.size() != x.dim(2))
    throw ShapeError("mask/token do not match input " + shape_str(x.shape()));
  const Index steps = x.dim(0) * x.dim(1), D = x.dim(2);
  typename Tensor<Scalar>::Array out = x.value();
  for (Index s = 0; s < steps; ++s)
    if (mask[static_cast<std::size_t>(s)]) out.segment(s * D, D) = token.value();
  std::vector<std::uint8_t> flags(mask.begin(), mask.end());
  return Tensor<Scalar>::make_result(
      x.shape(), std::move(out), {x.node_ptr(), token.node_ptr()},
      [steps, D, flags = std::move(flags)](auto& self) {
        auto* px = self.parents[0].get();
        auto* pt = self.parents[1].get();
        for (Index s = 0; s < steps; ++s) {
          const auto g = self.grad.segment(s * D, D);
          if (flags[static_cast<std::size_t>(s)]) {
            if (pt->requires_grad) pt->grad_buffer() += g;
          } else if (px->requires_grad) {
            px->grad_buffer().segment(s * D, D) += g;
          }
        }
      });
}

/// Mean absolute difference over all cells, or over the cells of masked
/// time steps when `step_mask` (N*T flags for [N, T, D] inputs) is given.
template <typename Scalar>
Tensor<Scalar> mean_abs_error(const Tensor<Scalar>& x, const Tensor<Scalar>& xr,
                              std::span<const std::uint8_t> step_mask = {}) {
  using Array = typename Tensor<Scalar>::Array;
  if (x.shape() != xr.shape())
    throw ShapeError("mean_abs_error shape mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(xr.shape()));
  Array weight = Array::Ones(x.size());
  if (!step_mask.empty()) {
    const Index D = x.dim(-1);
    if (static_cast<Index>(step_mask.size()) * D != x.size())
      throw ShapeError("step mask length does not match " + shape_str(x.shape()));
    for (std::size_t s = 0; s < step_mask.size(); ++s)
      if (!step_mask[s]) weight.segment(static_cast<Index>(s) * D, D).setZero();
  }
  const Scalar count = weight.sum();
  if (count == Scalar(0)) throw std::invalid_argument("mean_abs_error: no masked cells to average");
  const Array diff = x.value() - xr.value();
  Array out(1);
  out(0) = (diff.abs() * weight).sum() / count;
  Array dsign = diff.sign() * weight / count;
  return Tensor<Scalar>::make_result({1}, std::move(out), {x.node_ptr(), xr.node_ptr()},
                                     [dsign = std::move(dsign)](auto& self) {
                                       const Scalar g = self.grad(0);
                                       auto* px = self.parents[0].get();
                                       auto* pr = self.parents[1].get();
                                       if (px->requires_grad) px->grad_buffer() += g * dsign;
                                       if (pr->requires_grad) pr->grad_buffer() -= g * dsign;
                                     });
}

/// -(1/N) sum_n log p[n, y_n] over probability rows, with p clamped to
/// [floor, 1 - floor] before the log.
template <typename Scalar>
Tensor<Scalar> nll_of_probs(const Tensor<Scalar>& probs, std::span<const int> labels,
                            double floor = 1e-12) {
  using Array = typename Tensor<Scalar>::Array;
  if (probs.rank() != 2 || probs.dim(0) != static_cast<Index>(labels.size()))
    throw ShapeError("nll_of_probs: probs " + shape_str(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const Index N = probs.dim(0), C = probs.dim(1);
  const Scalar lo = Scalar(floor), hi = Scalar(1.0 - floor);
  Array dp = Array::Zero(probs.size());
  Scalar total = 0;
  for (Index n = 0; n < N; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= C) throw std::out_of_range("label outside class range");
    const Scalar p = probs.value()(n * C + y);
    const Scalar pc = std::clamp(p, lo, hi);
    total -= std::log(pc);
    if (p > lo && p < hi) dp(n * C + y) = -Scalar(1) / (pc * static_cast<Scalar>(N));
  }
  Array out(1);
  out(0) = total / static_cast<Scalar>(N);
  return Tensor<Scalar>::make_result({1}, std::move(out), {probs.node_ptr()},
                                     [dp = std::move(dp)](auto& self) {
                                       self.parents[0]->grad_buffer() += self.grad(0) * dp;
                                     });
}

}  // namespace sst
