#include "sst/numerics/adam.hpp"
#include "sst/numerics/ops.hpp"
#include "sst/numerics/tensor.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace sst {
namespace {

using T = Tensor<double>;
using testing::grad_check;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

T from(Shape s, std::initializer_list<double> v, bool rg = false) {
  T::Array a(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) a(i++) = x;
  return T(std::move(s), std::move(a), rg);
}

// Weighted sum with fixed random weights, so every output element gets a
// distinct upstream gradient.
T probe(const T& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(y * random_tensor(y.shape(), rng, -1.0, 1.0, false));
}

TEST(TensorCore, RejectsBadShapes) {
  EXPECT_THROW(T({2, 0}, T::Array(0)), ShapeError);
  EXPECT_THROW(T({2, 2}, T::Array(3)), ShapeError);
}

TEST(TensorCore, BackwardNeedsScalarLoss) {
  auto x = T::constant({3}, 1.0, true);
  EXPECT_THROW(backward(x * x), ShapeError);
}

TEST(TensorCore, SumGradientIsOnes) {
  auto x = from({3}, {1, 2, 3}, true);
  backward(sum(x));
  EXPECT_TRUE(x.grad().isApprox(T::Array::Ones(3)));
}

TEST(TensorCore, SquareGradient) {
  auto x = from({2}, {1, 2}, true);
  backward(sum(x * x));
  EXPECT_EQ(x.grad()(0), 2.0);
  EXPECT_EQ(x.grad()(1), 4.0);
}

TEST(TensorCore, RepeatedBackwardAccumulates) {
  auto x = from({2}, {1, 2}, true);
  backward(sum(x * x));
  backward(sum(x * x));
  EXPECT_EQ(x.grad()(0), 4.0);
  EXPECT_EQ(x.grad()(1), 8.0);
}

TEST(TensorCore, SharedInputSumsBothConsumers) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 4}, rng);
  const auto r = grad_check([&] { return probe(relu(matmul(x, w)) + x * x + matmul(x, w)); }, {x, w});
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(TensorCore, NoGradGuardSkipsGraph) {
  auto x = T::constant({2}, 1.0, true);
  NoGradGuard guard;
  const auto y = x * x;
  EXPECT_FALSE(y.requires_grad());
}

TEST(Matmul, HandExample) {
  const auto y = matmul(from({2, 2}, {1, 2, 3, 4}), from({2, 1}, {1, 1}));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.value()(0), 3.0);
  EXPECT_EQ(y.value()(1), 7.0);
}

TEST(Matmul, IdentityAndTransposeProperties) {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({4, 3}, rng, -1, 1, false);
  const auto b = random_tensor({3, 5}, rng, -1, 1, false);
  T::Array eye = T::Array::Zero(9);
  for (int i = 0; i < 3; ++i) eye(i * 3 + i) = 1.0;
  EXPECT_EQ((matmul(a, T({3, 3}, eye)).value() - a.value()).abs().maxCoeff(), 0.0);
  const auto lhs = transpose_last(matmul(a, b));
  const auto rhs = matmul(transpose_last(b), transpose_last(a));
  EXPECT_LT((lhs.value() - rhs.value()).abs().maxCoeff(), 1e-9);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(T::zeros({2, 3}), T::zeros({4, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, BatchedMatchesLoops) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor({2, 3, 4, 5}, rng, -1, 1, false);
  const auto b = random_tensor({3, 5, 2}, rng, -1, 1, false);
  const auto y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 2}));
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 3; ++h)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
          double s = 0;
          for (int k = 0; k < 5; ++k) s += a.value()(((n * 3 + h) * 4 + i) * 5 + k) * b.value()((h * 5 + k) * 2 + j);
          EXPECT_NEAR(y.value()(((n * 3 + h) * 4 + i) * 2 + j), s, 1e-12);
        }
}

TEST(Softmax, ClosedForms) {
  auto y = softmax_rows(from({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(y.value()(0), 0.5);
  y = softmax_rows(from({2}, {std::log(2.0), 0}));
  EXPECT_NEAR(y.value()(0), 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(y.value()(1), 1.0 / 3.0, 1e-9);
  y = softmax_rows(from({2}, {1000, 0}));
  EXPECT_EQ(y.value()(0), 1.0);
  EXPECT_EQ(y.value()(1), 0.0);
  EXPECT_TRUE(y.value().allFinite());
}

TEST(Softmax, RowsAreSimplex) {
  std::mt19937_64 rng(4);
  const auto y = softmax_rows(random_tensor({7, 3, 9}, rng, -20, 20, false));
  for (Index r = 0; r < 21; ++r) {
    const auto row = y.value().segment(r * 9, 9);
    EXPECT_GE(row.minCoeff(), 0.0);
    EXPECT_NEAR(row.sum(), 1.0, 1e-6);
  }
}

TEST(LayerNorm, ClosedForms) {
  const auto g = T::constant({2}, 1.0), b = T::zeros({2});
  auto y = layer_norm(from({1, 2}, {4, 4}), g, b);
  EXPECT_EQ(y.value()(0), 0.0);
  EXPECT_EQ(y.value()(1), 0.0);
  y = layer_norm(from({1, 2}, {1, 3}), g, b);
  EXPECT_NEAR(y.value()(0), -1.0, 1e-5);
  EXPECT_NEAR(y.value()(1), 1.0, 1e-5);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<T> p = {from({2}, {1, 2}, true)};
  p[0].zero_grad();
  AdamState<double> s(AdamOptions{0.1});
  adam_step(p, s);
  EXPECT_EQ(p[0].value()(0), 1.0);
  EXPECT_EQ(p[0].value()(1), 2.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<T> p = {from({1}, {0.5}, true)};
  backward(sum(p[0]));  // gradient 1
  AdamState<double> s(AdamOptions{0.1});
  adam_step(p, s);
  EXPECT_NEAR(p[0].value()(0) - 0.5, -0.1, 1e-6);
}

TEST(Adam, ShapeMismatchAndDeterminism) {
  auto run = [] {
    std::mt19937_64 rng(5);
    std::vector<T> p = {random_tensor({3, 2}, rng), random_tensor({2}, rng)};
    AdamState<double> s(AdamOptions{0.01});
    for (int i = 0; i < 10; ++i) {
      for (auto& t : p) t.clear_grad();
      backward(sum(matmul(p[0], reshape(p[1], {2, 1})) * from({3, 1}, {1, -2, 3})));
      adam_step(p, s);
    }
    return std::pair(p[0].value(), p[1].value());
  };
  const auto a = run(), b = run();
  EXPECT_TRUE((a.first == b.first).all());
  EXPECT_TRUE((a.second == b.second).all());

  std::vector<T> p = {T::zeros({2}, true)};
  AdamState<double> s(AdamOptions{});
  p[0].zero_grad();
  adam_step(p, s);
  std::vector<T> q = {T::zeros({3}, true)};
  q[0].zero_grad();
  EXPECT_THROW(adam_step(q, s), ShapeError);
}

TEST(Dropout, ZeroRateIsIdentityAndScaleIsInverted) {
  std::mt19937_64 rng(6);
  const auto x = T::constant({10000}, 1.0);
  EXPECT_EQ(dropout(x, 0.0, rng).node(), x.node());
  const auto y = dropout(x, 0.25, rng);
  for (Index i = 0; i < y.size(); ++i) EXPECT_TRUE(y.value()(i) == 0.0 || std::abs(y.value()(i) - 4.0 / 3.0) < 1e-15);
  EXPECT_NEAR(y.value().mean(), 1.0, 0.05);
}

TEST(MaskedSteps, UnmaskedCellsBitIdentical) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor({3, 4, 5}, rng, -1, 1, false);
  const auto tok = random_tensor({5}, rng, -1, 1, false);
  std::vector<std::uint8_t> m(12, 0);
  m[1] = m[7] = m[11] = 1;
  const auto y = replace_masked_steps(x, m, tok);
  for (Index s = 0; s < 12; ++s)
    for (Index d = 0; d < 5; ++d)
      EXPECT_EQ(y.value()(s * 5 + d), m[static_cast<std::size_t>(s)] ? tok.value()(d) : x.value()(s * 5 + d));
}

// ---- finite-difference gradient suite (64-bit) ----------------------------

void expect_grad(const std::string& name, const std::function<T()>& loss, std::vector<T> inputs) {
  const auto r = grad_check(loss, std::move(inputs));
  EXPECT_GT(r.checked, 0u) << name;
  EXPECT_LT(r.max_rel_error, kGradTol) << name << ": " << r.worst;
}

// Values bounded away from zero keep relu and |.| off their kinks under
// the finite-difference step.
T away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = random_tensor(std::move(s), rng, 0.05, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (Index i = 0; i < t.size(); ++i)
    if (flip(rng)) t.mutable_value()(i) = -t.value()(i);
  return t;
}

Shape random_shape(std::mt19937_64& rng, int rank) {
  Shape s;
  for (int i = 0; i < rank; ++i) s.push_back(1 + static_cast<Index>(rng() % 4));
  return s;
}

class GradSuite : public ::testing::TestWithParam<int> {};

TEST_P(GradSuite, EveryOpMatchesCentralDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  const Shape s3 = random_shape(rng, 3);
  const Index n = s3[0], t = s3[1], d = s3[2];

  {  // add/sub/mul with suffix broadcasting both ways
    auto a = random_tensor(s3, rng), b = random_tensor({d}, rng), c = random_tensor({t, d}, rng);
    expect_grad("add", [&] { return probe(a + b); }, {a, b});
    expect_grad("sub", [&] { return probe(c - a); }, {a, c});
    expect_grad("mul", [&] { return probe(a * c * b); }, {a, b, c});
  }
  {
    auto a = random_tensor(s3, rng);
    expect_grad("scale", [&] { return probe(scale(a, -1.7)); }, {a});
    expect_grad("reshape", [&] { return probe(reshape(a, {n * t, d})); }, {a});
    expect_grad("mean", [&] { return mean(a * a); }, {a});
    expect_grad("transpose_last", [&] { return probe(transpose_last(a)); }, {a});
    expect_grad("mean_over_time", [&] { return probe(mean_over_time(a)); }, {a});
  }
  {
    auto a = away_from_zero(s3, rng);
    expect_grad("relu", [&] { return probe(relu(a)); }, {a});
  }
  {  // matmul: 2-D right operand and broadcast batched path
    const Index k = 1 + static_cast<Index>(rng() % 4);
    auto a = random_tensor(s3, rng), w = random_tensor({d, k}, rng);
    expect_grad("matmul_2d", [&] { return probe(matmul(a, w)); }, {a, w});
    auto b = random_tensor({t, d, k}, rng);
    expect_grad("matmul_batched", [&] { return probe(matmul(reshape(a, {n, 1, t, d}), b)); },
                {a, b});
  }
  {
    auto a = random_tensor(s3, rng, -3, 3);
    expect_grad("softmax_rows", [&] { return probe(softmax_rows(a)); }, {a});
  }
  {
    const Index w = 2 + static_cast<Index>(rng() % 5);
    auto a = random_tensor({n, t, w}, rng, -2, 2), g = random_tensor({w}, rng, 0.5, 1.5), b = random_tensor({w}, rng);
    expect_grad("layer_norm", [&] { return probe(layer_norm(a, g, b)); }, {a, g, b});
  }
  {
    const Index heads = 1 + static_cast<Index>(rng() % 3);
    auto a = random_tensor({n, t, heads * d}, rng);
    expect_grad("split_heads", [&] { return probe(split_heads(a, heads)); }, {a});
    auto h = random_tensor({n, heads, t, d}, rng);
    expect_grad("merge_heads", [&] { return probe(merge_heads(h)); }, {h});
  }
  {
    auto a = random_tensor(s3, rng);
    const auto seed = rng();
    expect_grad("dropout", [&] {
      std::mt19937_64 drop(seed);
      return probe(dropout(a, 0.3, drop));
    }, {a});
  }
  {
    auto a = random_tensor(s3, rng), tok = random_tensor({d}, rng);
    std::vector<std::uint8_t> m(static_cast<std::size_t>(n * t));
    for (auto& f : m) f = static_cast<std::uint8_t>(rng() % 2);
    m[0] = 1;
    expect_grad("replace_masked_steps", [&] { return probe(replace_masked_steps(a, m, tok)); }, {a, tok});
  }
  {
    auto x = random_tensor(s3, rng), xr = random_tensor(s3, rng);
    // Keep |x - xr| away from zero.
    xr.mutable_value() = x.value() + away_from_zero(s3, rng).value();
    expect_grad("mean_abs_error", [&] { return mean_abs_error(x, xr); }, {x, xr});
    std::vector<std::uint8_t> m(static_cast<std::size_t>(n * t));
    for (auto& f : m) f = static_cast<std::uint8_t>(rng() % 2);
    m[0] = 1;
    expect_grad("mean_abs_error_masked", [&] { return mean_abs_error(x, xr, m); }, {x, xr});
  }
  {
    auto logits = random_tensor({n, 2}, rng, -2, 2);
    std::vector<int> y;
    for (Index i = 0; i < n; ++i) y.push_back(static_cast<int>(rng() % 2));
    expect_grad("nll_of_softmax", [&] { return nll_of_probs(softmax_rows(logits), y); }, {logits});
  }
}

// 24 seeds, each drawing a fresh random shape for every op.
INSTANTIATE_TEST_SUITE_P(RandomShapes, GradSuite, ::testing::Range(0, 24));

TEST(MaeOp, RejectsEmptyMask) {
  const auto x = T::zeros({1, 2, 3});
  std::vector<std::uint8_t> none(2, 0);
  EXPECT_THROW(mean_abs_error(x, x, none), std::invalid_argument);
  EXPECT_THROW(mean_abs_error(x, T::zeros({1, 3, 2})), ShapeError);
}

TEST(NllOp, ClampedProbabilityHasNoGradient) {
  auto p = from({1, 2}, {0.0, 1.0}, true);
  std::vector<int> y = {0};
  const auto l = nll_of_probs(p, y);
  EXPECT_NEAR(l.item(), -std::log(1e-12), 1e-9);
  backward(l);
  EXPECT_EQ(p.grad()(0), 0.0);
}

}  // namespace
}  // namespace sst
