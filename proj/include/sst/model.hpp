#pragma once

#include "sst/numerics/ops.hpp"
#include "sst/numerics/tensor.hpp"
#include "sst/rng.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sst {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int t_steps = 64;
  int input_dim = 5;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 256;
  double mask_ratio = 0.15;
  double mask_mean_len = 3.0;
  double dropout = 0.1;
  int n_classes = 2;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(t_steps >= 1, "t_steps must be >= 1");
  require(input_dim >= 1, "input_dim must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(n_layers >= 0, "n_layers must be >= 0");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) +
                                      ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  require(mask_ratio >= 0.0 && mask_ratio < 1.0, "mask_ratio must lie in [0, 1)");
  require(mask_mean_len >= 1.0, "mask_mean_len must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(n_classes == 2, "n_classes must be 2");
}

struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Every trainable tensor of the model, in serialization order:
///   embed.w_in [D,dm], embed.b_in [dm], embed.position [T,dm], mask_token [D],
///   per layer i: layers.i.{ln1.gain, ln1.bias, attn.w_q, attn.b_q, attn.w_k,
///   attn.b_k, attn.w_v, attn.b_v, attn.w_o, attn.b_o, ln2.gain, ln2.bias,
///   ffn.w1, ffn.b1, ffn.w2, ffn.b2},
///   recon.w [dm,D], recon.b [D], head.w [dm,2], head.b [2].
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  const Index D = c.input_dim, dm = c.d_model, T = c.t_steps, ff = c.d_ff, C = c.n_classes;
  std::vector<ParamSpec> specs = {
      {"embed.w_in", {D, dm}}, {"embed.b_in", {dm}}, {"embed.position", {T, dm}}, {"mask_token", {D}}};
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    for (auto&& s : std::vector<ParamSpec>{{p + "ln1.gain", {dm}},   {p + "ln1.bias", {dm}},
                                           {p + "attn.w_q", {dm, dm}}, {p + "attn.b_q", {dm}},
                                           {p + "attn.w_k", {dm, dm}}, {p + "attn.b_k", {dm}},
                                           {p + "attn.w_v", {dm, dm}}, {p + "attn.b_v", {dm}},
                                           {p + "attn.w_o", {dm, dm}}, {p + "attn.b_o", {dm}},
                                           {p + "ln2.gain", {dm}},   {p + "ln2.bias", {dm}},
                                           {p + "ffn.w1", {dm, ff}},  {p + "ffn.b1", {ff}},
                                           {p + "ffn.w2", {ff, dm}},  {p + "ffn.b2", {dm}}})
      specs.push_back(std::move(s));
  }
  specs.push_back({"recon.w", {dm, D}});
  specs.push_back({"recon.b", {D}});
  specs.push_back({"head.w", {dm, C}});
  specs.push_back({"head.b", {C}});
  return specs;
}

inline bool is_head_parameter(std::string_view name) { return name.starts_with("head."); }

struct Complexity {
  std::int64_t params = 0;
  std::int64_t macs = 0;  // per sample
};

/// Closed-form parameter and multiply-accumulate counts.
///
/// MACs per sample: input embedding T*D*dm; per layer 4*T*dm^2 for the Q, K,
/// V and output projections, 2*H*T^2*(dm/H) for the score product and the
/// weighted sum, 2*T*dm*d_ff for the feed-forward pair; reconstruction head
/// T*dm*D; classification head dm*2. Normalization, softmax, pooling and
/// bias additions are not counted.
inline Complexity count_complexity(const ModelConfig& c) {
  c.validate();
  const std::int64_t T = c.t_steps, D = c.input_dim, dm = c.d_model, H = c.n_heads, ff = c.d_ff,
                     L = c.n_layers, C = c.n_classes;
  Complexity out;
  const std::int64_t per_layer_params = 2 * dm + 4 * (dm * dm + dm) + 2 * dm + (dm * ff + ff) + (ff * dm + dm);
  out.params = (D * dm + dm + T * dm + D) + L * per_layer_params + (dm * D + D) + (dm * C + C);
  const std::int64_t per_layer_macs = 4 * T * dm * dm + 2 * H * T * T * (dm / H) + 2 * T * dm * ff;
  out.macs = T * D * dm + L * per_layer_macs + T * dm * D + dm * C;
  return out;
}

/// Per-sample boolean occlusion pattern over time steps, row-major [n][t].
struct MaskSpec {
  Index n = 0;
  Index t = 0;
  std::vector<std::uint8_t> masked;
  std::uint64_t seed = 0;

  Index masked_count(Index sample) const {
    Index c = 0;
    for (Index s = 0; s < t; ++s) c += masked[static_cast<std::size_t>(sample * t + s)];
    return c;
  }
};

/// Contiguous segments with geometric lengths (mean `mean_len`) at uniform
/// start positions, added per sample until exactly round(ratio * t) steps are
/// covered. Each sample draws from its own substream of `seed`.
inline MaskSpec generate_mask(Index n, Index t, double ratio, double mean_len, std::uint64_t seed) {
  if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("mask ratio must lie in [0, 1)");
  if (mean_len < 1.0) throw ConfigError("mask mean segment length must be >= 1");
  MaskSpec spec{n, t, std::vector<std::uint8_t>(static_cast<std::size_t>(n * t), 0), seed};
  const auto target = static_cast<Index>(std::llround(ratio * static_cast<double>(t)));
  std::geometric_distribution<int> extra(1.0 / mean_len);
  std::uniform_int_distribution<Index> start_at(0, t - 1);
  for (Index i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    std::uint8_t* row = spec.masked.data() + i * t;
    Index covered = 0;
    while (covered < target) {
      const Index len = 1 + extra(rng);
      const Index start = start_at(rng);
      for (Index s = start; s < std::min(t, start + len) && covered < target; ++s) {
        if (!row[s]) {
          row[s] = 1;
          ++covered;
        }
      }
    }
  }
  return spec;
}

enum class Mode { Eval, Train };

/// Scaled dot-product attention over the last two axes:
/// softmax(Q K^T / sqrt(d_k)) V. `weights_out`, when given, receives the
/// attention probabilities.
template <typename Scalar>
Tensor<Scalar> scaled_dot_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                    const Tensor<Scalar>& v, Tensor<Scalar>* weights_out = nullptr) {
  if (q.shape() != k.shape() || k.shape() != v.shape())
    throw ShapeError("attention expects equal Q/K/V shapes, got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(q.dim(-1)));
  auto weights = softmax_rows(scale(matmul(q, transpose_last(k)), inv_sqrt_dk));
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

template <typename Scalar>
struct AttentionWeights {
  Tensor<Scalar> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

/// Projects to Q, K, V, splits the model width into `heads` slices of
/// d_model/heads, attends per head, concatenates and applies W^O.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& h, const AttentionWeights<Scalar>& w,
                                    int heads, Tensor<Scalar>* weights_out = nullptr) {
  if (h.rank() != 3) throw ShapeError("multi_head_attention expects [N,T,d_model], got " + shape_str(h.shape()));
  if (h.dim(2) % heads != 0)
    throw ConfigError("d_model " + std::to_string(h.dim(2)) + " not divisible by " +
                      std::to_string(heads) + " heads");
  auto q = split_heads(matmul(h, w.w_q) + w.b_q, heads);
  auto k = split_heads(matmul(h, w.w_k) + w.b_k, heads);
  auto v = split_heads(matmul(h, w.w_v) + w.b_v, heads);
  auto attended = merge_heads(scaled_dot_attention(q, k, v, weights_out));
  return matmul(attended, w.w_o) + w.b_o;
}

/// Attention probabilities from the last forward pass, one [N,H,T,T] tensor per layer.
template <typename Scalar>
using AttentionTrace = std::vector<Tensor<Scalar>>;

/// Transformer encoder with learnable input and position embeddings, a
/// reconstruction head for masked pretraining and a linear classification
/// head over time-pooled features.
template <typename Scalar>
class SSTransformer {
 public:
  using T = Tensor<Scalar>;

  SSTransformer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    specs_ = parameter_layout(config_);
    std::mt19937_64 rng(seed);
    for (const auto& s : specs_) params_.push_back(initial_value(s, rng));
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamSpec>& layout() const { return specs_; }
  std::vector<T>& parameters() { return params_; }
  const std::vector<T>& parameters() const { return params_; }

  T& param(std::string_view name) { return params_[index_of(name)]; }
  const T& param(std::string_view name) const { return params_[index_of(name)]; }

  /// Number of scalars across all registered trainable tensors.
  std::int64_t trainable_scalars() const {
    std::int64_t total = 0;
    for (const auto& p : params_) total += p.size();
    return total;
  }

  /// x [N,T,D] -> x W_in + b_in + P.
  T embed(const T& x) const {
    check_input(x);
    return matmul(x, param("embed.w_in")) + param("embed.b_in") + param("embed.position");
  }

  T apply_mask(const T& x, const MaskSpec& spec) const {
    if (spec.n != x.dim(0) || spec.t != x.dim(1))
      throw ShapeError("mask spec [" + std::to_string(spec.n) + "," + std::to_string(spec.t) +
                       "] does not match input " + shape_str(x.shape()));
    return replace_masked_steps(x, std::span<const std::uint8_t>(spec.masked), param("mask_token"));
  }

  /// Pre-norm blocks: h += MHA(LN1(h)); h += FFN(LN2(h)). Dropout only in
  /// Mode::Train, which then requires `rng`.
  T encode(const T& h0, Mode mode, std::mt19937_64* rng = nullptr,
           AttentionTrace<Scalar>* trace = nullptr) const {
    const double p = mode == Mode::Train ? config_.dropout : 0.0;
    if (p > 0.0 && !rng) throw std::invalid_argument("encode: training mode with dropout needs an rng");
    if (trace) trace->clear();
    T h = h0;
    for (int i = 0; i < config_.n_layers; ++i) {
      const std::string pre = "layers." + std::to_string(i) + ".";
      auto at = [&](const char* n) -> const T& { return param(pre + n); };
      const AttentionWeights<Scalar> w{at("attn.w_q"), at("attn.b_q"), at("attn.w_k"), at("attn.b_k"),
                                       at("attn.w_v"), at("attn.b_v"), at("attn.w_o"), at("attn.b_o")};
      T weights;
      auto attn = multi_head_attention(layer_norm(h, at("ln1.gain"), at("ln1.bias")), w,
                                       config_.n_heads, trace ? &weights : nullptr);
      if (trace) trace->push_back(weights);
      if (p > 0.0) attn = dropout(attn, p, *rng);
      h = h + attn;
      auto ff = matmul(relu(matmul(layer_norm(h, at("ln2.gain"), at("ln2.bias")), at("ffn.w1")) +
                            at("ffn.b1")),
                       at("ffn.w2")) +
                at("ffn.b2");
      if (p > 0.0) ff = dropout(ff, p, *rng);
      h = h + ff;
    }
    return h;
  }

  /// Per-position linear map d_model -> D.
  T reconstruct(const T& h) const { return matmul(h, param("recon.w")) + param("recon.b"); }

  /// Class probabilities [N,2] from encoder output [N,T,d_model].
  T classify(const T& h) const { return classify_pooled(mean_over_time(h)); }

  T classify_pooled(const T& pooled) const {
    return softmax_rows(matmul(pooled, param("head.w")) + param("head.b"));
  }

  /// Pretraining forward: mask, embed, encode, reconstruct.
  T reconstruct_masked(const T& x, const MaskSpec& spec, Mode mode, std::mt19937_64* rng = nullptr) const {
    return reconstruct(encode(embed(apply_mask(x, spec)), mode, rng));
  }

  T predict_proba(const T& x, Mode mode = Mode::Eval, std::mt19937_64* rng = nullptr) const {
    return classify(encode(embed(x), mode, rng));
  }

  /// Fresh linear head (Glorot weights, zero bias).
  void reset_head(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (is_head_parameter(specs_[i].name)) params_[i] = initial_value(specs_[i], rng);
  }

 private:
  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (specs_[i].name == name) return i;
    throw std::out_of_range("unknown parameter " + std::string(name));
  }

  void check_input(const T& x) const {
    if (x.rank() != 3 || x.dim(1) != config_.t_steps || x.dim(2) != config_.input_dim)
      throw ShapeError("model expects input [N," + std::to_string(config_.t_steps) + "," +
                       std::to_string(config_.input_dim) + "], got " + shape_str(x.shape()));
  }

  static T initial_value(const ParamSpec& s, std::mt19937_64& rng) {
    const Index n = shape_size(s.shape);
    typename T::Array v(n);
    const std::string_view name = s.name;
    if (name.ends_with(".gain")) {
      v.setOnes();
    } else if (s.shape.size() == 2 && name != "embed.position") {
      const double bound = std::sqrt(6.0 / static_cast<double>(s.shape[0] + s.shape[1]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Index i = 0; i < n; ++i) v(i) = static_cast<Scalar>(u(rng));
    } else if (name == "embed.position" || name == "mask_token") {
      std::normal_distribution<double> g(0.0, 0.02);
      for (Index i = 0; i < n; ++i) v(i) = static_cast<Scalar>(g(rng));
    } else {
      v.setZero();
    }
    return T(s.shape, std::move(v), true);
  }

  ModelConfig config_;
  std::vector<ParamSpec> specs_;
  std::vector<T> params_;
};

}  // namespace sst
