#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pmm/autograd.hpp"

namespace pmm::nn {

using ag::Value;

struct NamedParam {
  std::string name;
  Value node;
};

/// Flat registry of all learnable tensors in a model. Creation order is the
/// canonical order used by the optimizer and checkpoint files.
class ParamRegistry {
 public:
  Value create(const std::string& name, Tensor init);
  const std::vector<NamedParam>& items() const { return params_; }
  std::int64_t scalar_count() const;
  void zero_grad();
  Value find(const std::string& name) const;

 private:
  std::vector<NamedParam> params_;
};

/// Build context threaded through module constructors.
struct Ctx {
  ParamRegistry& reg;
  std::mt19937_64& rng;
  std::string prefix;

  Ctx scoped(const std::string& sub) const { return Ctx{reg, rng, prefix + sub + "."}; }
};

Tensor xavier_uniform(int in_dim, int out_dim, std::mt19937_64& rng);

struct Linear {
  Value w;  // in x out
  Value b;  // 1 x out
  int in_dim = 0, out_dim = 0;

  Linear() = default;
  Linear(Ctx ctx, const std::string& name, int in, int out);
  Value operator()(const Value& x) const { return ag::affine(x, w, b); }
};

/// Two affine layers with one ReLU between them.
struct Mlp2 {
  Linear l1, l2;

  Mlp2() = default;
  Mlp2(Ctx ctx, const std::string& name, int in, int hidden, int out);
  Value operator()(const Value& x) const { return l2(ag::relu(l1(x))); }
};

/// z = w ⊙ a + (1-w) ⊙ b with w = sigmoid(affine([a ∥ b])).
struct GatedFusion {
  Linear gate;  // 2d -> d

  GatedFusion() = default;
  GatedFusion(Ctx ctx, const std::string& name, int dim);
  Value operator()(const Value& a, const Value& b) const;
};

struct LayerNorm {
  Value gain, bias;  // 1 x dim each
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(Ctx ctx, const std::string& name, int dim);
  Value operator()(const Value& x) const { return ag::layer_norm_rows(x, gain, bias, eps); }
};

struct Prelu {
  Value slope;  // 1x1, init 0.25

  Prelu() = default;
  Prelu(Ctx ctx, const std::string& name);
  Value operator()(const Value& x) const { return ag::prelu(x, slope); }
};

/// Single-layer GRU, zero initial hidden state.
///   r = σ(W_ir x + b_ir + W_hr h + b_hr)
///   z = σ(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
///   h' = (1 - z) ⊙ n + z ⊙ h
struct Gru {
  Linear ir, iz, in_;  // input -> hidden
  Linear hr, hz, hn;   // hidden -> hidden
  int hidden = 0;

  Gru() = default;
  Gru(Ctx ctx, const std::string& name, int input, int hidden_dim);
  /// Consumes rows of x in order; returns all hidden states stacked (seq x hidden).
  Value operator()(const Value& x) const;
};

/// Standard post-norm encoder layer: MHA + FFN, residuals, LayerNorm.
struct TransformerLayer {
  Linear wq, wk, wv, wo;
  LayerNorm ln1, ln2;
  Linear ff1, ff2;  // dim -> 2*dim -> dim
  int dim = 0, heads = 0;

  TransformerLayer() = default;
  TransformerLayer(Ctx ctx, const std::string& name, int dim, int heads);
  Value operator()(const Value& x, double dropout_p, std::mt19937_64* rng) const;
};

/// Sinusoidal table, seq x dim.
Tensor sinusoidal_encoding(int seq_len, int dim);

struct TransformerEncoder {
  std::vector<TransformerLayer> layers;
  int dim = 0, heads = 0;

  TransformerEncoder() = default;
  TransformerEncoder(Ctx ctx, const std::string& name, int dim, int heads, int num_layers);
  /// Adds positional encoding before the first layer. rng may be null when
  /// dropout_p == 0 (inference).
  Value operator()(const Value& x, double dropout_p, std::mt19937_64* rng) const;
};

}  // namespace pmm::nn
