#pragma once

#include "pmm/data_ingest.hpp"
#include "pmm/nn.hpp"

namespace pmm {

using ag::Value;

/// History -> temporal features. Each coordinate channel is embedded through
/// its own sliding-window MLP over length-3 patches, the channels are merged
/// by a gated fusion, a transformer encoder mixes the tokens, and a GRU pass
/// re-imposes temporal order. Output has one row per patch token.
///
/// With no_patch the whole stack is swapped for an MLP over the flattened
/// history that produces the same output shape.
class TemporalEncoder {
 public:
  TemporalEncoder(nn::Ctx ctx, int history_len, int feat_dim, int heads, int layers,
                  int patch_len = 3, bool no_patch = false);

  /// Per-channel patch tokens, (T'-P+1) x F each. Throws if T' < P.
  std::pair<Value, Value> patch_embed(const std::vector<Vec2>& history) const;
  Value fuse(const Value& z_x, const Value& z_y) const;
  Value encode_tokens(const Value& z, double dropout_p, std::mt19937_64* rng) const;
  Value refine(const Value& z) const;

  /// Full pipeline; returns (T'-P+1) x F.
  Value encode(const std::vector<Vec2>& history, double dropout_p = 0.0,
               std::mt19937_64* rng = nullptr) const;

  int token_count() const { return history_len_ - patch_len_ + 1; }
  int feat_dim() const { return feat_dim_; }

  nn::Mlp2 patch_x, patch_y;
  nn::GatedFusion fusion;
  nn::TransformerEncoder encoder;
  nn::Gru gru;
  nn::Mlp2 flat_mlp;  // no_patch replacement

 private:
  int history_len_;
  int feat_dim_;
  int patch_len_;
  bool no_patch_;
};

}  // namespace pmm
