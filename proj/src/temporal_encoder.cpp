#include "pmm/temporal_encoder.hpp"

namespace pmm {

TemporalEncoder::TemporalEncoder(nn::Ctx ctx, int history_len, int feat_dim, int heads,
                                 int layers, int patch_len, bool no_patch)
    : history_len_(history_len),
      feat_dim_(feat_dim),
      patch_len_(patch_len),
      no_patch_(no_patch) {
  auto scoped = ctx.scoped("temporal");
  if (no_patch_) {
    int out = token_count() * feat_dim;
    flat_mlp = nn::Mlp2(scoped, "flat_mlp", 2 * history_len, out, out);
    return;
  }
  patch_x = nn::Mlp2(scoped, "patch_x", patch_len, feat_dim, feat_dim);
  patch_y = nn::Mlp2(scoped, "patch_y", patch_len, feat_dim, feat_dim);
  fusion = nn::GatedFusion(scoped, "fusion", feat_dim);
  encoder = nn::TransformerEncoder(scoped, "encoder", feat_dim, heads, layers);
  gru = nn::Gru(scoped, "gru", feat_dim, feat_dim);
}

std::pair<Value, Value> TemporalEncoder::patch_embed(const std::vector<Vec2>& history) const {
  int t_hist = static_cast<int>(history.size());
  if (t_hist < patch_len_) {
    throw std::invalid_argument("patch_embed: history shorter than patch length");
  }
  int n_tok = t_hist - patch_len_ + 1;
  Tensor px(n_tok, patch_len_), py(n_tok, patch_len_);
  for (int t = 0; t < n_tok; ++t) {
    for (int j = 0; j < patch_len_; ++j) {
      px.at(t, j) = history[t + j].x;
      py.at(t, j) = history[t + j].y;
    }
  }
  return {patch_x(ag::constant(std::move(px))), patch_y(ag::constant(std::move(py)))};
}

Value TemporalEncoder::fuse(const Value& z_x, const Value& z_y) const {
  check_shape(z_x->val.same_shape(z_y->val), "gated fusion inputs");
  return fusion(z_x, z_y);
}

Value TemporalEncoder::encode_tokens(const Value& z, double dropout_p,
                                     std::mt19937_64* rng) const {
  return encoder(z, dropout_p, rng);
}

Value TemporalEncoder::refine(const Value& z) const { return gru(z); }

Value TemporalEncoder::encode(const std::vector<Vec2>& history, double dropout_p,
                              std::mt19937_64* rng) const {
  if (no_patch_) {
    int t_hist = static_cast<int>(history.size());
    Tensor flat(1, 2 * t_hist);
    for (int t = 0; t < t_hist; ++t) {
      flat.data[2 * t] = history[t].x;
      flat.data[2 * t + 1] = history[t].y;
    }
    return ag::reshape(flat_mlp(ag::constant(std::move(flat))), token_count(), feat_dim_);
  }
  auto [z_x, z_y] = patch_embed(history);
  Value z = fuse(z_x, z_y);
  Value z_enc = encode_tokens(z, dropout_p, rng);
  return refine(z_enc);
}

}  // namespace pmm
