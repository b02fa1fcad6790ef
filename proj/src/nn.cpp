#include "pmm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pmm::nn {

Value ParamRegistry::create(const std::string& name, Tensor init) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::logic_error("duplicate parameter name: " + name);
  }
  Value v = ag::parameter(std::move(init));
  params_.push_back({name, v});
  return v;
}

std::int64_t ParamRegistry::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.node->val.size();
  return n;
}

void ParamRegistry::zero_grad() {
  for (const auto& p : params_) ag::zero_grad(p.node);
}

Value ParamRegistry::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.node;
  }
  throw std::out_of_range("no such parameter: " + name);
}

Tensor xavier_uniform(int in_dim, int out_dim, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / (in_dim + out_dim));
  std::uniform_real_distribution<double> uni(-limit, limit);
  Tensor t(in_dim, out_dim);
  for (double& v : t.data) v = uni(rng);
  return t;
}

Linear::Linear(Ctx ctx, const std::string& name, int in, int out)
    : in_dim(in), out_dim(out) {
  w = ctx.reg.create(ctx.prefix + name + ".w", xavier_uniform(in, out, ctx.rng));
  b = ctx.reg.create(ctx.prefix + name + ".b", Tensor(1, out));
}

Mlp2::Mlp2(Ctx ctx, const std::string& name, int in, int hidden, int out)
    : l1(ctx, name + ".l1", in, hidden), l2(ctx, name + ".l2", hidden, out) {}

GatedFusion::GatedFusion(Ctx ctx, const std::string& name, int dim)
    : gate(ctx, name + ".gate", 2 * dim, dim) {}

Value GatedFusion::operator()(const Value& a, const Value& b) const {
  Value w = ag::sigmoid(gate(ag::concat_cols({a, b})));
  Value one = ag::constant(Tensor(w->val.rows, w->val.cols, 1.0));
  return ag::add(ag::mul(w, a), ag::mul(ag::sub(one, w), b));
}

LayerNorm::LayerNorm(Ctx ctx, const std::string& name, int dim) {
  gain = ctx.reg.create(ctx.prefix + name + ".gain", Tensor(1, dim, 1.0));
  bias = ctx.reg.create(ctx.prefix + name + ".bias", Tensor(1, dim));
}

Prelu::Prelu(Ctx ctx, const std::string& name) {
  slope = ctx.reg.create(ctx.prefix + name + ".slope", Tensor(1, 1, 0.25));
}

Gru::Gru(Ctx ctx, const std::string& name, int input, int hidden_dim)
    : ir(ctx, name + ".ir", input, hidden_dim),
      iz(ctx, name + ".iz", input, hidden_dim),
      in_(ctx, name + ".in", input, hidden_dim),
      hr(ctx, name + ".hr", hidden_dim, hidden_dim),
      hz(ctx, name + ".hz", hidden_dim, hidden_dim),
      hn(ctx, name + ".hn", hidden_dim, hidden_dim),
      hidden(hidden_dim) {}

Value Gru::operator()(const Value& x) const {
  Value h = ag::constant(Tensor(1, hidden));
  std::vector<Value> outs;
  outs.reserve(x->val.rows);
  Value one = ag::constant(Tensor(1, hidden, 1.0));
  for (int t = 0; t < x->val.rows; ++t) {
    Value xt = ag::slice_rows(x, t, t + 1);
    Value r = ag::sigmoid(ag::add(ir(xt), hr(h)));
    Value z = ag::sigmoid(ag::add(iz(xt), hz(h)));
    Value n = ag::tanh_(ag::add(in_(xt), ag::mul(r, hn(h))));
    h = ag::add(ag::mul(ag::sub(one, z), n), ag::mul(z, h));
    outs.push_back(h);
  }
  return ag::concat_rows(outs);
}

TransformerLayer::TransformerLayer(Ctx ctx, const std::string& name, int d, int h)
    : wq(ctx, name + ".wq", d, d),
      wk(ctx, name + ".wk", d, d),
      wv(ctx, name + ".wv", d, d),
      wo(ctx, name + ".wo", d, d),
      ln1(ctx, name + ".ln1", d),
      ln2(ctx, name + ".ln2", d),
      ff1(ctx, name + ".ff1", d, 2 * d),
      ff2(ctx, name + ".ff2", 2 * d, d),
      dim(d),
      heads(h) {
  if (d % h != 0) throw std::invalid_argument("attention dim not divisible by head count");
}

Value TransformerLayer::operator()(const Value& x, double dropout_p,
                                   std::mt19937_64* rng) const {
  int d_head = dim / heads;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_head));
  Value q = wq(x), k = wk(x), v = wv(x);
  std::vector<Value> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Value qh = ag::slice_cols(q, h * d_head, (h + 1) * d_head);
    Value kh = ag::slice_cols(k, h * d_head, (h + 1) * d_head);
    Value vh = ag::slice_cols(v, h * d_head, (h + 1) * d_head);
    Value scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt_d);
    Value attn = ag::softmax_rows(scores);
    if (dropout_p > 0.0 && rng) attn = ag::dropout(attn, dropout_p, *rng);
    head_outs.push_back(ag::matmul(attn, vh));
  }
  Value mha = wo(ag::concat_cols(head_outs));
  if (dropout_p > 0.0 && rng) mha = ag::dropout(mha, dropout_p, *rng);
  Value y = ln1(ag::add(x, mha));
  Value ff = ff2(ag::relu(ff1(y)));
  if (dropout_p > 0.0 && rng) ff = ag::dropout(ff, dropout_p, *rng);
  return ln2(ag::add(y, ff));
}

Tensor sinusoidal_encoding(int seq_len, int dim) {
  Tensor pe(seq_len, dim);
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int i = 0; i + 1 < dim; i += 2) {
      double freq = std::pow(10000.0, static_cast<double>(i) / dim);
      pe.at(pos, i) = std::sin(pos / freq);
      pe.at(pos, i + 1) = std::cos(pos / freq);
    }
    if (dim % 2 == 1) {
      double freq = std::pow(10000.0, static_cast<double>(dim - 1) / dim);
      pe.at(pos, dim - 1) = std::sin(pos / freq);
    }
  }
  return pe;
}

TransformerEncoder::TransformerEncoder(Ctx ctx, const std::string& name, int d, int h,
                                       int num_layers)
    : dim(d), heads(h) {
  layers.reserve(num_layers);
  for (int i = 0; i < num_layers; ++i) {
    layers.emplace_back(ctx, name + ".layer" + std::to_string(i), d, h);
  }
}

Value TransformerEncoder::operator()(const Value& x, double dropout_p,
                                     std::mt19937_64* rng) const {
  Value y = ag::add(x, ag::constant(sinusoidal_encoding(x->val.rows, dim)));
  for (const auto& layer : layers) y = layer(y, dropout_p, rng);
  return y;
}

}  // namespace pmm::nn
