#include "flowadapter/seq2seq/transformer.hpp"

#include <cmath>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"

namespace fa::seq2seq {

void TransformerConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0)
    throw ConfigError("transformer dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
}

ag::Var Dropout::operator()(const ag::Var& x) const { return active() ? ag::dropout(x, p, *rng) : x; }

Matrix sinusoidal_positions(int rows, int d_model) {
  Matrix pe(rows, d_model);
  for (int pos = 0; pos < rows; ++pos)
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos * std::exp(-std::log(10000.0) * i / d_model);
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
    }
  return pe;
}

MultiHeadAttention::MultiHeadAttention(int d_model, int h, std::mt19937_64& rng)
    : heads(h),
      wq(d_model, d_model, true, rng),
      wk(d_model, d_model, true, rng),
      wv(d_model, d_model, true, rng),
      wo(d_model, d_model, true, rng) {}

ag::Var MultiHeadAttention::operator()(const ag::Var& query, const ag::Var& memory,
                                       const kernels::AttentionShape& shape, std::span<const int> key_lengths) const {
  return wo(ag::attention(wq(query), wk(memory), wv(memory), shape, key_lengths));
}

void MultiHeadAttention::collect(const std::string& prefix, ag::ParamList& out) const {
  wq.collect(prefix + ".q", out);
  wk.collect(prefix + ".k", out);
  wv.collect(prefix + ".v", out);
  wo.collect(prefix + ".o", out);
}

namespace {

ag::Var feed_forward(const nn::Linear& in, const nn::Linear& out, const ag::Var& x, const Dropout& drop) {
  return out(drop(ag::relu(in(x))));
}

}  // namespace

EncoderLayer::EncoderLayer(const TransformerConfig& cfg, std::mt19937_64& rng)
    : ln_attn(cfg.d_model),
      ln_ff(cfg.d_model),
      self_attn(cfg.d_model, cfg.n_heads, rng),
      ff_in(cfg.d_model, cfg.d_ff, true, rng),
      ff_out(cfg.d_ff, cfg.d_model, true, rng) {}

ag::Var EncoderLayer::operator()(const ag::Var& x, int batch, int len, std::span<const int> lengths,
                                 const Dropout& drop) const {
  kernels::AttentionShape shape{.batch = batch, .q_len = len, .k_len = len, .heads = self_attn.heads,
                                .dim = x.cols(), .causal = false};
  ag::Var h = ln_attn(x);
  ag::Var y = ag::add(x, drop(self_attn(h, h, shape, lengths)));
  return ag::add(y, drop(feed_forward(ff_in, ff_out, ln_ff(y), drop)));
}

void EncoderLayer::collect(const std::string& prefix, ag::ParamList& out) const {
  ln_attn.collect(prefix + ".ln_attn", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln_ff.collect(prefix + ".ln_ff", out);
  ff_in.collect(prefix + ".ff_in", out);
  ff_out.collect(prefix + ".ff_out", out);
}

DecoderLayer::DecoderLayer(const TransformerConfig& cfg, std::mt19937_64& rng)
    : ln_self(cfg.d_model),
      ln_cross(cfg.d_model),
      ln_ff(cfg.d_model),
      self_attn(cfg.d_model, cfg.n_heads, rng),
      cross_attn(cfg.d_model, cfg.n_heads, rng),
      ff_in(cfg.d_model, cfg.d_ff, true, rng),
      ff_out(cfg.d_ff, cfg.d_model, true, rng),
      heads(cfg.n_heads) {}

ag::Var DecoderLayer::operator()(const ag::Var& y, int batch, int tgt_len, std::span<const int> tgt_lengths,
                                 const ag::Var& memory, int src_len, std::span<const int> src_lengths,
                                 const Dropout& drop) const {
  const int d = y.cols();
  kernels::AttentionShape self_shape{.batch = batch, .q_len = tgt_len, .k_len = tgt_len, .heads = heads, .dim = d,
                                     .causal = true};
  kernels::AttentionShape cross_shape{.batch = batch, .q_len = tgt_len, .k_len = src_len, .heads = heads, .dim = d,
                                      .causal = false};
  ag::Var h = ln_self(y);
  ag::Var x = ag::add(y, drop(self_attn(h, h, self_shape, tgt_lengths)));
  x = ag::add(x, drop(cross_attn(ln_cross(x), memory, cross_shape, src_lengths)));
  return ag::add(x, drop(feed_forward(ff_in, ff_out, ln_ff(x), drop)));
}

ag::Var DecoderLayer::step(const ag::Var& y, int layer, DecoderCache& cache, int batch, int src_len,
                           std::span<const int> src_lengths) const {
  const int d = y.cols();
  const int t = cache.steps;
  ag::Var h = ln_self(y);
  Matrix& k_cache = cache.self_k[layer];
  Matrix& v_cache = cache.self_v[layer];
  const Matrix k_new = self_attn.wk(h).value();
  const Matrix v_new = self_attn.wv(h).value();
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < d; ++j) {
      k_cache(b * cache.capacity + t, j) = k_new(b, j);
      v_cache(b * cache.capacity + t, j) = v_new(b, j);
    }
  const std::vector<int> visible(static_cast<std::size_t>(batch), t + 1);
  kernels::AttentionShape self_shape{.batch = batch, .q_len = 1, .k_len = cache.capacity, .heads = heads, .dim = d,
                                     .causal = false};
  ag::Var attn = ag::attention(self_attn.wq(h), ag::constant(k_cache), ag::constant(v_cache), self_shape, visible);
  ag::Var x = ag::add(y, self_attn.wo(attn));

  kernels::AttentionShape cross_shape{.batch = batch, .q_len = 1, .k_len = src_len, .heads = heads, .dim = d,
                                      .causal = false};
  ag::Var cross = ag::attention(cross_attn.wq(ln_cross(x)), cache.cross_k[layer], cache.cross_v[layer], cross_shape,
                                src_lengths);
  x = ag::add(x, cross_attn.wo(cross));
  return ag::add(x, feed_forward(ff_in, ff_out, ln_ff(x), Dropout{}));
}

void DecoderLayer::collect(const std::string& prefix, ag::ParamList& out) const {
  ln_self.collect(prefix + ".ln_self", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln_cross.collect(prefix + ".ln_cross", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ln_ff.collect(prefix + ".ln_ff", out);
  ff_in.collect(prefix + ".ff_in", out);
  ff_out.collect(prefix + ".ff_out", out);
}

Encoder::Encoder(const TransformerConfig& cfg, std::mt19937_64& rng) : ln_out(cfg.d_model) {
  for (int i = 0; i < cfg.n_layers; ++i) layers.emplace_back(cfg, rng);
}

ag::Var Encoder::operator()(const ag::Var& x, int batch, int len, std::span<const int> lengths,
                            const Dropout& drop) const {
  ag::Var h = x;
  for (const auto& layer : layers) h = layer(h, batch, len, lengths, drop);
  return ln_out(h);
}

void Encoder::collect(const std::string& prefix, ag::ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  ln_out.collect(prefix + ".ln_out", out);
}

Decoder::Decoder(const TransformerConfig& cfg, std::mt19937_64& rng) : ln_out(cfg.d_model) {
  for (int i = 0; i < cfg.n_layers; ++i) layers.emplace_back(cfg, rng);
}

ag::Var Decoder::operator()(const ag::Var& y, int batch, int tgt_len, std::span<const int> tgt_lengths,
                            const ag::Var& memory, int src_len, std::span<const int> src_lengths,
                            const Dropout& drop) const {
  ag::Var h = y;
  for (const auto& layer : layers) h = layer(h, batch, tgt_len, tgt_lengths, memory, src_len, src_lengths, drop);
  return ln_out(h);
}

DecoderCache Decoder::start(const ag::Var& memory, int batch, int capacity) const {
  DecoderCache cache;
  cache.capacity = capacity;
  const int d = memory.cols();
  for (const auto& layer : layers) {
    cache.self_k.emplace_back(batch * capacity, d);
    cache.self_v.emplace_back(batch * capacity, d);
    cache.cross_k.push_back(layer.cross_attn.wk(memory));
    cache.cross_v.push_back(layer.cross_attn.wv(memory));
  }
  return cache;
}

ag::Var Decoder::step(const ag::Var& y, DecoderCache& cache, int batch, int src_len,
                      std::span<const int> src_lengths) const {
  if (cache.steps >= cache.capacity) throw UsageError("decoder cache is full");
  ag::Var h = y;
  for (std::size_t i = 0; i < layers.size(); ++i)
    h = layers[i].step(h, static_cast<int>(i), cache, batch, src_len, src_lengths);
  ++cache.steps;
  return ln_out(h);
}

void Decoder::collect(const std::string& prefix, ag::ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  ln_out.collect(prefix + ".ln_out", out);
}

}  // namespace fa::seq2seq
