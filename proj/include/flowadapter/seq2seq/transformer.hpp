#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "flowadapter/core/autograd.hpp"
#include "flowadapter/core/kernels.hpp"
#include "flowadapter/core/nn.hpp"

namespace fa::seq2seq {

struct TransformerConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 512;
  double dropout = 0.2;
  int max_len = 64;
  bool shared_decoder = true;
  // One embedding partition per language: decoders only score tokens of
  // their target language (plus eos/unk). Off = one joint softmax.
  bool separate_embeddings = true;

  void validate() const;
};

// Dropout source for a forward pass; a null rng means inference.
struct Dropout {
  double p = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && p > 0.0; }
  ag::Var operator()(const ag::Var& x) const;
};

// Fixed sinusoidal table, (rows x d_model).
Matrix sinusoidal_positions(int rows, int d_model);

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int heads, std::mt19937_64& rng);

  // `query` is (batch * q_len) x d, `memory` is (batch * k_len) x d.
  ag::Var operator()(const ag::Var& query, const ag::Var& memory, const kernels::AttentionShape& shape,
                     std::span<const int> key_lengths) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  int heads = 1;
  nn::Linear wq, wk, wv, wo;
};

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const TransformerConfig& cfg, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& x, int batch, int len, std::span<const int> lengths, const Dropout& drop) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  nn::LayerNorm ln_attn, ln_ff;
  MultiHeadAttention self_attn;
  nn::Linear ff_in, ff_out;
};

// Per-layer key/value cache for incremental decoding: rows b * capacity + t.
struct DecoderCache {
  int capacity = 0;
  int steps = 0;
  std::vector<Matrix> self_k, self_v;
  std::vector<ag::Var> cross_k, cross_v;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const TransformerConfig& cfg, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& y, int batch, int tgt_len, std::span<const int> tgt_lengths,
                     const ag::Var& memory, int src_len, std::span<const int> src_lengths,
                     const Dropout& drop) const;
  // One position for every sentence; `y` is batch x d. Inference only.
  ag::Var step(const ag::Var& y, int layer, DecoderCache& cache, int batch, int src_len,
               std::span<const int> src_lengths) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  nn::LayerNorm ln_self, ln_cross, ln_ff;
  MultiHeadAttention self_attn, cross_attn;
  nn::Linear ff_in, ff_out;
  int heads = 1;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const TransformerConfig& cfg, std::mt19937_64& rng);

  // `x` is the embedded input; returns final-layer-normed states.
  ag::Var operator()(const ag::Var& x, int batch, int len, std::span<const int> lengths, const Dropout& drop) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  std::vector<EncoderLayer> layers;
  nn::LayerNorm ln_out;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const TransformerConfig& cfg, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& y, int batch, int tgt_len, std::span<const int> tgt_lengths,
                     const ag::Var& memory, int src_len, std::span<const int> src_lengths,
                     const Dropout& drop) const;
  DecoderCache start(const ag::Var& memory, int batch, int capacity) const;
  ag::Var step(const ag::Var& y, DecoderCache& cache, int batch, int src_len, std::span<const int> src_lengths) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  std::vector<DecoderLayer> layers;
  nn::LayerNorm ln_out;
};

}  // namespace fa::seq2seq
