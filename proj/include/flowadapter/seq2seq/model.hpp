#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "flowadapter/flow/flow.hpp"
#include "flowadapter/sentrep/sentrep.hpp"
#include "flowadapter/seq2seq/transformer.hpp"
#include "flowadapter/seq2seq/vocab.hpp"

namespace fa::seq2seq {

struct ModelConfig {
  TransformerConfig transformer;
  flow::FlowConfig flow;  // flow.dim is d_z
  bool flow_adapter = true;

  void validate() const;
};

// Encoder output plus the pooled sentence latent (undefined without adapter).
struct Encoded {
  sentrep::EncoderStates states;
  ag::Var latent;
  int lang = 0;
};

// Call counters; atomics so concurrent inference stays safe.
struct Instrumentation {
  std::atomic<long> transforms{0};
  std::atomic<long> routes[2][2] = {};  // [decoder][target language]

  void reset();
};

// Called on every greedy step with the (batch x candidates) score matrix.
using LogitHook = std::function<void(Matrix&)>;

class TranslationModel {
 public:
  TranslationModel(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  bool has_adapter() const { return cfg_.flow_adapter; }

  Encoded encode(const Batch& src, const Dropout& drop = {}) const;
  // Latent handed to the target-language decoder; transform_latent only
  // when the languages differ.
  ag::Var target_latent(const Encoded& enc, int tgt_lang) const;

  // Teacher-forced scores over the target language's output ids, one row per
  // decoder input position (batch * (max_len - 1) rows).
  ag::Var logits(const Batch& tgt, const Encoded& enc, const ag::Var& z, const Dropout& drop = {}) const;
  // Token-level cross-entropy of producing `tgt` from `src`.
  ag::Var sequence_loss(const Batch& src, const Batch& tgt, const Dropout& drop = {}) const;
  ag::Var sequence_loss(const Encoded& enc, const ag::Var& z, const Batch& tgt, const Dropout& drop = {}) const;

  std::vector<TokenSequence> greedy_decode(const Encoded& enc, const ag::Var& z, int tgt_lang, int max_len,
                                           const LogitHook& hook = {}) const;
  std::vector<TokenSequence> translate(std::span<const TokenSequence> xs, int l1, int l2, int max_len = 0) const;
  TokenSequence translate(const TokenSequence& x, int l1, int l2) const;

  const flow::FlowStack& flow(int lang) const;
  flow::FlowStack& flow(int lang);
  const flow::BaseDistribution& base() const { return base_; }
  const sentrep::ProjectionMap& projection() const { return projection_; }
  const sentrep::GateParams& gate() const { return gate_; }
  const Decoder& decoder_for(int lang) const;
  int decoder_index(int lang) const { return cfg_.transformer.shared_decoder ? 0 : lang; }
  const std::vector<int>& output_ids(int lang) const { return output_ids_[lang]; }

  // Embedding table, tied to every output projection.
  ag::Var embedding;

  ag::ParamList parameters() const;
  ag::ParamList buffers() const;
  Instrumentation& counters() const { return *counters_; }

 private:
  ag::Var embed(const Batch& b, int positions, const Dropout& drop) const;
  ag::Var output_scores(const ag::Var& o, int lang) const;
  void check_lang(int lang) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  Encoder encoder_;
  std::vector<Decoder> decoders_;
  std::vector<flow::FlowStack> flows_;
  flow::BaseDistribution base_{1};
  sentrep::ProjectionMap projection_;
  sentrep::GateParams gate_;
  std::vector<std::vector<int>> output_ids_;
  std::vector<std::vector<int>> output_index_;  // id -> column, -1 if not scored
  Matrix positions_;
  std::unique_ptr<Instrumentation> counters_ = std::make_unique<Instrumentation>();
};

}  // namespace fa::seq2seq
