#include "flowadapter/seq2seq/model.hpp"

#include <cmath>
#include <limits>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"

namespace fa::seq2seq {

void ModelConfig::validate() const {
  transformer.validate();
  if (flow_adapter) {
    if (flow.dim < 2 || flow.dim % 2 != 0) throw ConfigError("latent dimension must be even and >= 2");
    if (flow.layers < 1) throw ConfigError("flow needs at least one layer");
    if (flow.hidden < 1) throw ConfigError("flow hidden size must be positive");
  }
}

void Instrumentation::reset() {
  transforms = 0;
  for (auto& row : routes)
    for (auto& c : row) c = 0;
}

TranslationModel::TranslationModel(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (vocab_.language_count() != 2) throw ConfigError("translation model needs exactly two languages");
  const int d = cfg_.transformer.d_model;
  std::mt19937_64 rng(seed);
  embedding = ag::parameter(nn::gaussian(vocab_.size(), d, 1.0 / std::sqrt(d), rng));
  encoder_ = Encoder(cfg_.transformer, rng);
  const int n_decoders = cfg_.transformer.shared_decoder ? 1 : 2;
  for (int i = 0; i < n_decoders; ++i) decoders_.emplace_back(cfg_.transformer, rng);
  if (cfg_.flow_adapter) {
    for (int l = 0; l < 2; ++l) flows_.emplace_back(cfg_.flow, vocab_.language_name(l), rng);
    base_ = flow::BaseDistribution(cfg_.flow.dim);
    projection_ = sentrep::ProjectionMap(d, cfg_.flow.dim, rng);
    gate_ = sentrep::GateParams(d, cfg_.flow.dim, rng);
  }
  for (int l = 0; l < 2; ++l) {
    std::vector<int> ids{Vocabulary::kEos, Vocabulary::kUnk};
    for (int other = 0; other < 2; ++other)
      if (other == l || !cfg_.transformer.separate_embeddings) {
        auto own = vocab_.token_ids(other);
        ids.insert(ids.end(), own.begin(), own.end());
      }
    std::vector<int> index(static_cast<std::size_t>(vocab_.size()), -1);
    for (std::size_t c = 0; c < ids.size(); ++c) index[ids[c]] = static_cast<int>(c);
    output_ids_.push_back(std::move(ids));
    output_index_.push_back(std::move(index));
  }
  positions_ = sinusoidal_positions(cfg_.transformer.max_len, d);
}

void TranslationModel::check_lang(int lang) const {
  if (lang < 0 || lang >= 2) throw UsageError("unknown language index " + std::to_string(lang));
}

const flow::FlowStack& TranslationModel::flow(int lang) const {
  check_lang(lang);
  if (!cfg_.flow_adapter) throw UsageError("model has no flow adapter");
  return flows_[lang];
}

flow::FlowStack& TranslationModel::flow(int lang) {
  check_lang(lang);
  if (!cfg_.flow_adapter) throw UsageError("model has no flow adapter");
  return flows_[lang];
}

const Decoder& TranslationModel::decoder_for(int lang) const {
  check_lang(lang);
  return decoders_[decoder_index(lang)];
}

ag::Var TranslationModel::embed(const Batch& b, int positions, const Dropout& drop) const {
  const int d = cfg_.transformer.d_model;
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(b.batch) * positions);
  Matrix pe(b.batch * positions, d);
  for (int s = 0; s < b.batch; ++s)
    for (int t = 0; t < positions; ++t) {
      idx.push_back(b.at(s, t));
      auto src = positions_.row(t);
      std::copy(src.begin(), src.end(), pe.row(s * positions + t).begin());
    }
  ag::Var x = ag::add(ag::scale(ag::gather_rows(embedding, idx), std::sqrt(static_cast<double>(d))),
                      ag::constant(std::move(pe)));
  return drop(x);
}

Encoded TranslationModel::encode(const Batch& src, const Dropout& drop) const {
  check_lang(src.lang);
  if (src.max_len > cfg_.transformer.max_len)
    throw InputError("source of length " + std::to_string(src.max_len) + " exceeds max_len " +
                     std::to_string(cfg_.transformer.max_len));
  Encoded enc;
  enc.lang = src.lang;
  enc.states = {encoder_(embed(src, src.max_len, drop), src.batch, src.max_len, src.lengths, drop), src.batch,
                src.max_len, src.lengths};
  if (cfg_.flow_adapter) enc.latent = sentrep::pool_representation(enc.states, projection_);
  return enc;
}

ag::Var TranslationModel::target_latent(const Encoded& enc, int tgt_lang) const {
  check_lang(tgt_lang);
  if (!cfg_.flow_adapter || tgt_lang == enc.lang) return enc.latent;
  ++counters_->transforms;
  return flow::transform_latent(flows_[enc.lang], flows_[tgt_lang], enc.latent);
}

ag::Var TranslationModel::output_scores(const ag::Var& o, int lang) const {
  return ag::matmul_nt(o, ag::gather_rows(embedding, output_ids_[lang]));
}

ag::Var TranslationModel::logits(const Batch& tgt, const Encoded& enc, const ag::Var& z, const Dropout& drop) const {
  check_lang(tgt.lang);
  if (tgt.batch != enc.states.batch) throw UsageError("target batch size differs from source batch size");
  if (tgt.max_len > cfg_.transformer.max_len)
    throw InputError("target of length " + std::to_string(tgt.max_len) + " exceeds max_len");
  const int steps = tgt.max_len - 1;
  if (steps < 1) throw UsageError("target batch has no positions to predict");
  std::vector<int> in_lengths;
  for (int len : tgt.lengths) in_lengths.push_back(std::max(1, len - 1));
  ++counters_->routes[decoder_index(tgt.lang)][tgt.lang];
  ag::Var s = decoder_for(tgt.lang)(embed(tgt, steps, drop), tgt.batch, steps, in_lengths, enc.states.states,
                                    enc.states.max_len, enc.states.lengths, drop);
  if (cfg_.flow_adapter) {
    std::vector<int> owner;
    owner.reserve(static_cast<std::size_t>(tgt.batch) * steps);
    for (int b = 0; b < tgt.batch; ++b) owner.insert(owner.end(), steps, b);
    s = sentrep::gate_fuse(s, ag::gather_rows(z, owner), gate_);
  }
  return output_scores(s, tgt.lang);
}

ag::Var TranslationModel::sequence_loss(const Encoded& enc, const ag::Var& z, const Batch& tgt,
                                        const Dropout& drop) const {
  ag::Var scores = logits(tgt, enc, z, drop);
  const int steps = tgt.max_len - 1;
  std::vector<int> targets(static_cast<std::size_t>(tgt.batch) * steps, -1);
  const auto& index = output_index_[tgt.lang];
  for (int b = 0; b < tgt.batch; ++b)
    for (int t = 0; t + 1 < tgt.lengths[b]; ++t) {
      const int id = tgt.at(b, t + 1);
      if (index[id] < 0)
        throw InputError("token '" + vocab_.token(id) + "' cannot be produced in language " +
                         vocab_.language_name(tgt.lang));
      targets[b * steps + t] = index[id];
    }
  return ag::cross_entropy(scores, targets, -1);
}

ag::Var TranslationModel::sequence_loss(const Batch& src, const Batch& tgt, const Dropout& drop) const {
  Encoded enc = encode(src, drop);
  return sequence_loss(enc, target_latent(enc, tgt.lang), tgt, drop);
}

std::vector<TokenSequence> TranslationModel::greedy_decode(const Encoded& enc, const ag::Var& z, int tgt_lang,
                                                           int max_len, const LogitHook& hook) const {
  check_lang(tgt_lang);
  ag::NoGradGuard no_grad;
  const int batch = enc.states.batch;
  const int d = cfg_.transformer.d_model;
  max_len = std::min(max_len, cfg_.transformer.max_len);
  if (max_len < 2) throw UsageError("greedy_decode: max_len must be at least 2");
  const Decoder& dec = decoder_for(tgt_lang);
  ++counters_->routes[decoder_index(tgt_lang)][tgt_lang];
  const auto& out_ids = output_ids_[tgt_lang];
  const int unk_col = output_index_[tgt_lang][Vocabulary::kUnk];
  const double scale = std::sqrt(static_cast<double>(d));

  std::vector<TokenSequence> out(static_cast<std::size_t>(batch));
  for (auto& s : out) s = {{vocab_.bos(tgt_lang)}, tgt_lang};
  std::vector<bool> done(static_cast<std::size_t>(batch), false);
  int remaining = batch;
  const int capacity = max_len - 1;
  DecoderCache cache = dec.start(enc.states.states, batch, capacity);
  std::vector<int> current(static_cast<std::size_t>(batch), vocab_.bos(tgt_lang));

  for (int t = 0; t < capacity && remaining > 0; ++t) {
    Matrix y = ag::gather_rows(embedding, current).value();
    y *= scale;
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < d; ++j) y(b, j) += positions_(t, j);
    ag::Var s = dec.step(ag::constant(std::move(y)), cache, batch, enc.states.max_len, enc.states.lengths);
    if (cfg_.flow_adapter) s = sentrep::gate_fuse(s, z, gate_);
    Matrix scores = output_scores(s, tgt_lang).value();
    if (hook) hook(scores);
    for (int b = 0; b < batch; ++b) {
      if (done[b]) continue;
      int best = Vocabulary::kEos;
      if (t + 1 < capacity) {
        auto row = scores.row(b);
        int arg = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < static_cast<int>(row.size()); ++c)
          if (c != unk_col && row[c] > best_score) best_score = row[c], arg = c;
        best = arg < 0 ? Vocabulary::kEos : out_ids[arg];
      }
      out[b].ids.push_back(best);
      current[b] = best;
      if (best == Vocabulary::kEos) done[b] = true, --remaining;
    }
  }
  return out;
}

std::vector<TokenSequence> TranslationModel::translate(std::span<const TokenSequence> xs, int l1, int l2,
                                                       int max_len) const {
  check_lang(l1);
  check_lang(l2);
  if (max_len <= 0) max_len = cfg_.transformer.max_len;
  ag::NoGradGuard no_grad;
  std::vector<TokenSequence> out;
  out.reserve(xs.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < xs.size(); begin += kChunk) {
    auto chunk = xs.subspan(begin, std::min(kChunk, xs.size() - begin));
    for (const auto& x : chunk) {
      if (x.lang != l1) throw UsageError("translate: sentence is not tagged with the source language");
      x.validate(vocab_, cfg_.transformer.max_len);
    }
    Encoded enc = encode(make_batch(chunk));
    auto part = greedy_decode(enc, target_latent(enc, l2), l2, max_len);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

TokenSequence TranslationModel::translate(const TokenSequence& x, int l1, int l2) const {
  return translate(std::span<const TokenSequence>(&x, 1), l1, l2).front();
}

ag::ParamList TranslationModel::parameters() const {
  ag::ParamList out{{"embedding", embedding}};
  encoder_.collect("encoder", out);
  for (std::size_t i = 0; i < decoders_.size(); ++i) decoders_[i].collect("decoder" + std::to_string(i), out);
  if (cfg_.flow_adapter) {
    for (int l = 0; l < 2; ++l) flows_[l].collect("flow." + vocab_.language_name(l), out);
    projection_.collect("projection", out);
    gate_.collect("gate", out);
  }
  return out;
}

ag::ParamList TranslationModel::buffers() const {
  ag::ParamList out;
  if (cfg_.flow_adapter)
    for (int l = 0; l < 2; ++l) flows_[l].collect_buffers("flow." + vocab_.language_name(l), out);
  return out;
}

}  // namespace fa::seq2seq
