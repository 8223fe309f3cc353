#include "flowadapter/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"
#include "flowadapter/core/random.hpp"
#include "flowadapter/eval/bleu.hpp"

namespace fa::trainer {

using seq2seq::TokenSequence;

void NoiseConfig::validate() const {
  if (!(p_wd >= 0.0 && p_wd <= 1.0)) throw ConfigError("noise p_wd must lie in [0, 1]");
  if (k < 0) throw ConfigError("noise k must be non-negative");
}

TokenSequence add_noise(const TokenSequence& x, const NoiseConfig& cfg, std::mt19937_64& rng, NoiseTrace* trace) {
  const auto interior = x.interior();
  std::vector<int> kept;
  for (int i = 0; i < static_cast<int>(interior.size()); ++i)
    if (rnd::uniform01(rng) >= cfg.p_wd) kept.push_back(i);
  // Sorting i + U[0, k + 1) moves no survivor more than k places.
  std::vector<double> key(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) key[i] = static_cast<double>(i) + rnd::uniform01(rng) * (cfg.k + 1);
  std::vector<int> order(kept.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key[a] < key[b]; });

  TokenSequence out{{x.ids.front()}, x.lang};
  for (int j : order) out.ids.push_back(interior[kept[j]]);
  out.ids.push_back(x.ids.back());
  if (trace) *trace = {std::move(kept), std::move(order)};
  return out;
}

void TrainConfig::validate() const {
  noise.validate();
  if (lambda_mle < 0.0) throw ConfigError("lambda_mle must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("warmup_epochs must lie in [0, epochs]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (flow_dropout != 0.0) throw ConfigError("flow_dropout must be 0: flows are trained without dropout");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (bt_length_slack < 0) throw ConfigError("bt_length_slack must be non-negative");
}

ag::Var dae_loss(const seq2seq::TranslationModel& model, std::span<const TokenSequence> batch, const TrainConfig& cfg,
                 std::mt19937_64& rng, DaeLosses* parts) {
  std::vector<TokenSequence> noised;
  noised.reserve(batch.size());
  for (const auto& x : batch) noised.push_back(add_noise(x, cfg.noise, rng));
  const seq2seq::Dropout drop{cfg.dropout, &rng};
  seq2seq::Encoded enc = model.encode(seq2seq::make_batch(noised), drop);
  ag::Var rec = model.sequence_loss(enc, model.target_latent(enc, enc.lang), seq2seq::make_batch(batch), drop);
  ag::Var total = rec;
  double mle_value = 0.0;
  if (model.has_adapter()) {
    ag::Var z = cfg.mle_stop_gradient ? ag::constant(enc.latent.value()) : enc.latent;
    ag::Var mle = flow::mle_loss(model.flow(enc.lang), model.base(), z);
    mle_value = mle.item();
    if (cfg.lambda_mle > 0.0) total = ag::add(rec, ag::scale(mle, cfg.lambda_mle));
  }
  if (parts) *parts = {rec.item(), mle_value, total.item()};
  return total;
}

ag::Var bt_loss(const seq2seq::TranslationModel& model, std::span<const TokenSequence> batch, int l1, int l2,
                const TrainConfig& cfg, std::mt19937_64& rng, int* skipped) {
  int longest = 0;
  for (const auto& x : batch) longest = std::max(longest, x.size());
  std::vector<TokenSequence> synthetic = model.translate(batch, l1, l2, longest + cfg.bt_length_slack);
  std::vector<TokenSequence> src, tgt;
  int dropped = 0;
  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    if (synthetic[i].size() <= 2) {
      ++dropped;
      continue;
    }
    src.push_back(std::move(synthetic[i]));
    tgt.push_back(batch[i]);
  }
  if (skipped) *skipped = dropped;
  if (src.empty()) return {};
  const seq2seq::Dropout drop{cfg.dropout, &rng};
  return model.sequence_loss(seq2seq::make_batch(src), seq2seq::make_batch(tgt), drop);
}

std::string EpochMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["dae_loss_l1"] = dae_loss[0];
  j["dae_loss_l2"] = dae_loss[1];
  j["mle_l1"] = mle[0];
  j["mle_l2"] = mle[1];
  j["bt_l1l2"] = opt(bt[0]);
  j["bt_l2l1"] = opt(bt[1]);
  j["valid_bleu_l1l2"] = opt(valid_bleu[0]);
  j["valid_bleu_l2l1"] = opt(valid_bleu[1]);
  j["bt_skipped"] = bt_skipped;
  return j.dump();
}

Corpora prepare_corpora(const seq2seq::Vocabulary& vocab, const corpus::RawCorpus& l1, const corpus::RawCorpus& l2,
                        std::span<const corpus::ParallelPair> valid, int max_len) {
  if (vocab.language_count() != 2 || vocab.language_name(0) != l1.lang || vocab.language_name(1) != l2.lang)
    throw ConfigError("corpora languages (" + l1.lang + ", " + l2.lang + ") do not match the vocabulary");
  Corpora c;
  c.mono[0] = corpus::to_sequences(vocab, l1, max_len);
  c.mono[1] = corpus::to_sequences(vocab, l2, max_len);
  if (c.mono[0].empty() || c.mono[1].empty()) throw ConfigError("both monolingual corpora must be non-empty");
  corpus::RawCorpus vs{l1.lang, {}}, vt{l2.lang, {}};
  for (const auto& p : valid) {
    vs.sentences.push_back(p.source);
    vt.sentences.push_back(p.target);
  }
  c.valid_src[0] = c.valid_ref[1] = corpus::to_sequences(vocab, vs, max_len);
  c.valid_src[1] = c.valid_ref[0] = corpus::to_sequences(vocab, vt, max_len);
  return c;
}

Trainer::Trainer(seq2seq::TranslationModel& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      params_(model.parameters()),
      adam_(params_, {.lr = cfg.lr, .beta1 = cfg.beta1, .beta2 = cfg.beta2, .eps = cfg.adam_eps}) {
  cfg_.validate();
}

void Trainer::update(const ag::Var& loss, const char* what) {
  if (!std::isfinite(loss.item()))
    throw NumericError(std::string(what) + " loss is " + std::to_string(loss.item()) + " at step " +
                       std::to_string(steps_));
  adam_.zero_grad();
  loss.backward();
  const double norm = optim::clip_grad_norm(params_, cfg_.clip_norm);
  if (!std::isfinite(norm))
    throw NumericError(std::string(what) + " gradient norm is not finite at step " + std::to_string(steps_));
  adam_.step();
  ++steps_;
}

DaeLosses Trainer::dae_step(std::span<const TokenSequence> batch, std::mt19937_64& rng) {
  DaeLosses parts;
  ag::Var loss = dae_loss(model_, batch, cfg_, rng, &parts);
  update(loss, "dae");
  ++dae_steps_;
  return parts;
}

double Trainer::bt_step(std::span<const TokenSequence> batch, int l1, int l2, std::mt19937_64& rng, int* skipped) {
  ag::Var loss = bt_loss(model_, batch, l1, l2, cfg_, rng, skipped);
  if (!loss.defined()) return 0.0;
  update(loss, "back-translation");
  ++bt_steps_;
  return loss.item();
}

void Trainer::initialize_flows(const Corpora& data) {
  if (!model_.has_adapter()) return;
  ag::NoGradGuard no_grad;
  for (int l = 0; l < 2; ++l) {
    const auto& mono = data.mono[l];
    const std::size_t n = std::min<std::size_t>(mono.size(), std::max(cfg_.batch_size, 64));
    auto enc = model_.encode(seq2seq::make_batch(std::span<const TokenSequence>(mono.data(), n)));
    model_.flow(l).initialize(enc.latent.value());
  }
}

std::pair<double, double> Trainer::validate(const Corpora& data) const {
  double score[2];
  for (int l = 0; l < 2; ++l) {
    auto hyps = model_.translate(data.valid_src[l], l, 1 - l);
    score[l] = eval::bleu(hyps, data.valid_ref[l]).bleu;
  }
  return {score[0], score[1]};
}

TrainResult Trainer::train(const Corpora& data, const std::function<void(const EpochMetrics&, bool)>& on_epoch) {
  TrainResult result;
  if (cfg_.epochs == 0) return result;
  if (data.mono[0].empty() || data.mono[1].empty()) throw ConfigError("training needs both monolingual corpora");
  initialize_flows(data);
  ag::ParamList state = model_.parameters();
  for (const auto& b : model_.buffers()) state.push_back(b);
  ag::StateDict best = ag::snapshot(state);
  const bool has_valid = !data.valid_src[0].empty() && !data.valid_src[1].empty();
  long iteration = 0;

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::seed_seq epoch_seed{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                             static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 epoch_rng(epoch_seed);
    std::vector<std::vector<int>> batches[2];
    for (int l = 0; l < 2; ++l) batches[l] = corpus::bucket_batches(data.mono[l], cfg_.batch_size, epoch_rng);
    const std::size_t n_iter = std::max(batches[0].size(), batches[1].size());

    EpochMetrics m;
    m.epoch = epoch;
    double bt_sum[2] = {0, 0};
    long bt_count[2] = {0, 0};
    for (std::size_t it = 0; it < n_iter; ++it, ++iteration) {
      std::seed_seq it_seed{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                            static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(it)};
      std::mt19937_64 rng(it_seed);
      std::vector<TokenSequence> batch[2];
      for (int l = 0; l < 2; ++l)
        for (int idx : batches[l][it % batches[l].size()]) batch[l].push_back(data.mono[l][idx]);
      for (int l = 0; l < 2; ++l) {
        DaeLosses d = dae_step(batch[l], rng);
        m.dae_loss[l] += d.reconstruction / n_iter;
        m.mle[l] += d.mle / n_iter;
      }
      const bool warm = cfg_.warmup_steps >= 0 ? iteration < cfg_.warmup_steps : epoch < cfg_.warmup_epochs;
      if (cfg_.bt_enabled && !warm) {
        for (int l = 0; l < 2; ++l) {
          int skipped = 0;
          const double loss = bt_step(batch[l], l, 1 - l, rng, &skipped);
          m.bt_skipped += skipped;
          if (skipped < static_cast<int>(batch[l].size())) bt_sum[l] += loss, ++bt_count[l];
        }
      }
    }
    for (int l = 0; l < 2; ++l)
      if (bt_count[l] > 0) m.bt[l] = bt_sum[l] / bt_count[l];
    m.step = steps_;

    bool improved = false;
    if (has_valid) {
      auto [b12, b21] = validate(data);
      m.valid_bleu[0] = b12;
      m.valid_bleu[1] = b21;
      const double mean = 0.5 * (b12 + b21);
      improved = result.best_epoch < 0 || mean > result.best_bleu;
      if (improved) result.best_bleu = mean;
    } else {
      improved = true;
    }
    if (improved) {
      result.best_epoch = epoch;
      best = ag::snapshot(state);
    }
    result.log.push_back(m);
    if (on_epoch) on_epoch(m, improved);
  }
  ag::restore(state, best);
  return result;
}

}  // namespace fa::trainer
