#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flowadapter/core/optim.hpp"
#include "flowadapter/corpus/corpus.hpp"
#include "flowadapter/seq2seq/model.hpp"

namespace fa::trainer {

struct NoiseConfig {
  double p_wd = 0.1;
  int k = 3;

  void validate() const;
};

// Survivor bookkeeping of one add_noise call: kept[j] is the interior index of
// the j-th survivor and order[i] the survivor placed at output position i.
struct NoiseTrace {
  std::vector<int> kept;
  std::vector<int> order;
};

seq2seq::TokenSequence add_noise(const seq2seq::TokenSequence& x, const NoiseConfig& cfg, std::mt19937_64& rng,
                                 NoiseTrace* trace = nullptr);

struct TrainConfig {
  double lambda_mle = 0.01;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 10;
  int warmup_epochs = 3;
  int warmup_steps = -1;  // >= 0 overrides warmup_epochs, counted in iterations
  double dropout = 0.2;
  double flow_dropout = 0.0;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  bool bt_enabled = true;
  bool mle_stop_gradient = false;
  int bt_length_slack = 5;  // greedy BT output may exceed the source by this many tokens
  NoiseConfig noise;

  void validate() const;
};

struct DaeLosses {
  double reconstruction = 0.0;
  double mle = 0.0;
  double total = 0.0;
};

// Reconstruction of `batch` from its noised copy plus lambda_mle times the flow
// MLE of the pooled latents; builds the graph without touching gradients.
ag::Var dae_loss(const seq2seq::TranslationModel& model, std::span<const seq2seq::TokenSequence> batch,
                 const TrainConfig& cfg, std::mt19937_64& rng, DaeLosses* parts = nullptr);

// Back-translation loss for `batch` in l1: greedy l1 -> l2 without gradients,
// then cross-entropy of recovering the originals. Sentences whose synthetic
// translation is empty are skipped and counted. Undefined Var if all skipped.
ag::Var bt_loss(const seq2seq::TranslationModel& model, std::span<const seq2seq::TokenSequence> batch, int l1, int l2,
                const TrainConfig& cfg, std::mt19937_64& rng, int* skipped = nullptr);

struct EpochMetrics {
  int epoch = 0;
  long step = 0;
  double dae_loss[2] = {0, 0};
  double mle[2] = {0, 0};
  std::optional<double> bt[2];          // [0] = l1->l2->l1, [1] = l2->l1->l2
  std::optional<double> valid_bleu[2];  // [0] = l1->l2, [1] = l2->l1
  long bt_skipped = 0;

  std::string to_json() const;
};

struct Corpora {
  std::vector<seq2seq::TokenSequence> mono[2];
  std::vector<seq2seq::TokenSequence> valid_src[2];  // valid_src[l] translated into 1 - l
  std::vector<seq2seq::TokenSequence> valid_ref[2];
};

Corpora prepare_corpora(const seq2seq::Vocabulary& vocab, const corpus::RawCorpus& l1, const corpus::RawCorpus& l2,
                        std::span<const corpus::ParallelPair> valid, int max_len);

struct TrainResult {
  std::vector<EpochMetrics> log;
  int best_epoch = -1;
  double best_bleu = 0.0;
};

class Trainer {
 public:
  Trainer(seq2seq::TranslationModel& model, const TrainConfig& cfg);

  DaeLosses dae_step(std::span<const seq2seq::TokenSequence> batch, std::mt19937_64& rng);
  double bt_step(std::span<const seq2seq::TokenSequence> batch, int l1, int l2, std::mt19937_64& rng,
                 int* skipped = nullptr);
  // Data-dependent actnorm initialization from the first sentences of each language.
  void initialize_flows(const Corpora& data);

  // Runs all epochs; leaves the model at the epoch with the best mean
  // validation BLEU (or the last epoch without validation data).
  // `on_epoch` sees each epoch's metrics and whether it is the new best.
  TrainResult train(const Corpora& data, const std::function<void(const EpochMetrics&, bool)>& on_epoch = {});

  long steps() const { return steps_; }
  long dae_steps() const { return dae_steps_; }
  long bt_steps() const { return bt_steps_; }

 private:
  void update(const ag::Var& loss, const char* what);
  std::pair<double, double> validate(const Corpora& data) const;

  seq2seq::TranslationModel& model_;
  TrainConfig cfg_;
  ag::ParamList params_;
  optim::Adam adam_;
  long steps_ = 0, dae_steps_ = 0, bt_steps_ = 0;
};

}  // namespace fa::trainer
