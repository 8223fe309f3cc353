#pragma once

#include <span>
#include <string>

#include "flowadapter/seq2seq/model.hpp"

namespace fa::eval {

struct DensityReport {
  std::string lang;
  long count = 0;
  double mean = 0.0;  // log-likelihood of pooled latents under lang's flow
  double min = 0.0;
  double max = 0.0;
  double cross_mean = 0.0;  // transformed latents under the other language's flow

  std::string to_string() const;
};

DensityReport density_report(const seq2seq::TranslationModel& model, std::span<const seq2seq::TokenSequence> seqs,
                             int lang);

// Fraction of hypotheses containing at least one token of `source_lang`.
double copy_rate(const seq2seq::Vocabulary& vocab, std::span<const seq2seq::TokenSequence> hyps, int source_lang);

}  // namespace fa::eval
