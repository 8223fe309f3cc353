#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowadapter/seq2seq/vocab.hpp"

namespace fa::eval {

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::vector<double> precisions;
  std::vector<long> matches;
  std::vector<long> totals;
  double brevity_penalty = 1.0;
  long hyp_length = 0;
  long ref_length = 0;

  std::string to_string() const;
};

// Corpus BLEU with clipped n-gram counts and a single reference per
// hypothesis. `smooth` adds one to matches and totals for n > 1.
BleuReport bleu(std::span<const std::vector<std::string>> hyps, std::span<const std::vector<std::string>> refs,
                int max_n = 4, bool smooth = false);
BleuReport bleu(std::span<const seq2seq::TokenSequence> hyps, std::span<const seq2seq::TokenSequence> refs,
                int max_n = 4, bool smooth = false);

}  // namespace fa::eval
