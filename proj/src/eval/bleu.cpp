#include "flowadapter/eval/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "flowadapter/core/errors.hpp"

namespace fa::eval {

namespace {

template <class T>
BleuReport corpus_bleu(std::span<const std::vector<T>> hyps, std::span<const std::vector<T>> refs, int max_n,
                       bool smooth) {
  if (hyps.size() != refs.size())
    throw UsageError("bleu: " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                     " references");
  if (hyps.empty()) throw UsageError("bleu: no sentence pairs");
  if (max_n < 1) throw UsageError("bleu: max_n must be at least 1");
  BleuReport r;
  r.matches.assign(max_n, 0);
  r.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& ref = refs[s];
    r.hyp_length += static_cast<long>(h.size());
    r.ref_length += static_cast<long>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<std::vector<T>, long> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(c, it->second);
        r.totals[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < max_n; ++n) {
    const double add = (smooth && n > 0) ? 1.0 : 0.0;
    const double p = r.totals[n] + add > 0 ? (r.matches[n] + add) / (r.totals[n] + add) : 0.0;
    r.precisions.push_back(p);
    if (p <= 0.0) zero = true;
    else log_sum += std::log(p);
  }
  const double c = static_cast<double>(std::max(r.hyp_length, 1L));
  r.brevity_penalty = c < r.ref_length ? std::exp(1.0 - r.ref_length / c) : 1.0;
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / max_n);
  return r;
}

}  // namespace

std::string BleuReport::to_string() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "BLEU = %.2f", bleu);
  std::string s = buf;
  for (std::size_t i = 0; i < precisions.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.1f", i ? "/" : ", ", 100.0 * precisions[i]);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, " (BP = %.3f, hyp_len = %ld, ref_len = %ld)", brevity_penalty, hyp_length,
                ref_length);
  return s + buf;
}

BleuReport bleu(std::span<const std::vector<std::string>> hyps, std::span<const std::vector<std::string>> refs,
                int max_n, bool smooth) {
  return corpus_bleu(hyps, refs, max_n, smooth);
}

BleuReport bleu(std::span<const seq2seq::TokenSequence> hyps, std::span<const seq2seq::TokenSequence> refs, int max_n,
                bool smooth) {
  std::vector<std::vector<int>> h, r;
  for (const auto& s : hyps) h.push_back(s.interior());
  for (const auto& s : refs) r.push_back(s.interior());
  return corpus_bleu<int>(h, r, max_n, smooth);
}

}  // namespace fa::eval
