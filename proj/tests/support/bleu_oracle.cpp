#include "bleu_oracle.hpp"

#include <algorithm>
#include <cmath>

namespace fa::testing {

using Sent = std::vector<std::string>;

namespace {

long occurrences(const Sent& s, Sent::const_iterator g, std::size_t n) {
  long c = 0;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    if (std::equal(g, g + n, s.begin() + i)) ++c;
  return c;
}

}  // namespace

double brute_force_bleu(const std::vector<Sent>& hyps, const std::vector<Sent>& refs, int max_n) {
  double log_p = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double match = 0, total = 0;
    for (std::size_t k = 0; k < hyps.size(); ++k) {
      const Sent& h = hyps[k];
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        bool first = true;
        for (std::size_t j = 0; j < i && first; ++j)
          if (std::equal(h.begin() + i, h.begin() + i + n, h.begin() + j)) first = false;
        if (first) match += std::min(occurrences(h, h.begin() + i, n), occurrences(refs[k], h.begin() + i, n));
      }
      total += std::max<long>(0, static_cast<long>(h.size()) - n + 1);
    }
    if (match == 0) return 0.0;
    log_p += std::log(match / total) / max_n;
  }
  long c = 0, r = 0;
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    c += static_cast<long>(hyps[k].size());
    r += static_cast<long>(refs[k].size());
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / c) : 1.0;
  return 100.0 * bp * std::exp(log_p);
}

}  // namespace fa::testing
