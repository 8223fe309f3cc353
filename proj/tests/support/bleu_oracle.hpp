#pragma once

#include <string>
#include <vector>

namespace fa::testing {

// Quadratic-time corpus BLEU: counts each n-gram occurrence by scanning.
double brute_force_bleu(const std::vector<std::vector<std::string>>& hyps,
                        const std::vector<std::vector<std::string>>& refs, int max_n);

}  // namespace fa::testing
