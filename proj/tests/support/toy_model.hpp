#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowadapter/seq2seq/model.hpp"

namespace fa::testing {

// Two languages "x" and "y" with `per_lang` tokens each ("x0", "y0", ...).
seq2seq::Vocabulary toy_vocab(int per_lang);

seq2seq::ModelConfig toy_config(int d_model, flow::FlowType type = flow::FlowType::RealNVP);

// Random sentence of the given interior length in `lang`.
seq2seq::TokenSequence random_sentence(const seq2seq::Vocabulary& vocab, int lang, int length, std::mt19937_64& rng);

}  // namespace fa::testing
