#include "toy_model.hpp"

namespace fa::testing {

seq2seq::Vocabulary toy_vocab(int per_lang) {
  seq2seq::Vocabulary v({"x", "y"});
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < per_lang; ++i) v.add(l, v.language_name(l) + std::to_string(i));
  return v;
}

seq2seq::ModelConfig toy_config(int d_model, flow::FlowType type) {
  seq2seq::ModelConfig cfg;
  cfg.transformer = {.d_model = d_model, .n_heads = 2, .n_layers = 1, .d_ff = 2 * d_model, .dropout = 0.0,
                     .max_len = 24, .shared_decoder = true, .separate_embeddings = true};
  cfg.flow = {.type = type, .layers = 2, .dim = 4, .hidden = 8, .s_max = 2.0};
  return cfg;
}

seq2seq::TokenSequence random_sentence(const seq2seq::Vocabulary& vocab, int lang, int length, std::mt19937_64& rng) {
  auto ids = vocab.token_ids(lang);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  std::vector<int> interior;
  for (int i = 0; i < length; ++i) interior.push_back(ids[pick(rng)]);
  return seq2seq::make_sequence(vocab, lang, interior);
}

}  // namespace fa::testing
