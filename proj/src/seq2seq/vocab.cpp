#include "flowadapter/seq2seq/vocab.hpp"

#include <algorithm>

#include "flowadapter/core/errors.hpp"

namespace fa::seq2seq {

Vocabulary::Vocabulary(std::vector<std::string> languages) : languages_(std::move(languages)) {
  if (languages_.empty()) throw ConfigError("vocabulary needs at least one language");
  for (std::size_t i = 0; i < languages_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (languages_[i] == languages_[j]) throw ConfigError("duplicate language tag '" + languages_[i] + "'");
  tokens_ = {"<pad>", "<unk>", "</s>"};
  token_lang_ = {-1, -1, -1};
  for (const auto& l : languages_) {
    tokens_.push_back("<s:" + l + ">");
    token_lang_.push_back(-1);
  }
  index_.resize(languages_.size());
}

void Vocabulary::check_lang(int lang) const {
  if (lang < 0 || lang >= language_count()) throw UsageError("unknown language index " + std::to_string(lang));
}

int Vocabulary::add(int lang, const std::string& token) {
  check_lang(lang);
  if (token.empty()) throw ConfigError("vocabulary: empty token");
  auto [it, inserted] = index_[lang].emplace(token, size());
  if (inserted) {
    tokens_.push_back(token);
    token_lang_.push_back(lang);
  }
  return it->second;
}

int Vocabulary::lookup(int lang, const std::string& token) const {
  check_lang(lang);
  auto it = index_[lang].find(token);
  return it == index_[lang].end() ? kUnk : it->second;
}

bool Vocabulary::contains(int lang, const std::string& token) const {
  check_lang(lang);
  return index_[lang].count(token) > 0;
}

int Vocabulary::bos(int lang) const {
  check_lang(lang);
  return 3 + lang;
}

int Vocabulary::language_of(int id) const {
  if (id < 0 || id >= size()) throw UsageError("token id " + std::to_string(id) + " out of range");
  if (is_bos(id)) return id - 3;
  return token_lang_[id];
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw UsageError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<int> Vocabulary::token_ids(int lang) const {
  check_lang(lang);
  std::vector<int> out;
  for (int id = reserved_count(); id < size(); ++id)
    if (token_lang_[id] == lang) out.push_back(id);
  return out;
}

const std::string& Vocabulary::language_name(int lang) const {
  check_lang(lang);
  return languages_[lang];
}

int Vocabulary::language_index(const std::string& name) const {
  auto it = std::find(languages_.begin(), languages_.end(), name);
  if (it == languages_.end()) throw UsageError("unknown language '" + name + "'");
  return static_cast<int>(it - languages_.begin());
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  return languages_ == other.languages_ && tokens_ == other.tokens_ && token_lang_ == other.token_lang_;
}

std::vector<int> TokenSequence::interior() const {
  if (ids.size() < 2) return {};
  return {ids.begin() + 1, ids.end() - 1};
}

void TokenSequence::validate(const Vocabulary& vocab, int max_len) const {
  if (ids.size() < 2 || ids.front() != vocab.bos(lang) || ids.back() != Vocabulary::kEos)
    throw InputError("token sequence must start with bos of its language and end with eos");
  if (size() > max_len)
    throw InputError("token sequence of length " + std::to_string(size()) + " exceeds max_len " +
                     std::to_string(max_len));
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= vocab.size()) throw InputError("token id " + std::to_string(id) + " out of range");
    if (id == Vocabulary::kPad || id == Vocabulary::kEos || vocab.is_bos(id))
      throw InputError("reserved id " + std::to_string(id) + " inside a sentence");
  }
}

TokenSequence make_sequence(const Vocabulary& vocab, int lang, std::span<const std::string> tokens) {
  TokenSequence s{{vocab.bos(lang)}, lang};
  for (const auto& t : tokens) s.ids.push_back(vocab.lookup(lang, t));
  s.ids.push_back(Vocabulary::kEos);
  return s;
}

TokenSequence make_sequence(const Vocabulary& vocab, int lang, std::span<const int> interior) {
  TokenSequence s{{vocab.bos(lang)}, lang};
  s.ids.insert(s.ids.end(), interior.begin(), interior.end());
  s.ids.push_back(Vocabulary::kEos);
  return s;
}

std::vector<std::string> surface_tokens(const Vocabulary& vocab, const TokenSequence& seq) {
  std::vector<std::string> out;
  for (int id : seq.interior()) out.push_back(vocab.token(id));
  return out;
}

Batch make_batch(std::span<const TokenSequence> seqs) {
  if (seqs.empty()) throw UsageError("make_batch: no sequences");
  Batch b;
  b.batch = static_cast<int>(seqs.size());
  b.lang = seqs.front().lang;
  for (const auto& s : seqs) {
    if (s.lang != b.lang) throw UsageError("make_batch: mixed languages in one batch");
    if (s.ids.empty()) throw UsageError("make_batch: empty sequence");
    b.max_len = std::max(b.max_len, s.size());
    b.lengths.push_back(s.size());
  }
  b.ids.assign(static_cast<std::size_t>(b.batch) * b.max_len, Vocabulary::kPad);
  for (int i = 0; i < b.batch; ++i) std::copy(seqs[i].ids.begin(), seqs[i].ids.end(), b.ids.begin() + i * b.max_len);
  return b;
}

}  // namespace fa::seq2seq
