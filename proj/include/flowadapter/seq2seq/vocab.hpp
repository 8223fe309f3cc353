#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fa::seq2seq {

// Joint id space: pad, unk, eos, one bos per language, then (language, token)
// entries. Surface tokens of different languages never share an id.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEos = 2;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> languages);

  int add(int lang, const std::string& token);
  int lookup(int lang, const std::string& token) const;  // kUnk when absent
  bool contains(int lang, const std::string& token) const;

  int bos(int lang) const;
  bool is_bos(int id) const { return id >= 3 && id < reserved_count(); }
  bool is_reserved(int id) const { return id < reserved_count(); }
  int reserved_count() const { return 3 + static_cast<int>(languages_.size()); }

  // Language of a token id, -1 for pad/unk/eos.
  int language_of(int id) const;
  const std::string& token(int id) const;
  std::vector<int> token_ids(int lang) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int language_count() const { return static_cast<int>(languages_.size()); }
  const std::vector<std::string>& languages() const { return languages_; }
  const std::string& language_name(int lang) const;
  int language_index(const std::string& name) const;  // UsageError if unknown

  bool operator==(const Vocabulary& other) const;

 private:
  void check_lang(int lang) const;

  std::vector<std::string> languages_;
  std::vector<std::string> tokens_;
  std::vector<int> token_lang_;
  std::vector<std::map<std::string, int>> index_;
};

// bos_l, w_1 .. w_S, eos.
struct TokenSequence {
  std::vector<int> ids;
  int lang = 0;

  int size() const { return static_cast<int>(ids.size()); }
  std::vector<int> interior() const;
  void validate(const Vocabulary& vocab, int max_len) const;
  bool operator==(const TokenSequence&) const = default;
};

TokenSequence make_sequence(const Vocabulary& vocab, int lang, std::span<const std::string> tokens);
TokenSequence make_sequence(const Vocabulary& vocab, int lang, std::span<const int> interior);
std::vector<std::string> surface_tokens(const Vocabulary& vocab, const TokenSequence& seq);

// Right-padded batch, ids laid out (batch x max_len) row-major.
struct Batch {
  std::vector<int> ids;
  std::vector<int> lengths;
  int batch = 0;
  int max_len = 0;
  int lang = 0;

  int at(int b, int t) const { return ids[static_cast<std::size_t>(b) * max_len + t]; }
};

Batch make_batch(std::span<const TokenSequence> seqs);

}  // namespace fa::seq2seq
