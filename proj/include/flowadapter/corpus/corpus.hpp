#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flowadapter/seq2seq/vocab.hpp"

namespace fa::corpus {

// Whitespace-normalized sentences of one language, in file order.
struct RawCorpus {
  std::string lang;
  std::vector<std::string> sentences;
};

struct ParallelPair {
  std::string source;
  std::string target;
};

// Throws InputError naming `origin` and the 1-based line on invalid UTF-8 or
// empty lines. CRLF and LF are equivalent.
RawCorpus parse_corpus(std::string_view text, const std::string& lang, const std::string& origin = "<memory>");
RawCorpus load_corpus(const std::filesystem::path& path, const std::string& lang);
void write_corpus(const std::filesystem::path& path, const RawCorpus& corpus);

// Tab-separated source/target lines.
std::vector<ParallelPair> load_parallel(const std::filesystem::path& path);
void write_parallel(const std::filesystem::path& path, std::span<const ParallelPair> pairs);

bool valid_utf8(std::string_view s);
std::string normalize_whitespace(std::string_view s);
std::vector<std::string> tokenize(std::string_view sentence);
std::string detokenize(std::span<const std::string> tokens);

// Frequency-ranked per-language tokens after the reserved ids. Languages take
// the order of `corpora`; ties rank by language then lexicographically.
// max_size counts reserved ids; 0 means unbounded.
seq2seq::Vocabulary build_vocab(std::span<const RawCorpus> corpora, int max_size = 0, int min_freq = 1);

std::vector<seq2seq::TokenSequence> to_sequences(const seq2seq::Vocabulary& vocab, const RawCorpus& corpus,
                                                 int max_len);

struct SplitResult {
  RawCorpus first;   // l1 side of the first half
  RawCorpus second;  // l2 side of the second half
  std::vector<int> first_indices;
  std::vector<int> second_indices;
};

SplitResult monolingual_split(std::span<const ParallelPair> parallel, const std::string& lang1,
                              const std::string& lang2, std::uint64_t seed);
std::string split_manifest(const SplitResult& split, std::uint64_t seed);

struct CipherSpec {
  int vocab_size = 50;
  int min_length = 5;
  int max_length = 12;
  int sentences_per_language = 2000;
  int valid_pairs = 200;
  int test_pairs = 500;
  int successors = 4;
  double zipf_exponent = 1.0;
  std::uint64_t seed = 1;
  std::string lang1 = "l1";
  std::string lang2 = "l2";

  void validate() const;
};

struct CipherPair {
  RawCorpus l1;
  RawCorpus l2;
  std::vector<ParallelPair> valid;
  std::vector<ParallelPair> test;
  std::vector<std::string> l1_tokens;  // l1_tokens[i] enciphers to l2_tokens[i]
  std::vector<std::string> l2_tokens;
  SplitResult split;
};

CipherPair generate_cipher_pair(const CipherSpec& spec);
std::string encipher(const CipherPair& pair, std::string_view l1_sentence);

// Length-bucketed batches of indices into `seqs`; order shuffled by `rng`.
std::vector<std::vector<int>> bucket_batches(std::span<const seq2seq::TokenSequence> seqs, int batch_size,
                                             std::mt19937_64& rng);

}  // namespace fa::corpus
