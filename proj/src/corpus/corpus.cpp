#include "flowadapter/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/random.hpp"

namespace fa::corpus {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw InputError("error while reading " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("error while writing " + path.string());
}

// Physical lines with the terminator (LF or CRLF) removed; a final newline
// does not start a new line.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::string where(const std::string& origin, std::size_t line) { return origin + ":" + std::to_string(line + 1); }

}  // namespace

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1, cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2, cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3, cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

std::string normalize_whitespace(std::string_view s) { return detokenize(tokenize(s)); }

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < sentence.size()) {
    while (i < sentence.size() && is_space(sentence[i])) ++i;
    std::size_t j = i;
    while (j < sentence.size() && !is_space(sentence[j])) ++j;
    if (j > i) out.emplace_back(sentence.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

RawCorpus parse_corpus(std::string_view text, const std::string& lang, const std::string& origin) {
  RawCorpus corpus{lang, {}};
  auto lines = split_lines(text);
  while (!lines.empty() && tokenize(lines.back()).empty()) lines.pop_back();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!valid_utf8(lines[i])) throw InputError(where(origin, i) + ": invalid UTF-8");
    std::string s = normalize_whitespace(lines[i]);
    if (s.empty()) throw InputError(where(origin, i) + ": empty sentence");
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

RawCorpus load_corpus(const std::filesystem::path& path, const std::string& lang) {
  return parse_corpus(read_file(path), lang, path.string());
}

void write_corpus(const std::filesystem::path& path, const RawCorpus& corpus) {
  std::string text;
  for (const auto& s : corpus.sentences) text += s + '\n';
  write_file(path, text);
}

std::vector<ParallelPair> load_parallel(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  auto lines = split_lines(text);
  while (!lines.empty() && tokenize(lines.back()).empty()) lines.pop_back();
  std::vector<ParallelPair> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!valid_utf8(lines[i])) throw InputError(where(path.string(), i) + ": invalid UTF-8");
    const auto tab = lines[i].find('\t');
    if (tab == std::string_view::npos || lines[i].find('\t', tab + 1) != std::string_view::npos)
      throw InputError(where(path.string(), i) + ": expected exactly one tab separating source and target");
    ParallelPair p{normalize_whitespace(lines[i].substr(0, tab)), normalize_whitespace(lines[i].substr(tab + 1))};
    if (p.source.empty() || p.target.empty()) throw InputError(where(path.string(), i) + ": empty side");
    out.push_back(std::move(p));
  }
  return out;
}

void write_parallel(const std::filesystem::path& path, std::span<const ParallelPair> pairs) {
  std::string text;
  for (const auto& p : pairs) text += p.source + '\t' + p.target + '\n';
  write_file(path, text);
}

seq2seq::Vocabulary build_vocab(std::span<const RawCorpus> corpora, int max_size, int min_freq) {
  if (corpora.empty()) throw UsageError("build_vocab: no corpora");
  std::vector<std::string> langs;
  for (const auto& c : corpora)
    if (std::find(langs.begin(), langs.end(), c.lang) == langs.end()) langs.push_back(c.lang);
  seq2seq::Vocabulary vocab(langs);
  if (max_size != 0 && max_size < vocab.reserved_count())
    throw ConfigError("max vocabulary size " + std::to_string(max_size) + " is below the " +
                      std::to_string(vocab.reserved_count()) + " reserved ids");
  if (min_freq < 1) throw ConfigError("min_freq must be at least 1");

  std::map<std::pair<int, std::string>, long> counts;
  for (const auto& c : corpora) {
    const int l = vocab.language_index(c.lang);
    for (const auto& s : c.sentences)
      for (auto& t : tokenize(s)) ++counts[{l, std::move(t)}];
  }
  struct Entry {
    long freq;
    int lang;
    const std::string* token;
  };
  std::vector<Entry> entries;
  for (const auto& [key, freq] : counts)
    if (freq >= min_freq) entries.push_back({freq, key.first, &key.second});
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.freq != b.freq) return a.freq > b.freq;
    if (a.lang != b.lang) return a.lang < b.lang;
    return *a.token < *b.token;
  });
  std::size_t limit = entries.size();
  if (max_size != 0) limit = std::min(limit, static_cast<std::size_t>(max_size - vocab.reserved_count()));
  for (std::size_t i = 0; i < limit; ++i) vocab.add(entries[i].lang, *entries[i].token);
  return vocab;
}

std::vector<seq2seq::TokenSequence> to_sequences(const seq2seq::Vocabulary& vocab, const RawCorpus& corpus,
                                                 int max_len) {
  const int lang = vocab.language_index(corpus.lang);
  std::vector<seq2seq::TokenSequence> out;
  out.reserve(corpus.sentences.size());
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const auto tokens = tokenize(corpus.sentences[i]);
    if (static_cast<int>(tokens.size()) + 2 > max_len)
      throw InputError(corpus.lang + " sentence " + std::to_string(i + 1) + " has " + std::to_string(tokens.size()) +
                       " tokens; max_len " + std::to_string(max_len) + " allows " + std::to_string(max_len - 2));
    out.push_back(seq2seq::make_sequence(vocab, lang, tokens));
  }
  return out;
}

SplitResult monolingual_split(std::span<const ParallelPair> parallel, const std::string& lang1,
                              const std::string& lang2, std::uint64_t seed) {
  if (parallel.size() < 2) throw UsageError("monolingual_split needs at least 2 sentence pairs");
  std::vector<int> order(parallel.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  rnd::shuffle(std::span<int>(order), rng);
  const std::size_t half = order.size() - order.size() / 2;
  SplitResult r{{lang1, {}}, {lang2, {}}, {order.begin(), order.begin() + half}, {order.begin() + half, order.end()}};
  std::sort(r.first_indices.begin(), r.first_indices.end());
  std::sort(r.second_indices.begin(), r.second_indices.end());
  for (int i : r.first_indices) r.first.sentences.push_back(parallel[i].source);
  for (int i : r.second_indices) r.second.sentences.push_back(parallel[i].target);
  return r;
}

std::string split_manifest(const SplitResult& split, std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["languages"] = {split.first.lang, split.second.lang};
  j["first_indices"] = split.first_indices;
  j["second_indices"] = split.second_indices;
  return j.dump(1) + "\n";
}

void CipherSpec::validate() const {
  if (vocab_size < 10) throw ConfigError("cipher vocab_size " + std::to_string(vocab_size) + " < 10");
  if (min_length < 1 || max_length < min_length) throw ConfigError("cipher length range is empty");
  if (sentences_per_language < 1) throw ConfigError("cipher needs at least one sentence per language");
  if (valid_pairs < 0 || test_pairs < 0) throw ConfigError("cipher held-out sizes must be non-negative");
  if (successors < 1 || successors > vocab_size) throw ConfigError("cipher successors must lie in [1, vocab_size]");
  if (zipf_exponent < 0.0) throw ConfigError("cipher zipf_exponent must be non-negative");
  if (lang1.empty() || lang2.empty() || lang1 == lang2) throw ConfigError("cipher languages must be distinct");
}

namespace {

std::string token_name(char prefix, int i, int vocab_size) {
  const int width = std::max(2, static_cast<int>(std::to_string(vocab_size - 1).size()));
  std::string digits = std::to_string(i);
  return prefix + std::string(width - digits.size(), '0') + digits;
}

// Sparse bigram model over token indices; every token is reachable because each
// token's successor set contains the next token on a random cycle.
struct BigramModel {
  std::vector<double> start;
  std::vector<std::vector<int>> next;
  std::vector<std::vector<double>> weight;

  BigramModel(const CipherSpec& spec, std::mt19937_64& rng) {
    const int v = spec.vocab_size;
    std::vector<int> rank(v);
    std::iota(rank.begin(), rank.end(), 0);
    rnd::shuffle(std::span<int>(rank), rng);
    start.resize(v);
    for (int r = 0; r < v; ++r) start[rank[r]] = 1.0 / std::pow(r + 1.0, spec.zipf_exponent);
    std::vector<int> cycle(v);
    std::iota(cycle.begin(), cycle.end(), 0);
    rnd::shuffle(std::span<int>(cycle), rng);
    next.resize(v);
    weight.resize(v);
    for (int k = 0; k < v; ++k) {
      const int t = cycle[k];
      next[t].push_back(cycle[(k + 1) % v]);
      while (static_cast<int>(next[t].size()) < spec.successors) {
        const int cand = static_cast<int>(rnd::uniform_index(rng, v));
        if (std::find(next[t].begin(), next[t].end(), cand) == next[t].end()) next[t].push_back(cand);
      }
      for (std::size_t j = 0; j < next[t].size(); ++j) weight[t].push_back(0.2 + rnd::uniform01(rng));
    }
  }

  std::vector<int> sample(const CipherSpec& spec, std::mt19937_64& rng) const {
    const int len = spec.min_length + static_cast<int>(rnd::uniform_index(rng, spec.max_length - spec.min_length + 1));
    std::vector<int> s{static_cast<int>(rnd::categorical(start, rng))};
    while (static_cast<int>(s.size()) < len) {
      const int prev = s.back();
      s.push_back(next[prev][rnd::categorical(weight[prev], rng)]);
    }
    return s;
  }
};

}  // namespace

CipherPair generate_cipher_pair(const CipherSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int v = spec.vocab_size;
  CipherPair pair;
  std::vector<int> mapping(v);
  std::iota(mapping.begin(), mapping.end(), 0);
  rnd::shuffle(std::span<int>(mapping), rng);
  for (int i = 0; i < v; ++i) {
    pair.l1_tokens.push_back(token_name('a', i, v));
    pair.l2_tokens.push_back(token_name('b', mapping[i], v));
  }
  BigramModel lm(spec, rng);
  auto render = [&](const std::vector<int>& s) {
    ParallelPair p;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) p.source += ' ', p.target += ' ';
      p.source += pair.l1_tokens[s[i]];
      p.target += pair.l2_tokens[s[i]];
    }
    return p;
  };
  std::vector<ParallelPair> pool;
  for (int i = 0; i < 2 * spec.sentences_per_language; ++i) pool.push_back(render(lm.sample(spec, rng)));
  for (int i = 0; i < spec.valid_pairs; ++i) pair.valid.push_back(render(lm.sample(spec, rng)));
  for (int i = 0; i < spec.test_pairs; ++i) pair.test.push_back(render(lm.sample(spec, rng)));
  pair.split = monolingual_split(pool, spec.lang1, spec.lang2, spec.seed ^ 0x9E3779B97F4A7C15ULL);
  pair.l1 = pair.split.first;
  pair.l2 = pair.split.second;
  return pair;
}

std::string encipher(const CipherPair& pair, std::string_view l1_sentence) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(l1_sentence)) {
    auto it = std::find(pair.l1_tokens.begin(), pair.l1_tokens.end(), t);
    if (it == pair.l1_tokens.end()) throw InputError("token '" + t + "' is not in the cipher source vocabulary");
    out.push_back(pair.l2_tokens[it - pair.l1_tokens.begin()]);
  }
  return detokenize(out);
}

std::vector<std::vector<int>> bucket_batches(std::span<const seq2seq::TokenSequence> seqs, int batch_size,
                                             std::mt19937_64& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<std::pair<std::uint64_t, int>> keyed;
  for (std::size_t i = 0; i < seqs.size(); ++i) keyed.push_back({rng(), static_cast<int>(i)});
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    const int la = seqs[a.second].size(), lb = seqs[b.second].size();
    return la != lb ? la < lb : a.first < b.first;
  });
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < keyed.size(); i += batch_size) {
    std::vector<int> b;
    for (std::size_t j = i; j < std::min(keyed.size(), i + batch_size); ++j) b.push_back(keyed[j].second);
    batches.push_back(std::move(b));
  }
  rnd::shuffle(std::span<std::vector<int>>(batches), rng);
  return batches;
}

}  // namespace fa::corpus
