#include "flowadapter/eval/cli.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/corpus/corpus.hpp"
#include "flowadapter/eval/bleu.hpp"
#include "flowadapter/eval/checkpoint.hpp"
#include "flowadapter/eval/config.hpp"
#include "flowadapter/eval/diagnostics.hpp"
#include "flowadapter/trainer/trainer.hpp"

namespace fa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) throw InputError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir.string() + ": " + ec.message());
}

// "l1-l2" -> (index of l1, index of l2) in the model vocabulary.
std::pair<int, int> parse_direction(const seq2seq::Vocabulary& vocab, const std::string& direction) {
  const auto dash = direction.find('-');
  if (dash == std::string::npos) throw UsageError("direction must look like <src>-<tgt>, got '" + direction + "'");
  const std::string a = direction.substr(0, dash), b = direction.substr(dash + 1);
  if (a == b) throw UsageError("direction needs two different languages");
  return {vocab.language_index(a), vocab.language_index(b)};
}

std::vector<std::vector<std::string>> tokenized(std::span<const std::string> sentences) {
  std::vector<std::vector<std::string>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(corpus::tokenize(s));
  return out;
}

std::vector<seq2seq::TokenSequence> translate_lines(const seq2seq::TranslationModel& model,
                                                    const std::vector<std::string>& lines, int from, int to) {
  const corpus::RawCorpus src{model.vocab().language_name(from), lines};
  auto seqs = corpus::to_sequences(model.vocab(), src, model.config().transformer.max_len);
  return model.translate(seqs, from, to);
}

std::vector<std::string> surface_lines(const seq2seq::Vocabulary& vocab, std::span<const seq2seq::TokenSequence> seqs) {
  std::vector<std::string> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(corpus::detokenize(seq2seq::surface_tokens(vocab, s)));
  return out;
}

int gen_cipher(const std::string& spec_path, const fs::path& out_dir, std::ostream& out) {
  corpus::CipherSpec spec;
  if (!spec_path.empty()) spec = eval::cipher_spec_from_json(read_json(spec_path));
  const corpus::CipherPair pair = corpus::generate_cipher_pair(spec);
  ensure_dir(out_dir);
  corpus::write_corpus(out_dir / (spec.lang1 + ".txt"), pair.l1);
  corpus::write_corpus(out_dir / (spec.lang2 + ".txt"), pair.l2);
  corpus::write_parallel(out_dir / "valid.tsv", pair.valid);
  corpus::write_parallel(out_dir / "test.tsv", pair.test);
  json manifest = {{"cipher", eval::cipher_spec_to_json(spec)},
                   {"l1_tokens", pair.l1_tokens},
                   {"l2_tokens", pair.l2_tokens},
                   {"split", json::parse(corpus::split_manifest(pair.split, spec.seed ^ 0x9E3779B97F4A7C15ull))}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << pair.l1.sentences.size() << " + " << pair.l2.sentences.size() << " monolingual sentences, "
      << pair.valid.size() << " valid and " << pair.test.size() << " test pairs to " << out_dir.string() << '\n';
  return kOk;
}

int train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out_dir, std::ostream& out) {
  const eval::RunConfig cfg = eval::load_run_config(config_path);
  const std::vector<corpus::RawCorpus> mono{corpus::load_corpus(data_dir / (cfg.data.lang1 + ".txt"), cfg.data.lang1),
                                            corpus::load_corpus(data_dir / (cfg.data.lang2 + ".txt"), cfg.data.lang2)};
  std::vector<corpus::ParallelPair> valid;
  if (fs::exists(data_dir / "valid.tsv")) valid = corpus::load_parallel(data_dir / "valid.tsv");
  const seq2seq::Vocabulary vocab = corpus::build_vocab(mono, cfg.data.max_vocab, cfg.data.min_freq);
  const int max_len = cfg.model.transformer.max_len;
  const trainer::Corpora data = trainer::prepare_corpora(vocab, mono[0], mono[1], valid, max_len);

  ensure_dir(out_dir);
  const json snapshot = eval::to_json(cfg);
  write_text(out_dir / "config.json", snapshot.dump(2) + "\n");
  seq2seq::TranslationModel model(cfg.model, vocab, cfg.seed);
  trainer::Trainer tr(model, cfg.train);

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw InputError("cannot write " + (out_dir / "metrics.jsonl").string());
  long cursor = 0;
  if (cfg.train.epochs == 0) {
    eval::save_checkpoint(out_dir / "best.ckpt", model, snapshot, cursor);
    eval::save_checkpoint(out_dir / "last.ckpt", model, snapshot, cursor);
  }
  const auto result = tr.train(data, [&](const trainer::EpochMetrics& m, bool best) {
    metrics << m.to_json() << '\n' << std::flush;
    ++cursor;
    eval::save_checkpoint(out_dir / "last.ckpt", model, snapshot, cursor);
    if (best) eval::save_checkpoint(out_dir / "best.ckpt", model, snapshot, cursor);
    out << "epoch " << m.epoch << " step " << m.step << " dae " << m.dae_loss[0] << ' ' << m.dae_loss[1];
    if (m.valid_bleu[0]) out << " valid_bleu " << *m.valid_bleu[0] << ' ' << *m.valid_bleu[1];
    out << (best ? " *" : "") << std::endl;
  });
  if (result.best_epoch >= 0) out << "best epoch " << result.best_epoch << " mean valid BLEU " << result.best_bleu << '\n';
  return kOk;
}

int translate(const fs::path& ckpt, const fs::path& src, const std::string& from, const std::string& to,
              const fs::path& out_path) {
  const eval::Checkpoint ck = eval::load_checkpoint(ckpt);
  const auto& vocab = ck.model->vocab();
  const int l1 = vocab.language_index(from), l2 = vocab.language_index(to);
  const corpus::RawCorpus input = corpus::load_corpus(src, from);
  const auto hyps = translate_lines(*ck.model, input.sentences, l1, l2);
  std::string text;
  for (const auto& line : surface_lines(vocab, hyps)) text += line + '\n';
  write_text(out_path, text);
  return kOk;
}

struct EvalArgs {
  std::string ckpt, test, direction, hyp, ref;
  int max_n = 4;
  bool smooth = false;
};

int evaluate(const EvalArgs& a, std::ostream& out) {
  std::vector<std::string> hyps, refs;
  double copy = -1.0;
  if (!a.hyp.empty() || !a.ref.empty()) {
    if (a.hyp.empty() || a.ref.empty() || !a.ckpt.empty()) throw UsageError("evaluate takes --hyp with --ref, or --ckpt");
    hyps = corpus::load_corpus(a.hyp, "hyp").sentences;
    refs = corpus::load_corpus(a.ref, "ref").sentences;
  } else {
    if (a.ckpt.empty() || a.test.empty() || a.direction.empty())
      throw UsageError("evaluate needs --ckpt, --test and --direction (or --hyp and --ref)");
    const eval::Checkpoint ck = eval::load_checkpoint(a.ckpt);
    const auto& vocab = ck.model->vocab();
    const auto [l1, l2] = parse_direction(vocab, a.direction);
    std::vector<std::string> src;
    for (const auto& p : corpus::load_parallel(a.test)) {
      // columns follow the vocabulary's language order
      src.push_back(l1 == 0 ? p.source : p.target);
      refs.push_back(l1 == 0 ? p.target : p.source);
    }
    const auto out_seqs = translate_lines(*ck.model, src, l1, l2);
    hyps = surface_lines(vocab, out_seqs);
    copy = eval::copy_rate(vocab, out_seqs, l1);
  }
  const auto h = tokenized(hyps), r = tokenized(refs);
  const eval::BleuReport report = eval::bleu(h, r, a.max_n, a.smooth);
  out << report.to_string() << '\n';
  out << "bleu " << report.bleu << "\nbrevity_penalty " << report.brevity_penalty << "\nhyp_length "
      << report.hyp_length << "\nref_length " << report.ref_length << '\n';
  for (std::size_t n = 0; n < report.precisions.size(); ++n)
    out << "p" << n + 1 << ' ' << report.precisions[n] << '\n';
  if (copy >= 0.0) out << "copy_rate " << copy << '\n';
  return kOk;
}

int inspect_flow(const fs::path& ckpt, const fs::path& data_dir, std::ostream& out) {
  const eval::Checkpoint ck = eval::load_checkpoint(ckpt);
  const auto& model = *ck.model;
  if (!model.has_adapter()) throw UsageError("checkpoint has no flow adapters to inspect");
  for (int l = 0; l < 2; ++l) {
    const std::string& lang = model.vocab().language_name(l);
    const auto raw = corpus::load_corpus(data_dir / (lang + ".txt"), lang);
    const auto seqs = corpus::to_sequences(model.vocab(), raw, model.config().transformer.max_len);
    out << eval::density_report(model, seqs, l).to_string();
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flow-adapter unsupervised translation"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-cipher", "Generate a synthetic cipher language pair");
  gen->add_option("--spec", spec_path, "JSON cipher spec (defaults otherwise)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string config, data, train_out;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "JSON run config")->required();
  tr->add_option("--data", data, "Directory with <lang>.txt and valid.tsv")->required();
  tr->add_option("--out", train_out, "Output directory")->required();

  std::string ckpt, src, from, to, trans_out;
  auto* trans = app.add_subcommand("translate", "Translate a file line by line");
  trans->add_option("--ckpt", ckpt)->required();
  trans->add_option("--src", src)->required();
  trans->add_option("--from", from)->required();
  trans->add_option("--to", to)->required();
  trans->add_option("--out", trans_out)->required();

  EvalArgs ev;
  auto* evc = app.add_subcommand("evaluate", "Corpus BLEU of a checkpoint or of a hypothesis file");
  evc->add_option("--ckpt", ev.ckpt);
  evc->add_option("--test", ev.test, "Tab-separated test pairs");
  evc->add_option("--direction", ev.direction, "<src>-<tgt>");
  evc->add_option("--hyp", ev.hyp);
  evc->add_option("--ref", ev.ref);
  evc->add_option("--max-n", ev.max_n)->check(CLI::PositiveNumber);
  evc->add_flag("--smooth", ev.smooth, "Add-one smoothing for n > 1");

  std::string inspect_ckpt, inspect_data;
  auto* insp = app.add_subcommand("inspect-flow", "Latent log-likelihood statistics");
  insp->add_option("--ckpt", inspect_ckpt)->required();
  insp->add_option("--data", inspect_data)->required();

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*gen) return gen_cipher(spec_path, out_dir, out);
    if (*tr) return train(config, data, train_out, out);
    if (*trans) return translate(ckpt, src, from, to, trans_out);
    if (*evc) return evaluate(ev, out);
    if (*insp) return inspect_flow(inspect_ckpt, inspect_data, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace fa::cli
