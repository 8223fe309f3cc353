#include "flowadapter/eval/config.hpp"

#include <fstream>
#include <set>

#include "flowadapter/core/errors.hpp"

namespace fa::eval {

using nlohmann::json;

namespace {

// Reads the keys of one section and remembers which ones it consumed.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  Section& get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
    return *this;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

const json& section_or_empty(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

void read_model(const json& j, seq2seq::ModelConfig& m) {
  auto& t = m.transformer;
  Section(j, "model")
      .get("d_model", t.d_model)
      .get("n_heads", t.n_heads)
      .get("n_layers", t.n_layers)
      .get("d_ff", t.d_ff)
      .get("max_len", t.max_len)
      .get("shared_decoder", t.shared_decoder)
      .get("separate_embeddings", t.separate_embeddings)
      .get("flow_adapter", m.flow_adapter)
      .finish();
}

void read_flow(const json& j, flow::FlowConfig& f) {
  std::string type = flow::to_string(f.type);
  Section(j, "flow")
      .get("type", type)
      .get("layers", f.layers)
      .get("dim", f.dim)
      .get("hidden", f.hidden)
      .get("s_max", f.s_max)
      .finish();
  try {
    f.type = flow::flow_type_from_string(type);
  } catch (const Error&) {
    throw ConfigError("flow.type must be realnvp or glow, got '" + type + "'");
  }
}

json write_flow(const flow::FlowConfig& f) {
  return {{"type", flow::to_string(f.type)}, {"layers", f.layers}, {"dim", f.dim}, {"hidden", f.hidden},
          {"s_max", f.s_max}};
}

json write_model(const seq2seq::ModelConfig& m) {
  const auto& t = m.transformer;
  return {{"d_model", t.d_model},
          {"n_heads", t.n_heads},
          {"n_layers", t.n_layers},
          {"d_ff", t.d_ff},
          {"max_len", t.max_len},
          {"shared_decoder", t.shared_decoder},
          {"separate_embeddings", t.separate_embeddings},
          {"flow_adapter", m.flow_adapter}};
}

}  // namespace

void RunConfig::validate() const {
  if (data.lang1.empty() || data.lang2.empty() || data.lang1 == data.lang2)
    throw ConfigError("data.lang1 and data.lang2 must be distinct non-empty names");
  if (data.max_vocab < 0 || data.min_freq < 1) throw ConfigError("data.max_vocab must be >= 0 and min_freq >= 1");
  model.validate();
  train.validate();
  cipher.validate();
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "seed" && key != "data" && key != "model" && key != "flow" && key != "train" && key != "noise" &&
        key != "cipher")
      throw ConfigError("unknown config section '" + key + "'");
  RunConfig cfg;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  Section(section_or_empty(j, "data"), "data")
      .get("lang1", cfg.data.lang1)
      .get("lang2", cfg.data.lang2)
      .get("max_vocab", cfg.data.max_vocab)
      .get("min_freq", cfg.data.min_freq)
      .finish();
  read_model(section_or_empty(j, "model"), cfg.model);
  read_flow(section_or_empty(j, "flow"), cfg.model.flow);
  auto& t = cfg.train;
  Section(section_or_empty(j, "train"), "train")
      .get("lambda_mle", t.lambda_mle)
      .get("lr", t.lr)
      .get("beta1", t.beta1)
      .get("beta2", t.beta2)
      .get("adam_eps", t.adam_eps)
      .get("batch_size", t.batch_size)
      .get("epochs", t.epochs)
      .get("warmup_epochs", t.warmup_epochs)
      .get("warmup_steps", t.warmup_steps)
      .get("dropout", t.dropout)
      .get("flow_dropout", t.flow_dropout)
      .get("clip_norm", t.clip_norm)
      .get("bt_enabled", t.bt_enabled)
      .get("mle_stop_gradient", t.mle_stop_gradient)
      .get("bt_length_slack", t.bt_length_slack)
      .finish();
  Section(section_or_empty(j, "noise"), "noise").get("p_wd", t.noise.p_wd).get("k", t.noise.k).finish();
  if (j.contains("cipher")) cfg.cipher = cipher_spec_from_json(j["cipher"]);
  t.seed = cfg.seed;
  cfg.model.transformer.dropout = t.dropout;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  return {{"seed", cfg.seed},
          {"data",
           {{"lang1", cfg.data.lang1},
            {"lang2", cfg.data.lang2},
            {"max_vocab", cfg.data.max_vocab},
            {"min_freq", cfg.data.min_freq}}},
          {"model", write_model(cfg.model)},
          {"flow", write_flow(cfg.model.flow)},
          {"train",
           {{"lambda_mle", t.lambda_mle},
            {"lr", t.lr},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"warmup_epochs", t.warmup_epochs},
            {"warmup_steps", t.warmup_steps},
            {"dropout", t.dropout},
            {"flow_dropout", t.flow_dropout},
            {"clip_norm", t.clip_norm},
            {"bt_enabled", t.bt_enabled},
            {"mle_stop_gradient", t.mle_stop_gradient},
            {"bt_length_slack", t.bt_length_slack}}},
          {"noise", {{"p_wd", t.noise.p_wd}, {"k", t.noise.k}}},
          {"cipher", cipher_spec_to_json(cfg.cipher)}};
}

json model_config_to_json(const seq2seq::ModelConfig& cfg) {
  json j = write_model(cfg);
  j["dropout"] = cfg.transformer.dropout;
  j["flow"] = write_flow(cfg.flow);
  return j;
}

seq2seq::ModelConfig model_config_from_json(const json& j) {
  seq2seq::ModelConfig cfg;
  json rest = j;
  if (!rest.is_object()) throw ConfigError("model config must be an object");
  if (rest.contains("flow")) {
    read_flow(rest["flow"], cfg.flow);
    rest.erase("flow");
  }
  if (rest.contains("dropout")) {
    if (!rest["dropout"].is_number()) throw ConfigError("model.dropout has the wrong type");
    cfg.transformer.dropout = rest["dropout"].get<double>();
    rest.erase("dropout");
  }
  read_model(rest, cfg);
  cfg.validate();
  return cfg;
}

corpus::CipherSpec cipher_spec_from_json(const json& j) {
  corpus::CipherSpec s;
  Section(j, "cipher")
      .get("vocab_size", s.vocab_size)
      .get("min_length", s.min_length)
      .get("max_length", s.max_length)
      .get("sentences_per_language", s.sentences_per_language)
      .get("valid_pairs", s.valid_pairs)
      .get("test_pairs", s.test_pairs)
      .get("successors", s.successors)
      .get("zipf_exponent", s.zipf_exponent)
      .get("seed", s.seed)
      .get("lang1", s.lang1)
      .get("lang2", s.lang2)
      .finish();
  s.validate();
  return s;
}

json cipher_spec_to_json(const corpus::CipherSpec& s) {
  return {{"vocab_size", s.vocab_size},
          {"min_length", s.min_length},
          {"max_length", s.max_length},
          {"sentences_per_language", s.sentences_per_language},
          {"valid_pairs", s.valid_pairs},
          {"test_pairs", s.test_pairs},
          {"successors", s.successors},
          {"zipf_exponent", s.zipf_exponent},
          {"seed", s.seed},
          {"lang1", s.lang1},
          {"lang2", s.lang2}};
}

}  // namespace fa::eval
