#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "flowadapter/corpus/corpus.hpp"
#include "flowadapter/seq2seq/model.hpp"
#include "flowadapter/trainer/trainer.hpp"

namespace fa::eval {

struct DataConfig {
  std::string lang1 = "l1";
  std::string lang2 = "l2";
  int max_vocab = 0;
  int min_freq = 1;
};

// Everything one `train` run needs. Sections: seed, data, model, flow, train,
// noise, cipher. train.dropout also sets the transformer dropout.
struct RunConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  seq2seq::ModelConfig model;
  trainer::TrainConfig train;
  corpus::CipherSpec cipher;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys and wrong types raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json model_config_to_json(const seq2seq::ModelConfig& cfg);
seq2seq::ModelConfig model_config_from_json(const nlohmann::json& j);
corpus::CipherSpec cipher_spec_from_json(const nlohmann::json& j);
nlohmann::json cipher_spec_to_json(const corpus::CipherSpec& spec);

}  // namespace fa::eval
