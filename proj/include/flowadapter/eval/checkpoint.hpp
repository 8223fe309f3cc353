#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "flowadapter/seq2seq/model.hpp"

namespace fa::eval {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<seq2seq::TranslationModel> model;
  nlohmann::json config;  // run config snapshot
  long cursor = 0;        // metrics log lines written when saved
};

// Text header (magic, version, model config, vocabulary, run config, cursor,
// tensor names and shapes) followed by little-endian IEEE doubles. Written to
// a sibling temp file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const seq2seq::TranslationModel& model,
                     const nlohmann::json& config = nlohmann::json::object(), long cursor = 0);
std::string serialize_checkpoint(const seq2seq::TranslationModel& model, const nlohmann::json& config, long cursor);

// Throws InputError on a malformed file or a version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);

nlohmann::json vocab_to_json(const seq2seq::Vocabulary& vocab);
seq2seq::Vocabulary vocab_from_json(const nlohmann::json& j);

}  // namespace fa::eval
