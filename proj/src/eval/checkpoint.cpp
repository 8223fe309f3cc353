#include "flowadapter/eval/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/eval/config.hpp"

namespace fa::eval {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "flowadapter-checkpoint";

ag::ParamList state_of(const seq2seq::TranslationModel& model) {
  ag::ParamList state = model.parameters();
  for (auto& b : model.buffers()) state.push_back(b);
  return state;
}

void put_double(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

[[noreturn]] void malformed(const std::string& what) { throw InputError("malformed checkpoint: " + what); }

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) malformed("missing '" + key + "' line");
  if (line.rfind(key + " ", 0) != 0) malformed("expected '" + key + "', got '" + line.substr(0, 40) + "'");
  return line.substr(key.size() + 1);
}

json parse_json(const std::string& text, const std::string& key) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    malformed("bad " + key + " record");
  }
}

long parse_long(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used != text.size() || v < 0) malformed("bad " + key);
    return v;
  } catch (const std::logic_error&) {
    malformed("bad " + key);
  }
}

}  // namespace

json vocab_to_json(const seq2seq::Vocabulary& vocab) {
  json tokens = json::array();
  for (int id = vocab.reserved_count(); id < vocab.size(); ++id)
    tokens.push_back({vocab.language_of(id), vocab.token(id)});
  return {{"languages", vocab.languages()}, {"tokens", tokens}};
}

seq2seq::Vocabulary vocab_from_json(const json& j) {
  try {
    seq2seq::Vocabulary v(j.at("languages").get<std::vector<std::string>>());
    for (const auto& t : j.at("tokens")) {
      const int expected = v.size();
      if (v.add(t.at(0).get<int>(), t.at(1).get<std::string>()) != expected) malformed("duplicate vocabulary entry");
    }
    return v;
  } catch (const json::exception&) {
    malformed("bad vocabulary record");
  } catch (const UsageError& e) {
    malformed(e.what());
  }
}

std::string serialize_checkpoint(const seq2seq::TranslationModel& model, const json& config, long cursor) {
  const ag::ParamList state = state_of(model);
  std::ostringstream head;
  head << kMagic << ' ' << kCheckpointVersion << '\n'
       << "model " << model_config_to_json(model.config()).dump() << '\n'
       << "vocab " << vocab_to_json(model.vocab()).dump() << '\n'
       << "config " << config.dump() << '\n'
       << "cursor " << cursor << '\n'
       << "tensors " << state.size() << '\n';
  for (const auto& p : state) head << p.name << ' ' << p.var.value().rows() << ' ' << p.var.value().cols() << '\n';
  head << "data\n";
  std::string out = head.str();
  for (const auto& p : state) {
    const Matrix& m = p.var.value();
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) put_double(out, m(r, c));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const seq2seq::TranslationModel& model, const json& config,
                     long cursor) {
  const std::string bytes = serialize_checkpoint(model, config, cursor);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw InputError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InputError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line.rfind(std::string(kMagic) + " ", 0) != 0) malformed("not a checkpoint file");
  const std::string version = line.substr(std::string(kMagic).size() + 1);
  if (version != std::to_string(kCheckpointVersion))
    throw InputError("checkpoint format version " + version + " is not supported (expected " +
                     std::to_string(kCheckpointVersion) + ")");

  seq2seq::ModelConfig cfg;
  try {
    cfg = model_config_from_json(parse_json(expect_line(in, "model"), "model"));
  } catch (const ConfigError& e) {
    malformed(e.what());
  }
  seq2seq::Vocabulary vocab = vocab_from_json(parse_json(expect_line(in, "vocab"), "vocab"));
  Checkpoint ck;
  ck.config = parse_json(expect_line(in, "config"), "config");
  ck.cursor = parse_long(expect_line(in, "cursor"), "cursor");
  const long n = parse_long(expect_line(in, "tensors"), "tensor count");

  ck.model = std::make_unique<seq2seq::TranslationModel>(cfg, std::move(vocab), 0);
  const ag::ParamList state = state_of(*ck.model);
  if (n != static_cast<long>(state.size()))
    malformed("has " + std::to_string(n) + " tensors, model expects " + std::to_string(state.size()));
  std::size_t doubles = 0;
  for (const auto& p : state) {
    std::string name;
    int rows = -1, cols = -1;
    if (!std::getline(in, line)) malformed("truncated tensor table");
    std::istringstream row(line);
    row >> name >> rows >> cols;
    if (name != p.name || rows != p.var.value().rows() || cols != p.var.value().cols())
      malformed("tensor '" + line + "' does not match '" + p.name + "'");
    doubles += static_cast<std::size_t>(rows) * cols;
  }
  if (!std::getline(in, line) || line != "data") malformed("missing data marker");
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - offset != doubles * 8) malformed("payload size does not match tensor table");

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  for (const auto& param : state) {
    ag::Var var = param.var;
    Matrix& m = var.mutable_value();
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c, p += 8) m(r, c) = get_double(p);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace fa::eval
