#include "gslu/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace gslu {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");
static_assert(sizeof(float) == 4, "checkpoint payload assumes 32-bit floats");

namespace {

constexpr char kMagic[4] = {'G', 'S', 'L', 'U'};
constexpr std::uint32_t kFormatVersion = 1;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_scalar(double v) { return format_double(v); }

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("d", std::to_string(cfg.d));
  kv.emplace_back("n_heads", std::to_string(cfg.n_heads));
  kv.emplace_back("n_enc_layers", std::to_string(cfg.n_enc_layers));
  kv.emplace_back("n_dec_layers", std::to_string(cfg.n_dec_layers));
  kv.emplace_back("d_ff", std::to_string(cfg.d_ff));
  kv.emplace_back("alpha", format_scalar(cfg.alpha));
  kv.emplace_back("vocab_size", std::to_string(cfg.vocab_size));
  kv.emplace_back("n_intents", std::to_string(cfg.n_intents));
  kv.emplace_back("n_slots", std::to_string(cfg.n_slots));
  kv.emplace_back("max_len", std::to_string(cfg.max_len));
  kv.emplace_back("dropout_p", format_scalar(cfg.dropout_p));
  kv.emplace_back("aoa_enabled", cfg.aoa_enabled ? "1" : "0");
  kv.emplace_back("aoa_sam_reuse_self", cfg.aoa_sam_reuse_self ? "1" : "0");
  kv.emplace_back("aoa_mix_zero", cfg.aoa_mix_zero ? "1" : "0");
  kv.emplace_back("residual_enabled", cfg.residual_enabled ? "1" : "0");
  return kv;
}

bool apply_model_config_kv(ModelConfig& cfg, const std::string& key, const std::string& value) {
  auto to_int = [&](int& out) { out = std::stoi(value); };
  auto to_double = [&](double& out) { out = std::stod(value); };
  auto to_bool = [&](bool& out) {
    if (value != "0" && value != "1")
      throw CheckpointError("boolean config key '" + key + "' expects 0 or 1, got '" + value + "'");
    out = value == "1";
  };
  if (key == "d") to_int(cfg.d);
  else if (key == "n_heads") to_int(cfg.n_heads);
  else if (key == "n_enc_layers") to_int(cfg.n_enc_layers);
  else if (key == "n_dec_layers") to_int(cfg.n_dec_layers);
  else if (key == "d_ff") to_int(cfg.d_ff);
  else if (key == "alpha") to_double(cfg.alpha);
  else if (key == "vocab_size") to_int(cfg.vocab_size);
  else if (key == "n_intents") to_int(cfg.n_intents);
  else if (key == "n_slots") to_int(cfg.n_slots);
  else if (key == "max_len") to_int(cfg.max_len);
  else if (key == "dropout_p") to_double(cfg.dropout_p);
  else if (key == "aoa_enabled") to_bool(cfg.aoa_enabled);
  else if (key == "aoa_sam_reuse_self") to_bool(cfg.aoa_sam_reuse_self);
  else if (key == "aoa_mix_zero") to_bool(cfg.aoa_mix_zero);
  else if (key == "residual_enabled") to_bool(cfg.residual_enabled);
  else return false;
  return true;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta, const Tokenizer& tokenizer,
                     const LabelVocabulary& vocab) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);

  os.write(kMagic, sizeof kMagic);
  write_u32(os, kFormatVersion);
  write_u32(os, static_cast<std::uint32_t>(params.order.size()));

  std::uint64_t offset = 0;
  for (const auto& name : params.order) {
    const Mat<float>& w = *params.value(name);
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(w.rows()));
    write_u32(os, static_cast<std::uint32_t>(w.cols()));
    write_u64(os, offset);
    offset += static_cast<std::uint64_t>(w.size()) * sizeof(float);
  }
  for (const auto& name : params.order) {
    // row-major matrices: the payload is plain row scan order
    const Mat<float>& w = *params.value(name);
    os.write(reinterpret_cast<const char*>(w.data()),
             static_cast<std::streamsize>(w.size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("write failure on checkpoint: " + path);
  os.close();

  std::ofstream ms(path + ".meta", std::ios::trunc);
  if (!ms) throw CheckpointError("cannot open checkpoint sidecar for writing: " + path + ".meta");
  ms << "format_version=" << meta.version << "\n";
  for (const auto& [k, v] : model_config_kv(params.cfg)) ms << k << "=" << v << "\n";
  ms << "epoch=" << meta.epoch << "\n";
  ms << "dev_metric=" << format_double(meta.dev_metric) << "\n";
  ms << "learning_rate=" << format_double(meta.learning_rate) << "\n";
  ms << "seed=" << meta.seed << "\n";
  if (!ms) throw CheckpointError("write failure on checkpoint sidecar: " + path + ".meta");

  std::ofstream vs(path + ".vocab", std::ios::trunc);
  if (!vs) throw CheckpointError("cannot open checkpoint sidecar for writing: " + path + ".vocab");
  vs << "[tokens]\n";
  tokenizer.save(vs);
  vs << "[intents]\n";
  for (const auto& name : vocab.intent_names()) vs << name << "\n";
  vs << "[slots]\n";
  for (const auto& name : vocab.slot_names()) vs << name << "\n";
  if (!vs) throw CheckpointError("write failure on checkpoint sidecar: " + path + ".vocab");
}

namespace {

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open checkpoint sidecar: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointError(path + ":" + std::to_string(line_no) + ": expected key=value");
    if (!kv.emplace(line.substr(0, eq), line.substr(eq + 1)).second)
      throw CheckpointError(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                            line.substr(0, eq) + "'");
  }
  return kv;
}

std::string require_key(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw CheckpointError(path + ": missing key '" + key + "'");
  return it->second;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);

  char magic[4] = {};
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint file (bad magic): " + path);
  const std::uint32_t version = read_u32(is, "version");
  if (version != kFormatVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kFormatVersion) + ")");
  const std::uint32_t count = read_u32(is, "tensor count");

  struct Entry {
    std::string name;
    std::uint32_t rows, cols;
    std::uint64_t offset;
  };
  std::vector<Entry> manifest;
  manifest.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, "manifest name length");
    if (name_len == 0 || name_len > 4096)
      throw CheckpointError("implausible manifest name length " + std::to_string(name_len) +
                            " (corrupt checkpoint?)");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw CheckpointError("checkpoint truncated while reading manifest name");
    const std::uint32_t rows = read_u32(is, "manifest rows");
    const std::uint32_t cols = read_u32(is, "manifest cols");
    const std::uint64_t offset = read_u64(is, "manifest offset");
    manifest.push_back({std::move(name), rows, cols, offset});
  }
  const std::streampos payload_start = is.tellg();

  const auto meta_kv = read_kv_file(path + ".meta");
  CheckpointMeta meta;
  meta.version = static_cast<std::uint32_t>(
      std::stoul(require_key(meta_kv, "format_version", path + ".meta")));
  meta.epoch = std::stoi(require_key(meta_kv, "epoch", path + ".meta"));
  meta.dev_metric = std::stod(require_key(meta_kv, "dev_metric", path + ".meta"));
  meta.learning_rate = std::stod(require_key(meta_kv, "learning_rate", path + ".meta"));
  meta.seed = std::stoull(require_key(meta_kv, "seed", path + ".meta"));

  ModelConfig cfg;
  for (const auto& [k, v] : meta_kv) {
    if (k == "format_version" || k == "epoch" || k == "dev_metric" || k == "learning_rate" ||
        k == "seed")
      continue;
    if (!apply_model_config_kv(cfg, k, v))
      throw CheckpointError(path + ".meta: unknown key '" + k + "'");
  }
  cfg.validate();

  ModelParams<float> params = ModelParams<float>::init(cfg, 0);
  if (manifest.size() != params.order.size())
    throw CheckpointError("manifest lists " + std::to_string(manifest.size()) +
                          " tensors but the configuration defines " +
                          std::to_string(params.order.size()));
  for (const auto& e : manifest) {
    auto it = params.val.find(e.name);
    if (it == params.val.end())
      throw CheckpointError("checkpoint carries unknown tensor '" + e.name + "'");
    Mat<float>& w = *it->second;
    if (static_cast<std::uint32_t>(w.rows()) != e.rows ||
        static_cast<std::uint32_t>(w.cols()) != e.cols) {
      std::ostringstream msg;
      msg << "shape mismatch for '" << e.name << "': checkpoint has " << e.rows << "x" << e.cols
          << ", configuration expects " << w.rows() << "x" << w.cols();
      throw CheckpointError(msg.str());
    }
    is.seekg(payload_start + static_cast<std::streamoff>(e.offset));
    if (!is.read(reinterpret_cast<char*>(w.data()),
                 static_cast<std::streamsize>(w.size() * sizeof(float))))
      throw CheckpointError("checkpoint truncated while reading tensor '" + e.name + "'");
  }

  std::ifstream vs(path + ".vocab");
  if (!vs) throw CheckpointError("cannot open checkpoint sidecar: " + path + ".vocab");
  std::string line;
  if (!std::getline(vs, line) || line != "[tokens]")
    throw CheckpointError(path + ".vocab: expected [tokens] section");
  Tokenizer tokenizer = Tokenizer::load(vs, "[intents]");
  LabelVocabulary vocab;
  std::string section = "[intents]";
  while (std::getline(vs, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "[slots]") {
      section = "[slots]";
      continue;
    }
    if (line.empty()) continue;
    if (section == "[intents]") vocab.add_intent(line);
    else vocab.add_slot(line);
  }
  if (static_cast<int>(vocab.intent_names().size()) != cfg.n_intents ||
      static_cast<int>(vocab.slot_names().size()) != cfg.n_slots)
    throw CheckpointError(path + ".vocab: label counts disagree with the configuration");

  return LoadedCheckpoint{std::move(params), meta, std::move(tokenizer), std::move(vocab)};
}

}  // namespace gslu
