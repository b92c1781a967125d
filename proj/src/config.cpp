#include "gslu/config.hpp"

#include "gslu/checkpoint.hpp"
#include "gslu/util.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace gslu {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as an integer");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "0" || value == "false") return false;
  if (value == "1" || value == "true") return true;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false, got '" + value + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& part : split(value, ',')) {
    std::string item = trim(part);
    if (item.empty()) throw ConfigError("config key '" + key + "': empty list element");
    out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string format_double_list(const std::vector<double>& values) {
  std::vector<std::string> parts;
  parts.reserve(values.size());
  for (double v : values) parts.push_back(format_double(v));
  return join(parts, ",");
}

// Conjunction pool syntax: entries separated by '|', each "text" or
// "text:weight". Text may contain spaces but not the separators.
std::vector<std::pair<std::string, double>> parse_conjunctions(const std::string& key,
                                                               const std::string& value) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& entry : split(value, '|')) {
    auto colon = entry.rfind(':');
    std::string text = colon == std::string::npos ? entry : entry.substr(0, colon);
    double weight = colon == std::string::npos
                        ? 1.0
                        : parse_double(key, trim(entry.substr(colon + 1)));
    out.emplace_back(trim(text), weight);
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty pool");
  return out;
}

std::string format_conjunctions(const std::vector<std::pair<std::string, double>>& pool) {
  std::vector<std::string> parts;
  parts.reserve(pool.size());
  for (const auto& [text, weight] : pool) {
    if (text.find('|') != std::string::npos || text.find(':') != std::string::npos) {
      throw ConfigError("conjunction '" + text + "' contains a reserved separator");
    }
    parts.push_back(text + ":" + format_double(weight));
  }
  return join(parts, "|");
}

}  // namespace

void apply_run_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  // Model keys first; they share the flat namespace.
  try {
    if (apply_model_config_kv(cfg.model, key, value)) return;
  } catch (const CheckpointError& e) {
    throw ConfigError(e.what());
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }

  // Trainer.
  if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "lr_grid") cfg.train.lr_grid = parse_double_list(key, value);
  else if (key == "weight_decay") cfg.train.weight_decay = parse_double(key, value);
  else if (key == "grad_clip") cfg.train.grad_clip = parse_double(key, value);
  else if (key == "eval_every") cfg.train.eval_every = static_cast<int>(parse_int(key, value));
  else if (key == "early_stop_dev") cfg.train.early_stop_dev = parse_double(key, value);
  else if (key == "checkpoint_dir") cfg.train.checkpoint_dir = value;
  // Shared.
  else if (key == "seed") {
    auto v = parse_int(key, value);
    if (v < 0) throw ConfigError("config key 'seed': must be >= 0");
    cfg.train.seed = static_cast<std::uint64_t>(v);
    cfg.builder.seed = static_cast<std::uint64_t>(v);
  } else if (key == "n_threads") {
    int v = static_cast<int>(parse_int(key, value));
    cfg.train.n_threads = v;
    cfg.builder.n_threads = v;
  }
  // Builder.
  else if (key == "tau") cfg.builder.tau = parse_double(key, value);
  else if (key == "intent_count_probs") cfg.builder.intent_count_probs = parse_double_list(key, value);
  else if (key == "conjunctions") cfg.builder.conjunctions = parse_conjunctions(key, value);
  else if (key == "max_candidate_scans") cfg.builder.max_candidate_scans = static_cast<int>(parse_int(key, value));
  else if (key == "dedup") cfg.builder.dedup = parse_bool(key, value);
  // Scorer.
  else if (key == "scorer") cfg.scorer.kind = value;
  else if (key == "affinity_table") cfg.scorer.affinity_path = value;
  else if (key == "missing_affinity") cfg.scorer.missing_affinity = parse_double(key, value);
  else if (key == "constant_score") cfg.scorer.constant_value = parse_double(key, value);
  else if (key == "remote_url") cfg.scorer.remote_url = value;
  else if (key == "remote_timeout") cfg.scorer.remote_timeout_seconds = parse_double(key, value);
  else if (key == "remote_retries") cfg.scorer.remote_retries = static_cast<int>(parse_int(key, value));
  else if (key == "remote_backoff") cfg.scorer.remote_backoff_seconds = parse_double(key, value);
  // Paths and toggles.
  else if (key == "train_corpus") cfg.train_corpus = value;
  else if (key == "dev_corpus") cfg.dev_corpus = value;
  else if (key == "test_corpus") cfg.test_corpus = value;
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "predictions_out") cfg.predictions_out = value;
  else if (key == "source_corpus") cfg.source_corpus = value;
  else if (key == "output_corpus") cfg.output_corpus = value;
  else if (key == "audit_log") cfg.audit_log = value;
  else if (key == "strict_corpus") cfg.strict_corpus = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> run_config_kv(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv = model_config_kv(cfg.model);
  auto add = [&](const char* k, std::string v) { kv.emplace_back(k, std::move(v)); };

  add("batch_size", std::to_string(cfg.train.batch_size));
  add("epochs", std::to_string(cfg.train.epochs));
  add("lr_grid", format_double_list(cfg.train.lr_grid));
  add("weight_decay", format_double(cfg.train.weight_decay));
  add("grad_clip", format_double(cfg.train.grad_clip));
  add("eval_every", std::to_string(cfg.train.eval_every));
  add("early_stop_dev", format_double(cfg.train.early_stop_dev));
  add("checkpoint_dir", cfg.train.checkpoint_dir);
  add("seed", std::to_string(cfg.train.seed));
  add("n_threads", std::to_string(cfg.train.n_threads));

  add("tau", format_double(cfg.builder.tau));
  add("intent_count_probs", format_double_list(cfg.builder.intent_count_probs));
  add("conjunctions", format_conjunctions(cfg.builder.conjunctions));
  add("max_candidate_scans", std::to_string(cfg.builder.max_candidate_scans));
  add("dedup", cfg.builder.dedup ? "1" : "0");

  add("scorer", cfg.scorer.kind);
  add("affinity_table", cfg.scorer.affinity_path);
  add("missing_affinity", format_double(cfg.scorer.missing_affinity));
  add("constant_score", format_double(cfg.scorer.constant_value));
  add("remote_url", cfg.scorer.remote_url);
  add("remote_timeout", format_double(cfg.scorer.remote_timeout_seconds));
  add("remote_retries", std::to_string(cfg.scorer.remote_retries));
  add("remote_backoff", format_double(cfg.scorer.remote_backoff_seconds));

  add("train_corpus", cfg.train_corpus);
  add("dev_corpus", cfg.dev_corpus);
  add("test_corpus", cfg.test_corpus);
  add("checkpoint", cfg.checkpoint);
  add("predictions_out", cfg.predictions_out);
  add("source_corpus", cfg.source_corpus);
  add("output_corpus", cfg.output_corpus);
  add("audit_log", cfg.audit_log);
  add("strict_corpus", cfg.strict_corpus ? "1" : "0");
  return kv;
}

RunConfig load_run_config_stream(std::istream& in, RunConfig base) {
  std::string line;
  int line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "'");
    }
    try {
      apply_run_config_kv(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return load_run_config_stream(in);
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + item + "': expected key=value");
    }
    apply_run_config_kv(cfg, trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
}

void write_run_manifest(std::ostream& out, const RunConfig& cfg,
                        const std::vector<std::string>& argv,
                        const std::vector<std::pair<std::string, std::string>>& input_files) {
  out << "# command: " << join(argv, " ") << '\n';
  for (const auto& [label, path] : input_files) {
    out << "# input: " << label << ' ' << path << ' ' << git_blob_hash_file(path) << '\n';
  }
  for (const auto& [key, value] : run_config_kv(cfg)) {
    out << key << " = " << value << '\n';
  }
}

}  // namespace gslu
