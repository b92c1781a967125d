#pragma once

#include "gslu/corpus.hpp"
#include "gslu/grammar.hpp"
#include "gslu/model.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace gslu {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::uint32_t version = 1;
  int epoch = 0;
  double dev_metric = 0.0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
};

// Flat key=value echo of a model configuration (used by the checkpoint
// sidecar and the run-config loader).
std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& cfg);
// Applies one key; returns false if the key is not a model-config key.
bool apply_model_config_kv(ModelConfig& cfg, const std::string& key, const std::string& value);

// Binary container: magic "GSLU", u32 version, named-tensor manifest
// (shape + payload offset), little-endian 32-bit reals.  Two sidecars ride
// along: <path>.meta (config echo + training record) and <path>.vocab
// (tokenizer and label vocabularies).
void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta, const Tokenizer& tokenizer,
                     const LabelVocabulary& vocab);

struct LoadedCheckpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
  Tokenizer tokenizer;
  LabelVocabulary vocab;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace gslu
