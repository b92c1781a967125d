#pragma once

#include "gslu/builder.hpp"
#include "gslu/model.hpp"
#include "gslu/trainer.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gslu {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything one run needs, loadable from a flat key=value file with
// command-line overrides on top. The seed and worker count are shared
// across the trainer, the dev/test decoder, and the corpus builder.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  BuilderConfig builder;
  ScorerConfig scorer;

  std::string train_corpus;
  std::string dev_corpus;
  std::string test_corpus;
  std::string checkpoint;        // existing model for eval/predict
  std::string predictions_out;   // predict output file
  std::string source_corpus;     // build-dataset input (single-intent)
  std::string output_corpus;     // build-dataset output
  std::string audit_log;         // build-dataset score audit
  bool strict_corpus = false;    // treat corpus lint entries as fatal
};

// Applies one key=value pair; throws ConfigError on unknown keys or
// unparseable values. Shared keys fan out (seed, n_threads).
void apply_run_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Every recognized key in a fixed order, formatted so that feeding the list
// back through apply_run_config_kv reproduces the configuration exactly.
std::vector<std::pair<std::string, std::string>> run_config_kv(const RunConfig& cfg);

// Flat text file: "key = value" per line, '#' comments, blank lines ignored.
// Duplicate and unknown keys are errors (reported with line numbers).
RunConfig load_run_config(const std::string& path);
RunConfig load_run_config_stream(std::istream& in, RunConfig base = {});

// "key=value" strings from the command line, applied after the file.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// Reproducibility record emitted next to run outputs: the exact command,
// a content hash per input file, and the full configuration echo.
void write_run_manifest(std::ostream& out, const RunConfig& cfg,
                        const std::vector<std::string>& argv,
                        const std::vector<std::pair<std::string, std::string>>& input_files);

}  // namespace gslu
