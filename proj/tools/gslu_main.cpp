// Command-line surface: train / eval / predict / build-dataset / analyze /
// gradcheck. Exit codes: 0 success, 1 validation error (bad flags, config,
// or input files), 2 runtime fault during the actual computation.

#include <CLI11.hpp>

#include "gslu/builder.hpp"
#include "gslu/checkpoint.hpp"
#include "gslu/config.hpp"
#include "gslu/corpus.hpp"
#include "gslu/decode.hpp"
#include "gslu/gradcheck.hpp"
#include "gslu/metrics.hpp"
#include "gslu/trainer.hpp"
#include "gslu/util.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace gslu;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kFault = 2;

int validation_error(const std::exception& e) {
  std::cerr << "error: " << e.what() << '\n';
  return kValidation;
}

int runtime_fault(const std::exception& e) {
  std::cerr << "fault: " << e.what() << '\n';
  return kFault;
}

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;  // key=value overrides, applied after the file
};

RunConfig resolve_config(const Common& common) {
  RunConfig cfg;
  if (!common.config_path.empty()) cfg = load_run_config(common.config_path);
  apply_overrides(cfg, common.sets);
  return cfg;
}

std::vector<Utterance> read_labeled_corpus(const std::string& path, bool strict) {
  LintReport lint;
  auto corpus = read_corpus(path, &lint, strict);
  if (!lint.clean()) std::cerr << lint.to_string();
  if (corpus.empty()) std::cerr << "warning: " << path << " holds no usable samples\n";
  return corpus;
}

void write_manifest_file(const std::string& path, const RunConfig& cfg,
                         const std::vector<std::string>& argv,
                         const std::vector<std::pair<std::string, std::string>>& inputs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest: " + path);
  write_run_manifest(out, cfg, argv, inputs);
}

void ensure_parent_dir(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

void check_fits_model(const std::vector<Utterance>& corpus, int max_len, const char* label) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (static_cast<int>(corpus[i].tokens.size()) + 1 > max_len) {
      throw ConfigError(std::string(label) + " utterance " + std::to_string(i) + " has " +
                        std::to_string(corpus[i].tokens.size()) +
                        " words; the model caps sequences at " + std::to_string(max_len));
    }
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string train_path, dev_path, out_dir, log_path;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  RunConfig cfg;
  std::vector<Utterance> train_set, dev_set;
  Tokenizer tok;
  LabelVocabulary vocab;
  std::string log_path;
  try {
    cfg = resolve_config(a.common);
    if (!a.train_path.empty()) cfg.train_corpus = a.train_path;
    if (!a.dev_path.empty()) cfg.dev_corpus = a.dev_path;
    if (!a.out_dir.empty()) cfg.train.checkpoint_dir = a.out_dir;
    if (cfg.train_corpus.empty()) throw ConfigError("train: no training corpus given");
    if (cfg.dev_corpus.empty()) throw ConfigError("train: no dev corpus given");
    if (cfg.train.checkpoint_dir.empty())
      throw ConfigError("train: no output directory (checkpoint_dir) given");
    cfg.train.validate();

    train_set = read_labeled_corpus(cfg.train_corpus, cfg.strict_corpus);
    dev_set = read_labeled_corpus(cfg.dev_corpus, cfg.strict_corpus);
    if (train_set.empty() || dev_set.empty())
      throw ConfigError("train: empty corpus after ingestion");
    tok = Tokenizer::from_corpus(train_set);
    vocab = LabelVocabulary::from_corpus(train_set);
    apply_tokenizer(train_set, tok);
    apply_tokenizer(dev_set, tok);

    std::filesystem::create_directories(cfg.train.checkpoint_dir);
    log_path = a.log_path.empty()
                   ? (std::filesystem::path(cfg.train.checkpoint_dir) / "train_log.tsv").string()
                   : a.log_path;
  } catch (const std::exception& e) {
    return validation_error(e);
  }

  try {
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw TrainError("cannot write training log: " + log_path);
    TrainResult res = train(train_set, dev_set, cfg.model, cfg.train, tok, vocab, &log);

    write_manifest_file(
        (std::filesystem::path(cfg.train.checkpoint_dir) / "manifest.txt").string(), cfg, argv,
        {{"train_corpus", cfg.train_corpus}, {"dev_corpus", cfg.dev_corpus}});
    std::cout << "best dev overall accuracy " << res.best_dev << " at epoch " << res.best_epoch
              << " (lr " << res.best_lr << ")\n";
    if (!res.checkpoint_path.empty()) std::cout << "checkpoint: " << res.checkpoint_path << '\n';
    std::cout << "log: " << log_path << '\n';
    return kOk;
  } catch (const std::exception& e) {
    return runtime_fault(e);
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint_path, corpus_path, out_prefix = "eval_report";
  int n_threads = 0;  // 0: take the config value
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  RunConfig cfg;
  LoadedCheckpoint model;
  std::vector<Utterance> corpus;
  std::vector<TargetSequence> gold;
  int threads = 1;
  try {
    cfg = resolve_config(a.common);
    if (!a.checkpoint_path.empty()) cfg.checkpoint = a.checkpoint_path;
    if (!a.corpus_path.empty()) cfg.test_corpus = a.corpus_path;
    if (cfg.checkpoint.empty()) throw ConfigError("eval: no checkpoint given");
    if (cfg.test_corpus.empty()) throw ConfigError("eval: no corpus given");
    threads = a.n_threads > 0 ? a.n_threads : cfg.train.n_threads;

    model = load_checkpoint(cfg.checkpoint);
    corpus = read_labeled_corpus(cfg.test_corpus, cfg.strict_corpus);
    if (corpus.empty()) throw ConfigError("eval: empty corpus after ingestion");
    apply_tokenizer(corpus, model.tokenizer);
    check_fits_model(corpus, model.params.cfg.max_len, "eval");
    gold = corpus_targets(corpus);
  } catch (const std::exception& e) {
    return validation_error(e);
  }

  try {
    GenerateOptions gen;
    gen.max_steps = default_max_steps(corpus);
    BatchStats stats;
    auto preds = predict_batch(corpus, model.params, model.vocab, gen, threads, &stats);
    std::vector<TargetSequence> hyp;
    hyp.reserve(preds.size());
    for (const auto& p : preds) hyp.push_back(p.target);

    EvalReport report = evaluate(gold, hyp);
    ensure_parent_dir(a.out_prefix);
    {
      std::ofstream txt(a.out_prefix + ".txt", std::ios::trunc);
      txt << report.to_text();
      std::ofstream json(a.out_prefix + ".json", std::ios::trunc);
      json << report.to_json() << '\n';
      if (!txt || !json) throw MetricsError("cannot write report files: " + a.out_prefix);
    }
    write_manifest_file(a.out_prefix + ".manifest.txt", cfg, argv,
                        {{"checkpoint", cfg.checkpoint}, {"corpus", cfg.test_corpus}});
    std::cout << report.to_text();
    std::cerr << "decoded " << preds.size() << " utterances at " << stats.utterances_per_second
              << "/s (" << stats.truncated << " truncated, " << stats.malformed
              << " malformed)\n";
    return kOk;
  } catch (const std::exception& e) {
    return runtime_fault(e);
  }
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  Common common;
  std::string checkpoint_path, corpus_path, out_path;
  int n_threads = 0;
};

std::string format_prediction(const TargetSequence& t) {
  std::vector<std::string> spans;
  spans.reserve(t.slots.size());
  for (const auto& s : t.slots) {
    spans.push_back(std::to_string(s.start) + ":" + std::to_string(s.end) + ":" + s.category);
  }
  return join(t.intents, "#") + "\t" + join(spans, ";");
}

int cmd_predict(const PredictArgs& a, const std::vector<std::string>& argv) {
  RunConfig cfg;
  LoadedCheckpoint model;
  std::vector<Utterance> corpus;
  int threads = 1;
  try {
    cfg = resolve_config(a.common);
    if (!a.checkpoint_path.empty()) cfg.checkpoint = a.checkpoint_path;
    if (!a.corpus_path.empty()) cfg.test_corpus = a.corpus_path;
    if (!a.out_path.empty()) cfg.predictions_out = a.out_path;
    if (cfg.checkpoint.empty()) throw ConfigError("predict: no checkpoint given");
    if (cfg.test_corpus.empty()) throw ConfigError("predict: no corpus given");
    if (cfg.predictions_out.empty()) throw ConfigError("predict: no output file given");
    threads = a.n_threads > 0 ? a.n_threads : cfg.train.n_threads;

    model = load_checkpoint(cfg.checkpoint);
    corpus = read_labeled_corpus(cfg.test_corpus, cfg.strict_corpus);
    if (corpus.empty()) throw ConfigError("predict: empty corpus after ingestion");
    apply_tokenizer(corpus, model.tokenizer);
    check_fits_model(corpus, model.params.cfg.max_len, "predict");
  } catch (const std::exception& e) {
    return validation_error(e);
  }

  try {
    GenerateOptions gen;
    gen.max_steps = default_max_steps(corpus);
    BatchStats stats;
    auto preds = predict_batch(corpus, model.params, model.vocab, gen, threads, &stats);

    ensure_parent_dir(cfg.predictions_out);
    std::ofstream out(cfg.predictions_out, std::ios::trunc);
    if (!out) throw DecodeError("cannot write predictions: " + cfg.predictions_out);
    for (const auto& p : preds) out << format_prediction(p.target) << '\n';
    if (!out) throw DecodeError("short write to " + cfg.predictions_out);

    write_manifest_file(cfg.predictions_out + ".manifest.txt", cfg, argv,
                        {{"checkpoint", cfg.checkpoint}, {"corpus", cfg.test_corpus}});
    std::cerr << "wrote " << preds.size() << " predictions (" << stats.truncated
              << " truncated, " << stats.malformed << " malformed)\n";
    return kOk;
  } catch (const std::exception& e) {
    return runtime_fault(e);
  }
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  Common common;
  std::string source_path, out_path, audit_path, report_path;
};

int cmd_build_dataset(const BuildArgs& a, const std::vector<std::string>& argv) {
  RunConfig cfg;
  std::vector<Utterance> source;
  std::unique_ptr<CoherenceScorer> scorer;
  std::string audit_path, report_path;
  try {
    cfg = resolve_config(a.common);
    if (!a.source_path.empty()) cfg.source_corpus = a.source_path;
    if (!a.out_path.empty()) cfg.output_corpus = a.out_path;
    if (!a.audit_path.empty()) cfg.audit_log = a.audit_path;
    if (cfg.source_corpus.empty()) throw ConfigError("build-dataset: no source corpus given");
    if (cfg.output_corpus.empty()) throw ConfigError("build-dataset: no output file given");
    cfg.builder.validate();

    source = read_labeled_corpus(cfg.source_corpus, cfg.strict_corpus);
    if (source.empty()) throw ConfigError("build-dataset: empty source after ingestion");
    scorer = make_scorer(cfg.scorer);
    audit_path = cfg.audit_log.empty() ? cfg.output_corpus + ".audit.csv" : cfg.audit_log;
    report_path = a.report_path.empty() ? cfg.output_corpus + ".cooccurrence.txt"
                                        : a.report_path;
  } catch (const std::exception& e) {
    return validation_error(e);
  }

  try {
    BuildReport report;
    auto built = build(source, cfg.builder, *scorer, &report);

    ensure_parent_dir(cfg.output_corpus);
    write_corpus(built, cfg.output_corpus);
    {
      ensure_parent_dir(audit_path);
      std::ofstream audit(audit_path, std::ios::trunc);
      if (!audit) throw BuilderError("cannot write audit log: " + audit_path);
      write_audit_log(report.audit, audit);
    }
    {
      ensure_parent_dir(report_path);
      std::ofstream rep(report_path, std::ios::trunc);
      if (!rep) throw BuilderError("cannot write co-occurrence report: " + report_path);
      rep << cooccurrence_matrix(built).to_text();
    }
    write_manifest_file(cfg.output_corpus + ".manifest.txt", cfg, argv,
                        {{"source_corpus", cfg.source_corpus}});
    for (const auto& note : report.notes) std::cerr << "note: " << note << '\n';

    std::map<std::size_t, int> histogram;
    for (const auto& u : built) ++histogram[u.intents.size()];
    std::cout << "built " << built.size() << " utterances from " << source.size()
              << " (shortfalls: " << report.shortfalls << ")\n";
    for (const auto& [count, n] : histogram) {
      std::cout << "  " << count << "-intent: " << n << " ("
                << static_cast<double>(n) / static_cast<double>(built.size()) << ")\n";
    }
    std::cout << "corpus: " << cfg.output_corpus << "\naudit: " << audit_path
              << "\nco-occurrence: " << report_path << '\n';
    return kOk;
  } catch (const std::exception& e) {
    return runtime_fault(e);
  }
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  Common common;
  std::string corpus_path, out_path;
};

int cmd_analyze(const AnalyzeArgs& a, const std::vector<std::string>& argv) {
  RunConfig cfg;
  std::vector<Utterance> corpus;
  try {
    cfg = resolve_config(a.common);
    if (!a.corpus_path.empty()) cfg.test_corpus = a.corpus_path;
    if (cfg.test_corpus.empty()) throw ConfigError("analyze: no corpus given");
    corpus = read_labeled_corpus(cfg.test_corpus, cfg.strict_corpus);
  } catch (const std::exception& e) {
    return validation_error(e);
  }

  try {
    std::string text = cooccurrence_matrix(corpus).to_text();
    if (a.out_path.empty()) {
      std::cout << text;
    } else {
      ensure_parent_dir(a.out_path);
      std::ofstream out(a.out_path, std::ios::trunc);
      if (!out) throw BuilderError("cannot write analysis: " + a.out_path);
      out << text;
      write_manifest_file(a.out_path + ".manifest.txt", cfg, argv,
                          {{"corpus", cfg.test_corpus}});
      std::cout << "analysis: " << a.out_path << '\n';
    }
    return kOk;
  } catch (const std::exception& e) {
    return runtime_fault(e);
  }
}

// ---------------------------------------------------------------------------

struct GradCheckArgs {
  GradCheckOptions opts;
  std::string out_path;
};

int cmd_gradcheck(const GradCheckArgs& a) {
  try {
    GradCheckReport report = run_gradcheck(a.opts);
    std::cout << "# instance: d=" << a.opts.d << " heads=" << a.opts.n_heads << " layers="
              << a.opts.n_layers << " words=" << a.opts.n_words << " h=" << a.opts.h
              << " entries_per_tensor=" << a.opts.entries_per_tensor << " seed=" << a.opts.seed
              << '\n'
              << report.to_text();
    if (!a.out_path.empty()) {
      ensure_parent_dir(a.out_path);
      std::ofstream out(a.out_path, std::ios::trunc);
      out << report.to_text();
    }
    return report.passed ? kOk : kFault;
  } catch (const std::exception& e) {
    return runtime_fault(e);
  }
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "flat key=value configuration file");
  cmd->add_option("--set", common.sets, "override one key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> argv_vec(argv, argv + argc);

  CLI::App app{"generative multi-intent language understanding toolkit"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "fit a model, keeping the best checkpoint");
  add_common(train_cmd, train_args.common);
  train_cmd->add_option("--train", train_args.train_path, "training corpus");
  train_cmd->add_option("--dev", train_args.dev_path, "development corpus");
  train_cmd->add_option("--out", train_args.out_dir, "output directory for checkpoint and logs");
  train_cmd->add_option("--log", train_args.log_path, "training log path (default <out>/train_log.tsv)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a labeled corpus");
  add_common(eval_cmd, eval_args.common);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "model checkpoint");
  eval_cmd->add_option("--corpus", eval_args.corpus_path, "labeled corpus to score");
  eval_cmd->add_option("--out", eval_args.out_prefix, "report prefix (.txt/.json)");
  eval_cmd->add_option("--threads", eval_args.n_threads, "decoder worker threads");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "decode a corpus to a predictions file");
  add_common(predict_cmd, predict_args.common);
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint_path, "model checkpoint");
  predict_cmd->add_option("--corpus", predict_args.corpus_path, "corpus to decode");
  predict_cmd->add_option("--out", predict_args.out_path, "predictions output file");
  predict_cmd->add_option("--threads", predict_args.n_threads, "decoder worker threads");

  BuildArgs build_args;
  auto* build_cmd = app.add_subcommand("build-dataset",
                                       "construct a multi-intent corpus from single-intent data");
  add_common(build_cmd, build_args.common);
  build_cmd->add_option("--source", build_args.source_path, "single-intent source corpus");
  build_cmd->add_option("--out", build_args.out_path, "output corpus file");
  build_cmd->add_option("--audit", build_args.audit_path, "score audit log (default <out>.audit.csv)");
  build_cmd->add_option("--report", build_args.report_path,
                        "co-occurrence report (default <out>.cooccurrence.txt)");

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze", "intent co-occurrence matrix and statistics");
  add_common(analyze_cmd, analyze_args.common);
  analyze_cmd->add_option("--corpus", analyze_args.corpus_path, "labeled corpus");
  analyze_cmd->add_option("--out", analyze_args.out_path, "write the report here instead of stdout");

  GradCheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference audit of the loss gradients");
  gc_cmd->add_option("--d", gc_args.opts.d, "model width");
  gc_cmd->add_option("--heads", gc_args.opts.n_heads, "attention heads");
  gc_cmd->add_option("--layers", gc_args.opts.n_layers, "encoder/decoder depth");
  gc_cmd->add_option("--words", gc_args.opts.n_words, "words per synthetic sample");
  gc_cmd->add_option("--step", gc_args.opts.h, "finite-difference step");
  gc_cmd->add_option("--tolerance", gc_args.opts.tolerance, "max relative error allowed");
  gc_cmd->add_option("--entries", gc_args.opts.entries_per_tensor,
                     "entries checked per tensor (0: all)");
  gc_cmd->add_option("--seed", gc_args.opts.seed, "instance seed");
  gc_cmd->add_option("--out", gc_args.out_path, "also write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (app.got_subcommand(train_cmd)) return cmd_train(train_args, argv_vec);
  if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_args, argv_vec);
  if (app.got_subcommand(predict_cmd)) return cmd_predict(predict_args, argv_vec);
  if (app.got_subcommand(build_cmd)) return cmd_build_dataset(build_args, argv_vec);
  if (app.got_subcommand(analyze_cmd)) return cmd_analyze(analyze_args, argv_vec);
  if (app.got_subcommand(gc_cmd)) return cmd_gradcheck(gc_args);
  return kValidation;
}
