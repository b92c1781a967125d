#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gslu/config.hpp"
#include "gslu/util.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace gslu;

TEST_CASE("config echo and re-application are mutual inverses") {
  RunConfig cfg;
  cfg.model.d = 48;
  cfg.model.dropout_p = 0.1;
  cfg.model.aoa_sam_reuse_self = true;
  cfg.train.lr_grid = {1e-7, 0.1, 3.0000000000000004e-4};
  cfg.train.early_stop_dev = 0.995;
  cfg.train.checkpoint_dir = "runs/exp1";
  cfg.builder.tau = 0.35;
  cfg.builder.intent_count_probs = {0.25, 0.25, 0.25, 0.25};
  cfg.builder.conjunctions = {{"and", 2.0}, {"and then", 0.5}, {"", 1.0}};
  cfg.scorer.kind = "remote";
  cfg.scorer.remote_url = "http://127.0.0.1:9999/score";
  cfg.train_corpus = "data/train.txt";
  cfg.strict_corpus = true;

  auto kv = run_config_kv(cfg);
  RunConfig back;
  for (const auto& [k, v] : kv) apply_run_config_kv(back, k, v);
  CHECK(run_config_kv(back) == kv);

  CHECK(back.model.d == 48);
  CHECK(back.model.aoa_sam_reuse_self);
  CHECK(back.train.lr_grid == cfg.train.lr_grid);
  CHECK(back.builder.conjunctions == cfg.builder.conjunctions);
  CHECK(back.scorer.remote_url == cfg.scorer.remote_url);
  CHECK(back.strict_corpus);
}

TEST_CASE("defaults echo and come back unchanged") {
  RunConfig cfg;
  auto kv = run_config_kv(cfg);
  RunConfig back;
  for (const auto& [k, v] : kv) apply_run_config_kv(back, k, v);
  CHECK(run_config_kv(back) == kv);
  CHECK(back.train.batch_size == cfg.train.batch_size);
  CHECK(back.builder.tau == cfg.builder.tau);
}

TEST_CASE("config files parse with comments, spacing, and CRLF") {
  std::istringstream in(
      "# experiment settings\r\n"
      "\n"
      "d = 32\n"
      "  n_heads=8  \n"
      "lr_grid = 1e-4, 3e-4\n"
      "conjunctions = and:1|and then:2\n"
      "seed = 99\n"
      "n_threads = 3\n"
      "train_corpus = data/a.txt\n"
      "dedup = true\n");
  RunConfig cfg = load_run_config_stream(in);
  CHECK(cfg.model.d == 32);
  CHECK(cfg.model.n_heads == 8);
  CHECK(cfg.train.lr_grid == std::vector<double>{1e-4, 3e-4});
  REQUIRE(cfg.builder.conjunctions.size() == 2);
  CHECK(cfg.builder.conjunctions[1].first == "and then");
  CHECK(cfg.builder.conjunctions[1].second == 2.0);
  CHECK(cfg.train.seed == 99);
  CHECK(cfg.builder.seed == 99);
  CHECK(cfg.train.n_threads == 3);
  CHECK(cfg.builder.n_threads == 3);
  CHECK(cfg.train_corpus == "data/a.txt");
  CHECK(cfg.builder.dedup);
}

TEST_CASE("unknown, duplicate, and malformed lines are rejected with line numbers") {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return load_run_config_stream(in);
  };
  CHECK_THROWS_WITH_AS(load("bogus_key = 1\n"), doctest::Contains("unknown config key"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(load("d = 16\nd = 32\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(load("no equals sign\n"), doctest::Contains("key = value"), ConfigError);
  CHECK_THROWS_WITH_AS(load("= 5\n"), doctest::Contains("empty key"), ConfigError);
  CHECK_THROWS_WITH_AS(load("d = twelve\n"), doctest::Contains("config line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(load("epochs = 5x\n"), doctest::Contains("integer"), ConfigError);
  CHECK_THROWS_WITH_AS(load("dedup = yes\n"), doctest::Contains("0/1/true/false"), ConfigError);
  CHECK_THROWS_WITH_AS(load("lr_grid = 1e-4,,3e-4\n"), doctest::Contains("empty list element"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(load("seed = -4\n"), doctest::Contains(">= 0"), ConfigError);
  CHECK_THROWS_AS(load("aoa_enabled = 2\n"), ConfigError);
}

TEST_CASE("command-line overrides win over the file") {
  std::istringstream in("d = 16\ntau = 0.2\n");
  RunConfig cfg = load_run_config_stream(in);
  apply_overrides(cfg, {"d=64", "tau=0.5", "scorer=constant"});
  CHECK(cfg.model.d == 64);
  CHECK(cfg.builder.tau == 0.5);
  CHECK(cfg.scorer.kind == "constant");

  CHECK_THROWS_WITH_AS(apply_overrides(cfg, {"justakey"}), doctest::Contains("key=value"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(apply_overrides(cfg, {"=5"}), doctest::Contains("key=value"), ConfigError);
  CHECK_THROWS_AS(apply_overrides(cfg, {"mystery=1"}), ConfigError);
}

TEST_CASE("missing config file is a config error") {
  CHECK_THROWS_WITH_AS(load_run_config("/nonexistent/run.cfg"), doctest::Contains("cannot open"),
                       ConfigError);
}

TEST_CASE("conjunction text cannot smuggle reserved separators into the echo") {
  RunConfig cfg;
  cfg.builder.conjunctions = {{"a|b", 1.0}};
  CHECK_THROWS_WITH_AS(run_config_kv(cfg), doctest::Contains("reserved separator"), ConfigError);
}

TEST_CASE("manifest records command, input hashes, and every config key") {
  const std::string path = "manifest_input.tmp";
  {
    std::ofstream f(path, std::ios::binary);
    f << "hello corpus\n";
  }
  RunConfig cfg;
  cfg.train_corpus = path;
  std::ostringstream out;
  write_run_manifest(out, cfg, {"gslu", "train", "--config", "run.cfg"}, {{"train", path}});
  std::remove(path.c_str());

  const std::string text = out.str();
  CHECK(text.find("# command: gslu train --config run.cfg") != std::string::npos);
  CHECK(text.find("# input: train " + path + " " + git_blob_hash("hello corpus\n")) !=
        std::string::npos);

  // Every key is echoed exactly once as a parseable line.
  std::istringstream lines(text);
  std::string line;
  int kv_lines = 0;
  while (std::getline(lines, line)) {
    if (!line.empty() && line[0] != '#') ++kv_lines;
  }
  CHECK(kv_lines == static_cast<int>(run_config_kv(cfg).size()));

  // The non-comment body is itself a loadable config that reproduces cfg.
  std::istringstream reload(text);
  RunConfig back = load_run_config_stream(reload);
  CHECK(run_config_kv(back) == run_config_kv(cfg));
}
