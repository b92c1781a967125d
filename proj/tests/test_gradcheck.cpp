#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gslu/gradcheck.hpp"

using namespace gslu;

namespace {

GradCheckOptions tiny() {
  GradCheckOptions o;
  o.d = 8;
  o.n_heads = 2;
  o.n_layers = 1;
  o.n_words = 4;
  o.entries_per_tensor = 3;
  return o;
}

}  // namespace

TEST_CASE("the finite-difference audit passes on a small instance") {
  GradCheckReport r = run_gradcheck(tiny());
  CHECK(r.passed);
  CHECK(r.max_rel_err < r.tolerance);
  CHECK(r.max_rel_err >= 0.0);
  CHECK(r.entries_checked > 0);
  CHECK_FALSE(r.per_tensor.empty());
  CHECK_FALSE(r.worst_tensor.empty());
  // Every parameter tensor is represented once.
  for (const auto& e : r.per_tensor) {
    CHECK(e.rel_err <= r.max_rel_err);
    CHECK_FALSE(e.tensor.empty());
  }
}

TEST_CASE("the audit covers both attention paths and the pointer head") {
  GradCheckReport r = run_gradcheck(tiny());
  auto has = [&](const std::string& name) {
    for (const auto& e : r.per_tensor)
      if (e.tensor == name) return true;
    return false;
  };
  CHECK(has("tok_emb"));
  CHECK(has("cat_emb"));
  CHECK(has("cat_w"));
  CHECK(has("enc0.attn.wq"));
  CHECK(has("dec0.cross.wk_sam"));
}

TEST_CASE("the audit is deterministic for a fixed seed") {
  GradCheckReport a = run_gradcheck(tiny());
  GradCheckReport b = run_gradcheck(tiny());
  CHECK(a.max_rel_err == b.max_rel_err);
  CHECK(a.worst_tensor == b.worst_tensor);
  CHECK(a.entries_checked == b.entries_checked);
}

TEST_CASE("the report prints per-tensor rows and a verdict") {
  GradCheckReport r = run_gradcheck(tiny());
  std::string text = r.to_text();
  CHECK(text.find("PASS") != std::string::npos);
  CHECK(text.find("max relative error") != std::string::npos);
  CHECK(text.find("tok_emb") != std::string::npos);

  GradCheckReport fail = r;
  fail.passed = false;
  CHECK(fail.to_text().find("FAIL") != std::string::npos);
}

TEST_CASE("exhaustive mode checks every entry of small tensors") {
  GradCheckOptions o = tiny();
  o.n_words = 3;
  GradCheckReport sampled = run_gradcheck(o);
  o.entries_per_tensor = 0;  // everything
  GradCheckReport full = run_gradcheck(o);
  CHECK(full.passed);
  // The embedding matrices alone dwarf the 3-entries-per-tensor sample.
  CHECK(full.entries_checked > 10 * sampled.entries_checked);
}
