#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gslu/decode.hpp"
#include "support/reference_decode.hpp"
#include "support/synthetic.hpp"

#include <random>

using namespace gslu;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = 30;
  cfg.n_intents = 3;
  cfg.n_slots = 2;
  cfg.max_len = 48;
  cfg.dropout_p = 0.0;
  return cfg;
}

std::vector<int> random_input(std::mt19937_64& rng, int n_words, int vocab_size) {
  std::uniform_int_distribution<int> pick(4, vocab_size - 1);
  std::vector<int> ids;
  for (int i = 0; i < n_words; ++i) ids.push_back(pick(rng));
  ids.push_back(Tokenizer::kEos);
  return ids;
}

// Random grammar-legal label sequence ending in the terminator.
std::vector<int> random_legal_walk(const LabelSpace& space, std::mt19937_64& rng,
                                   std::size_t force_stop_after = 12) {
  GrammarState st(space);
  std::vector<int> seq;
  while (!st.finished()) {
    auto mask = st.legal_mask();
    std::vector<int> legal;
    for (std::size_t j = 0; j < mask.size(); ++j)
      if (mask[j]) legal.push_back(static_cast<int>(j));
    int choice;
    if (seq.size() >= force_stop_after && mask[static_cast<std::size_t>(space.eos())])
      choice = space.eos();
    else
      choice = legal[rng() % legal.size()];
    st.advance(choice);
    seq.push_back(choice);
  }
  return seq;
}

// The decoder-input embedding for one incremental step, mirroring what the
// taped route feeds at row t.
template <class T>
Mat<T> embed_step(int t, const std::vector<int>& emitted, const EncoderOutput<T>& enc,
                  const ModelParams<T>& params, const Mat<T>& pe, const LabelSpace& space) {
  Mat<T> x(1, params.cfg.d);
  if (t == 0) {
    x = params.value("tok_emb")->row(Tokenizer::kSos);
  } else {
    int prev = emitted[static_cast<std::size_t>(t - 1)];
    if (space.is_position(prev))
      x = enc.token_embeds.value().row(prev);
    else
      x = params.value("cat_emb")->row(prev - space.intent_base());
  }
  x += pe.row(t);
  return x;
}

template <class T>
void check_incremental_matches_full(const ModelConfig& cfg, double tol, std::uint64_t seed) {
  auto params = ModelParams<T>::init(cfg, seed);
  std::mt19937_64 rng(seed * 7 + 1);
  auto ids = random_input(rng, 6, cfg.vocab_size);
  auto enc = encode(ids, params, static_cast<Tape<T>*>(nullptr), rng, false);
  LabelSpace space(6, cfg.n_intents, cfg.n_slots);
  auto walk = random_legal_walk(space, rng);
  std::vector<int> prev(walk.begin(), walk.end() - 1);  // terminator is never fed back

  auto h_full = decode_full(prev, enc, params, space, static_cast<Tape<T>*>(nullptr), rng,
                            false);
  auto logits_full = pointer_logits(h_full, enc, params, static_cast<Tape<T>*>(nullptr));

  DecodeState<T> st(space, cfg.n_dec_layers, cfg.n_heads);
  Mat<T> pe = sinusoidal_pe<T>(cfg.max_len, cfg.d);
  for (int t = 0; t < static_cast<int>(walk.size()); ++t) {
    Mat<T> x = embed_step<T>(t, walk, enc, params, pe, space);
    Mat<T> h = decode_hidden(st, x, enc, params);
    Mat<T> logits = pointer_logits_row(h, enc, params);
    const double h_diff =
        (h - h_full.value().row(t)).template cast<double>().cwiseAbs().maxCoeff();
    const double l_diff =
        (logits - logits_full.value().row(t)).template cast<double>().cwiseAbs().maxCoeff();
    CAPTURE(t);
    CHECK(h_diff < tol);
    CHECK(l_diff < tol);
  }
}

}  // namespace

TEST_CASE("incremental decoding matches the full recompute at every step (double)") {
  ModelConfig cfg = small_config();
  for (std::uint64_t seed : {1, 2, 3}) {
    SUBCASE(("aoa dedicated keys, seed " + std::to_string(seed)).c_str()) {
      check_incremental_matches_full<double>(cfg, 1e-10, seed);
    }
  }
  SUBCASE("aoa reusing self-attention maps") {
    ModelConfig c = cfg;
    c.aoa_sam_reuse_self = true;
    check_incremental_matches_full<double>(c, 1e-10, 11);
  }
  SUBCASE("aoa disabled") {
    ModelConfig c = cfg;
    c.aoa_enabled = false;
    check_incremental_matches_full<double>(c, 1e-10, 12);
  }
  SUBCASE("mixing term zeroed") {
    ModelConfig c = cfg;
    c.aoa_mix_zero = true;
    check_incremental_matches_full<double>(c, 1e-10, 13);
  }
}

TEST_CASE("incremental decoding matches the full recompute in 32-bit") {
  check_incremental_matches_full<float>(small_config(), 1e-4, 21);
}

TEST_CASE("decode caches hold exactly t rows after step t") {
  ModelConfig cfg = small_config();
  auto params = ModelParams<double>::init(cfg, 3);
  std::mt19937_64 rng(9);
  auto ids = random_input(rng, 5, cfg.vocab_size);
  auto enc = encode(ids, params, static_cast<Tape<double>*>(nullptr), rng, false);
  LabelSpace space(5, cfg.n_intents, cfg.n_slots);
  auto walk = random_legal_walk(space, rng);
  DecodeState<double> st(space, cfg.n_dec_layers, cfg.n_heads);
  Mat<double> pe = sinusoidal_pe<double>(cfg.max_len, cfg.d);
  for (int t = 0; t < static_cast<int>(walk.size()); ++t) {
    decode_hidden(st, Mat<double>(embed_step<double>(t, walk, enc, params, pe, space)), enc,
                  params);
    CHECK(st.t == t + 1);
    for (int l = 0; l < cfg.n_dec_layers; ++l) {
      const auto li = static_cast<std::size_t>(l);
      CHECK(st.k_self[li].rows() == t + 1);
      CHECK(st.v_self[li].rows() == t + 1);
      CHECK(st.k_sam[li].rows() == t + 1);
      for (int h = 0; h < cfg.n_heads; ++h) {
        CHECK(st.cam_hist[li][static_cast<std::size_t>(h)].rows() == t + 1);
        CHECK(st.cam_hist[li][static_cast<std::size_t>(h)].cols() ==
              static_cast<int>(ids.size()));
      }
    }
  }
}

TEST_CASE("a desynchronized cache is reported, not silently misused") {
  ModelConfig cfg = small_config();
  auto params = ModelParams<double>::init(cfg, 3);
  std::mt19937_64 rng(9);
  auto ids = random_input(rng, 4, cfg.vocab_size);
  auto enc = encode(ids, params, static_cast<Tape<double>*>(nullptr), rng, false);
  LabelSpace space(4, cfg.n_intents, cfg.n_slots);
  DecodeState<double> st(space, cfg.n_dec_layers, cfg.n_heads);
  Mat<double> pe = sinusoidal_pe<double>(cfg.max_len, cfg.d);
  decode_hidden(st, Mat<double>(embed_step<double>(0, {}, enc, params, pe, space)), enc,
                params);
  st.t = 5;  // corrupt the step counter
  CHECK_THROWS_AS(decode_hidden(st, Mat<double>(pe.row(0)), enc, params), DecodeError);
}

TEST_CASE("masked argmax prefers the highest score and breaks ties downward") {
  Mat<double> row(1, 4);
  row << 1.0, 5.0, 5.0, 2.0;
  CHECK(masked_argmax(row, {true, true, true, true}) == 1);  // tie 1 vs 2 -> lowest id
  CHECK(masked_argmax(row, {true, false, false, true}) == 3);
  CHECK(masked_argmax(row, {true, false, false, false}) == 0);
  CHECK_THROWS_AS(masked_argmax(row, std::vector<bool>(4, false)), DecodeError);
}

TEST_CASE("constrained greedy generation always yields a valid parse") {
  ModelConfig cfg = small_config();
  LabelVocabulary vocab;
  vocab.add_intent("alpha");
  vocab.add_intent("beta");
  vocab.add_intent("gamma");
  vocab.add_slot("fruit");
  vocab.add_slot("city");
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    auto params = ModelParams<double>::init(cfg, 100 + static_cast<std::uint64_t>(trial));
    const int n_words = 1 + static_cast<int>(rng() % 8);
    auto ids = random_input(rng, n_words, cfg.vocab_size);
    GenerateOptions opts;
    opts.max_steps = 20;
    auto pred = greedy_generate(ids, params, vocab, opts);
    if (!pred.truncated) {
      REQUIRE(!pred.labels.empty());
      LabelSpace space(n_words, cfg.n_intents, cfg.n_slots);
      CHECK(space.is_eos(pred.labels.back()));
      CHECK(!pred.target.intents.empty());
    }
    // grammar-sound either way: distinct intents, spans inside the utterance
    std::set<std::string> distinct(pred.target.intents.begin(), pred.target.intents.end());
    CHECK(distinct.size() == pred.target.intents.size());
    for (const auto& s : pred.target.slots) {
      CHECK(s.start >= 0);
      CHECK(s.start < s.end);
      CHECK(s.end <= n_words);
    }
  }
}

TEST_CASE("cached greedy generation equals the cache-free reference label for label") {
  ModelConfig cfg = small_config();
  LabelVocabulary vocab;
  vocab.add_intent("alpha");
  vocab.add_intent("beta");
  vocab.add_intent("gamma");
  vocab.add_slot("fruit");
  vocab.add_slot("city");
  std::mt19937_64 rng(7);
  for (bool constrained : {true, false}) {
    for (int trial = 0; trial < 30; ++trial) {
      auto params = ModelParams<double>::init(cfg, 500 + static_cast<std::uint64_t>(trial));
      const int n_words = 1 + static_cast<int>(rng() % 8);
      auto ids = random_input(rng, n_words, cfg.vocab_size);
      GenerateOptions opts;
      opts.max_steps = 24;
      opts.constrained = constrained;
      Prediction fast, slow;
      bool fast_threw = false, slow_threw = false;
      try {
        fast = greedy_generate(ids, params, vocab, opts);
      } catch (const ParseError&) {
        fast_threw = true;
      }
      try {
        slow = gslu::testing::full_recompute_greedy(ids, params, vocab, opts);
      } catch (const ParseError&) {
        slow_threw = true;
      }
      CAPTURE(constrained);
      CAPTURE(trial);
      REQUIRE(fast_threw == slow_threw);
      if (!fast_threw) {
        CHECK(fast.labels == slow.labels);
        CHECK(fast.target == slow.target);
        CHECK(fast.truncated == slow.truncated);
      }
    }
  }
}

TEST_CASE("greedy generation is deterministic") {
  ModelConfig cfg = small_config();
  auto params = ModelParams<double>::init(cfg, 31);
  LabelVocabulary vocab = gslu::testing::worked_example_vocab();
  // worked-example vocab has 2 intents / 3 slots; align the config
  cfg.n_intents = 2;
  cfg.n_slots = 3;
  params = ModelParams<double>::init(cfg, 31);
  std::mt19937_64 rng(5);
  auto ids = random_input(rng, 7, cfg.vocab_size);
  auto a = greedy_generate(ids, params, vocab);
  auto b = greedy_generate(ids, params, vocab);
  CHECK(a.labels == b.labels);
  CHECK(a.target == b.target);
}

TEST_CASE("a tiny step budget truncates and keeps the longest valid prefix") {
  ModelConfig cfg = small_config();
  LabelVocabulary vocab;
  vocab.add_intent("alpha");
  vocab.add_intent("beta");
  vocab.add_intent("gamma");
  vocab.add_slot("fruit");
  vocab.add_slot("city");
  for (int trial = 0; trial < 10; ++trial) {
    auto params = ModelParams<double>::init(cfg, 900 + static_cast<std::uint64_t>(trial));
    std::mt19937_64 rng(trial);
    auto ids = random_input(rng, 6, cfg.vocab_size);
    GenerateOptions opts;
    opts.max_steps = 2;
    auto pred = greedy_generate(ids, params, vocab, opts);
    LabelSpace space(6, cfg.n_intents, cfg.n_slots);
    if (pred.truncated) {
      CHECK(pred.labels.size() == 2);
      // the prefix keeps only complete structure: intents, no dangling span
      CHECK(!pred.target.intents.empty());
      CHECK(pred.target.slots.empty());
    } else {
      CHECK(space.is_eos(pred.labels.back()));
    }
  }
  CHECK_THROWS_AS(
      greedy_generate({4, Tokenizer::kEos},
                      ModelParams<double>::init(cfg, 1), vocab, GenerateOptions{1, true}),
      DecodeError);
}

TEST_CASE("unconstrained decoding surfaces malformed output instead of inventing a parse") {
  ModelConfig cfg = small_config();
  LabelVocabulary vocab;
  vocab.add_intent("alpha");
  vocab.add_intent("beta");
  vocab.add_intent("gamma");
  vocab.add_slot("fruit");
  vocab.add_slot("city");
  auto params = ModelParams<double>::init(cfg, 1);
  for (auto& [name, v] : params.val) v->setZero();
  // all-zero weights give constant logits, so the unconstrained argmax picks
  // label 0 (a position) forever: never a legal opening, never a terminator
  std::vector<int> ids = {5, 9, Tokenizer::kEos};
  GenerateOptions opts;
  opts.max_steps = 6;
  opts.constrained = false;
  CHECK_THROWS_AS(greedy_generate(ids, params, vocab, opts), ParseError);

  // the batch runner converts that into a flagged, fully-wrong prediction
  Utterance u;
  u.tokens = {"w1", "w2"};
  u.token_ids = {5, 9};
  BatchStats stats;
  auto preds = predict_batch(std::vector<Utterance>{u}, params, vocab, opts, 1, &stats);
  REQUIRE(preds.size() == 1);
  CHECK(preds[0].malformed);
  CHECK(preds[0].target.intents.empty());
  CHECK(stats.malformed == 1);

  // the same weights under the grammar constraint still parse
  opts.constrained = true;
  auto pred = greedy_generate(ids, params, vocab, opts);
  CHECK(!pred.target.intents.empty());
}

TEST_CASE("batch prediction is order-preserving and thread-count invariant") {
  ModelConfig cfg = small_config();
  cfg.n_intents = 3;
  cfg.n_slots = 2;
  LabelVocabulary vocab;
  vocab.add_intent("alpha");
  vocab.add_intent("beta");
  vocab.add_intent("gamma");
  vocab.add_slot("fruit");
  vocab.add_slot("city");
  auto params = ModelParams<double>::init(cfg, 77);
  std::mt19937_64 rng(3);
  std::vector<Utterance> corpus;
  for (int i = 0; i < 24; ++i) {
    Utterance u;
    const int n_words = 1 + static_cast<int>(rng() % 7);
    for (int w = 0; w < n_words; ++w) {
      u.tokens.push_back("w" + std::to_string(w));
      u.token_ids.push_back(4 + static_cast<int>(rng() % (cfg.vocab_size - 4)));
    }
    corpus.push_back(u);
  }
  GenerateOptions opts;
  opts.max_steps = 20;
  BatchStats serial_stats, parallel_stats;
  auto serial = predict_batch(corpus, params, vocab, opts, 1, &serial_stats);
  auto parallel = predict_batch(corpus, params, vocab, opts, 4, &parallel_stats);
  REQUIRE(serial.size() == corpus.size());
  REQUIRE(parallel.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(serial[i].labels == parallel[i].labels);
    CHECK(serial[i].target == parallel[i].target);
  }
  CHECK(serial_stats.truncated == parallel_stats.truncated);
  CHECK(serial_stats.malformed == parallel_stats.malformed);
  CHECK(serial_stats.utterances_per_second > 0.0);

  auto empty = predict_batch(std::vector<Utterance>{}, params, vocab, opts);
  CHECK(empty.empty());
}

TEST_CASE("the default step budget covers the densest observed annotation") {
  std::vector<Utterance> corpus;
  Utterance a;
  a.tokens = {"x", "y", "z", "w"};
  a.intents = {"i1", "i2"};
  a.bio_tags = bio_from_spans({{0, 1, "s"}, {1, 2, "s"}, {2, 4, "t"}}, 4);
  corpus.push_back(a);
  // 2 + 3 intents-worth… budget formula: 2 + 3*max_intents + 3*max_slots
  CHECK(default_max_steps(corpus) == 2 + 3 * 2 + 3 * 3);
  CHECK(default_max_steps({}) == 2 + 3 * 1 + 0);
  Utterance big;
  for (int i = 0; i < 40; ++i) big.tokens.push_back("t" + std::to_string(i));
  std::vector<Triplet> spans;
  for (int i = 0; i < 40; ++i) spans.push_back({i, i + 1, "s"});
  big.intents = {"i1"};
  big.bio_tags = bio_from_spans(spans, 40);
  CHECK(default_max_steps({big}) == 64);  // capped
}
