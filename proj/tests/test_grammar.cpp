#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gslu/grammar.hpp"
#include "support/synthetic.hpp"

#include <random>

using namespace gslu;
using gslu::testing::random_gold_utterance;
using gslu::testing::worked_example;
using gslu::testing::worked_example_vocab;

TEST_CASE("label space ranges are disjoint and cover every id exactly once") {
  for (int words : {1, 5, 12, 30}) {
    LabelSpace s(words, 4, 6);
    CHECK(s.size() == words + 1 + 4 + 6 + 1);
    for (int id = 0; id < s.size(); ++id) {
      int kinds = int(s.is_position(id)) + int(s.is_intent(id)) + int(s.is_slot(id)) +
                  int(s.is_eos(id));
      CHECK(kinds == 1);
    }
    CHECK(s.is_position(words));       // exclusive end just past the last word
    CHECK(!s.is_position(words + 1));
  }
}

TEST_CASE("the twelve-word example encodes to the documented sequence") {
  auto u = worked_example();
  auto vocab = worked_example_vocab();
  auto seq = encode_target(u, vocab);
  // intents PlayMusic, AddToPlaylist; spans (2,5,track) (7,9,entity_name)
  // (10,11,playlist); terminator. Space: positions 0..12, intents 13..14,
  // slots 15..17, terminator 18.
  std::vector<int> expect = {13, 14, 2, 5, 15, 7, 9, 16, 10, 11, 17, 18};
  CHECK(seq == expect);
}

TEST_CASE("the documented sequence decodes back to the structured target") {
  auto vocab = worked_example_vocab();
  std::vector<int> seq = {13, 14, 2, 5, 15, 7, 9, 16, 10, 11, 17, 18};
  auto t = decode_target(seq, 12, vocab);
  CHECK(t.intents == std::vector<std::string>{"PlayMusic", "AddToPlaylist"});
  REQUIRE(t.slots.size() == 3);
  CHECK(t.slots[0] == Triplet{2, 5, "track"});
  CHECK(t.slots[1] == Triplet{7, 9, "entity_name"});
  CHECK(t.slots[2] == Triplet{10, 11, "playlist"});
}

TEST_CASE("single intent with zero slots encodes as intent then terminator") {
  Utterance u;
  u.tokens = {"hello", "there"};
  u.intents = {"PlayMusic"};
  u.bio_tags = {"O", "O"};
  auto vocab = worked_example_vocab();
  auto seq = encode_target(u, vocab);
  LabelSpace s(2, vocab);
  CHECK(seq == std::vector<int>{s.intent_id(0), s.eos()});
}

TEST_CASE("encode rejects malformed gold targets") {
  auto vocab = worked_example_vocab();
  Utterance no_intent;
  no_intent.tokens = {"a"};
  no_intent.bio_tags = {"O"};
  CHECK_THROWS_AS(encode_target(no_intent, vocab), GrammarError);

  Utterance bad_bio;
  bad_bio.tokens = {"a", "b"};
  bad_bio.intents = {"PlayMusic"};
  bad_bio.bio_tags = {"O", "I-track"};
  CHECK_THROWS_AS(encode_target(bad_bio, vocab), GrammarError);

  Utterance unknown;
  unknown.tokens = {"a"};
  unknown.intents = {"NoSuchIntent"};
  unknown.bio_tags = {"O"};
  CHECK_THROWS_AS(encode_target(unknown, vocab), GrammarError);
}

TEST_CASE("encode / decode round-trip on random well-formed utterances") {
  auto vocab = LabelVocabulary::from_corpus({});
  vocab.add_intent("alpha");
  vocab.add_intent("beta");
  vocab.add_intent("gamma");
  vocab.add_intent("delta");
  vocab.add_slot("fruit");
  vocab.add_slot("city");
  vocab.add_slot("artist");
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    auto u = random_gold_utterance(rng);
    auto seq = encode_target(u, vocab);
    auto t = decode_target(seq, static_cast<int>(u.tokens.size()), vocab);
    CHECK(t.intents == u.intents);
    CHECK(t.slots == spans_from_bio(u.bio_tags));
  }
}

TEST_CASE("terminator alone is a parse error (no intent)") {
  auto vocab = worked_example_vocab();
  LabelSpace s(5, vocab);
  CHECK_THROWS_AS(decode_target({s.eos()}, 5, vocab), ParseError);
}

TEST_CASE("parse errors carry the longest valid prefix") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  // intent, complete triplet, then a dangling position pair
  std::vector<int> seq = {s.intent_id(0), 2, 5, s.slot_id(1), 7, 9};
  try {
    decode_target(seq, 12, vocab);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.prefix.intents == std::vector<std::string>{"PlayMusic"});
    REQUIRE(e.prefix.slots.size() == 1);
    CHECK(e.prefix.slots[0] == Triplet{2, 5, "entity_name"});
    CHECK(e.at == 6);
  }
}

TEST_CASE("decode rejects end <= start and category-before-intent") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  CHECK_THROWS_AS(decode_target({s.intent_id(0), 5, 5, s.slot_id(0), s.eos()}, 12, vocab),
                  ParseError);
  CHECK_THROWS_AS(decode_target({s.intent_id(0), 5, 3, s.slot_id(0), s.eos()}, 12, vocab),
                  ParseError);
  CHECK_THROWS_AS(decode_target({s.slot_id(0), s.eos()}, 12, vocab), ParseError);
}

TEST_CASE("decode rejects duplicate intents and trailing labels") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  CHECK_THROWS_AS(decode_target({s.intent_id(0), s.intent_id(0), s.eos()}, 12, vocab),
                  ParseError);
  CHECK_THROWS_AS(decode_target({s.intent_id(0), s.eos(), s.eos()}, 12, vocab), ParseError);
}

TEST_CASE("decode accepts unsorted and overlapping model-output spans") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  std::vector<int> seq = {s.intent_id(1), 7, 9, s.slot_id(0), 2, 8, s.slot_id(2), s.eos()};
  auto t = decode_target(seq, 12, vocab);
  REQUIRE(t.slots.size() == 2);
  CHECK(t.slots[0] == Triplet{7, 9, "track"});
  CHECK(t.slots[1] == Triplet{2, 8, "playlist"});
}

TEST_CASE("fuzzed random label sequences parse or fail structurally, never crash") {
  auto vocab = worked_example_vocab();
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    int words = 1 + static_cast<int>(rng() % 14);
    LabelSpace s(words, vocab);
    std::uniform_int_distribution<int> len(0, 12);
    std::uniform_int_distribution<int> label(-2, s.size() + 2);
    std::vector<int> seq;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) seq.push_back(label(rng));
    try {
      auto t = decode_target(seq, words, vocab);
      CHECK(!t.intents.empty());
    } catch (const ParseError&) {
      // structured failure is an acceptable outcome
    }
  }
}

TEST_CASE("initial grammar state allows only intents") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  GrammarState st(s);
  auto mask = st.legal_mask();
  for (int id = 0; id < s.size(); ++id) CHECK(mask[static_cast<std::size_t>(id)] == s.is_intent(id));
}

TEST_CASE("after start=2 with twelve words the legal set is positions 3..12") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  GrammarState st(s);
  st.advance(s.intent_id(0));
  st.advance(2);
  auto mask = st.legal_mask();
  for (int id = 0; id < s.size(); ++id)
    CHECK(mask[static_cast<std::size_t>(id)] == (id >= 3 && id <= 12));
}

TEST_CASE("an emitted intent is illegal thereafter") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  GrammarState st(s);
  st.advance(s.intent_id(1));
  auto mask = st.legal_mask();
  CHECK(!mask[static_cast<std::size_t>(s.intent_id(1))]);
  CHECK(mask[static_cast<std::size_t>(s.intent_id(0))]);
  CHECK_THROWS_AS(st.advance(s.intent_id(1)), GrammarError);
}

TEST_CASE("terminator is legal only after an intent at a triplet boundary") {
  auto vocab = worked_example_vocab();
  LabelSpace s(12, vocab);
  GrammarState st(s);
  CHECK(!st.legal_mask()[static_cast<std::size_t>(s.eos())]);
  st.advance(s.intent_id(0));
  CHECK(st.legal_mask()[static_cast<std::size_t>(s.eos())]);   // zero triplets so far
  st.advance(4);
  CHECK(!st.legal_mask()[static_cast<std::size_t>(s.eos())]);  // mid-triplet
  st.advance(6);
  CHECK(!st.legal_mask()[static_cast<std::size_t>(s.eos())]);
  st.advance(s.slot_id(0));
  CHECK(st.legal_mask()[static_cast<std::size_t>(s.eos())]);   // boundary again
  // after the first triplet starts, intents are closed for good
  CHECK(!st.legal_mask()[static_cast<std::size_t>(s.intent_id(1))]);
}

TEST_CASE("masked random walks always terminate in a parseable sequence") {
  auto vocab = worked_example_vocab();
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10000; ++i) {
    int words = 1 + static_cast<int>(rng() % 14);
    LabelSpace s(words, vocab);
    GrammarState st(s);
    std::vector<int> seq;
    while (!st.finished()) {
      auto mask = st.legal_mask();
      std::vector<int> legal;
      for (int id = 0; id < s.size(); ++id)
        if (mask[static_cast<std::size_t>(id)]) legal.push_back(id);
      REQUIRE(!legal.empty());
      // bias toward the terminator so walks stay short; force it once long
      int pick;
      bool eos_legal = mask[static_cast<std::size_t>(s.eos())];
      if (eos_legal && (seq.size() >= 30 || rng() % 3 == 0))
        pick = s.eos();
      else
        pick = legal[rng() % legal.size()];
      st.advance(pick);
      seq.push_back(pick);
    }
    auto t = decode_target(seq, words, vocab);
    CHECK(!t.intents.empty());
  }
}

TEST_CASE("bio round trips: spans -> tags -> spans and tags -> spans -> tags") {
  CHECK(bio_from_spans({{2, 5, "track"}}, 12) ==
        std::vector<std::string>{"O", "O", "B-track", "I-track", "I-track", "O", "O", "O",
                                 "O", "O", "O", "O"});
  CHECK(spans_from_bio({"O", "O", "O"}).empty());
  CHECK(bio_from_spans({}, 3) == std::vector<std::string>{"O", "O", "O"});

  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    auto u = random_gold_utterance(rng);
    auto spans = spans_from_bio(u.bio_tags);
    CHECK(bio_from_spans(spans, static_cast<int>(u.tokens.size())) == u.bio_tags);
  }
}

TEST_CASE("bio conversion rejects overlap and out-of-range spans") {
  CHECK_THROWS_AS(bio_from_spans({{0, 3, "a"}, {2, 4, "b"}}, 5), GrammarError);
  CHECK_THROWS_AS(bio_from_spans({{0, 6, "a"}}, 5), GrammarError);
  CHECK_THROWS_AS(bio_from_spans({{3, 3, "a"}}, 5), GrammarError);
  CHECK_THROWS_AS(spans_from_bio({"I-track"}), GrammarError);
  CHECK_THROWS_AS(spans_from_bio({"B-a", "I-b"}), GrammarError);
  CHECK_THROWS_AS(spans_from_bio({"X-a"}), GrammarError);
}

TEST_CASE("adjacent same-category spans stay distinct through the BIO round trip") {
  std::vector<Triplet> spans = {{0, 2, "fruit"}, {2, 3, "fruit"}};
  auto tags = bio_from_spans(spans, 3);
  CHECK(tags == std::vector<std::string>{"B-fruit", "I-fruit", "B-fruit"});
  CHECK(spans_from_bio(tags) == spans);
}

TEST_CASE("label vocabulary is dense and rejects unknowns") {
  auto vocab = worked_example_vocab();
  CHECK(vocab.total() == 5);
  CHECK(vocab.intent_id("PlayMusic") == 0);
  CHECK(vocab.slot_id("playlist") == 2);
  CHECK(vocab.intent_name(1) == "AddToPlaylist");
  CHECK_THROWS_AS(vocab.intent_id("nope"), GrammarError);
  CHECK_THROWS_AS(vocab.slot_name(99), GrammarError);
  CHECK_THROWS_AS(vocab.add_intent("PlayMusic"), GrammarError);
}
