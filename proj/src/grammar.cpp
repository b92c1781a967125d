#include "gslu/grammar.hpp"

#include <algorithm>
#include <set>

namespace gslu {

LabelVocabulary LabelVocabulary::from_corpus(const std::vector<Utterance>& corpus) {
  LabelVocabulary v;
  for (const auto& u : corpus) {
    for (const auto& it : u.intents)
      if (!v.has_intent(it)) v.add_intent(it);
    for (const auto& tag : u.bio_tags) {
      if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
        std::string cat = tag.substr(2);
        if (!v.has_slot(cat)) v.add_slot(cat);
      }
    }
  }
  return v;
}

void LabelVocabulary::add_intent(const std::string& name) {
  if (intent_ids_.count(name)) throw GrammarError("duplicate intent label: " + name);
  intent_ids_[name] = n_intents();
  intents_.push_back(name);
}

void LabelVocabulary::add_slot(const std::string& name) {
  if (slot_ids_.count(name)) throw GrammarError("duplicate slot label: " + name);
  slot_ids_[name] = n_slots();
  slots_.push_back(name);
}

int LabelVocabulary::intent_id(const std::string& name) const {
  auto it = intent_ids_.find(name);
  if (it == intent_ids_.end()) throw GrammarError("unknown intent label: " + name);
  return it->second;
}

int LabelVocabulary::slot_id(const std::string& name) const {
  auto it = slot_ids_.find(name);
  if (it == slot_ids_.end()) throw GrammarError("unknown slot label: " + name);
  return it->second;
}

const std::string& LabelVocabulary::intent_name(int id) const {
  if (id < 0 || id >= n_intents()) throw GrammarError("intent id out of range");
  return intents_[static_cast<std::size_t>(id)];
}

const std::string& LabelVocabulary::slot_name(int id) const {
  if (id < 0 || id >= n_slots()) throw GrammarError("slot id out of range");
  return slots_[static_cast<std::size_t>(id)];
}

std::vector<bool> GrammarState::legal_mask() const {
  std::vector<bool> legal(static_cast<std::size_t>(space_.size()), false);
  if (finished_) return legal;
  auto allow_unused_intents = [&] {
    for (int i = 0; i < space_.n_intents; ++i)
      if (!used_intent_[static_cast<std::size_t>(i)])
        legal[static_cast<std::size_t>(space_.intent_id(i))] = true;
  };
  auto allow_starts = [&] {
    // a start needs room for an end strictly after it, so the last word
    // index is the largest legal start
    for (int p = 0; p < space_.n_words; ++p) legal[static_cast<std::size_t>(p)] = true;
  };
  switch (phase_) {
    case Phase::ExpectIntent:
      allow_unused_intents();
      break;
    case Phase::IntentOrStart:
      allow_unused_intents();
      allow_starts();
      legal[static_cast<std::size_t>(space_.eos())] = true;
      break;
    case Phase::ExpectEnd:
      for (int p = pending_start_ + 1; p <= space_.n_words; ++p)
        legal[static_cast<std::size_t>(p)] = true;
      break;
    case Phase::ExpectCategory:
      for (int s = 0; s < space_.n_slots; ++s)
        legal[static_cast<std::size_t>(space_.slot_id(s))] = true;
      break;
    case Phase::StartOrEos:
      allow_starts();
      legal[static_cast<std::size_t>(space_.eos())] = true;
      break;
  }
  return legal;
}

void GrammarState::advance(int id) {
  if (id < 0 || id >= space_.size())
    throw GrammarError("label id " + std::to_string(id) + " outside the label space");
  if (!legal_mask()[static_cast<std::size_t>(id)]) {
    const char* phase_name[] = {"expect-intent", "intent-or-start", "expect-end",
                                "expect-category", "start-or-eos"};
    throw GrammarError("label id " + std::to_string(id) + " illegal in phase " +
                       phase_name[static_cast<int>(phase_)]);
  }
  switch (phase_) {
    case Phase::ExpectIntent:
    case Phase::IntentOrStart:
      if (space_.is_intent(id)) {
        used_intent_[static_cast<std::size_t>(space_.intent_label(id))] = true;
        phase_ = Phase::IntentOrStart;
      } else if (space_.is_position(id)) {
        pending_start_ = id;
        phase_ = Phase::ExpectEnd;
      } else {  // eos
        finished_ = true;
      }
      break;
    case Phase::ExpectEnd:
      phase_ = Phase::ExpectCategory;
      break;
    case Phase::ExpectCategory:
      pending_start_ = -1;
      phase_ = Phase::StartOrEos;
      break;
    case Phase::StartOrEos:
      if (space_.is_position(id)) {
        pending_start_ = id;
        phase_ = Phase::ExpectEnd;
      } else {
        finished_ = true;
      }
      break;
  }
}

std::vector<int> encode_target(const Utterance& u, const LabelVocabulary& vocab) {
  auto problems = check_utterance(u);
  if (!problems.empty()) throw GrammarError("invalid gold target: " + problems.front());
  const LabelSpace space(static_cast<int>(u.tokens.size()), vocab);
  std::vector<int> seq;
  for (const auto& it : u.intents) seq.push_back(space.intent_id(vocab.intent_id(it)));
  auto spans = spans_from_bio(u.bio_tags);
  std::stable_sort(spans.begin(), spans.end(),
                   [](const Triplet& a, const Triplet& b) { return a.start < b.start; });
  for (const auto& sp : spans) {
    seq.push_back(sp.start);
    seq.push_back(sp.end);
    seq.push_back(space.slot_id(vocab.slot_id(sp.category)));
  }
  seq.push_back(space.eos());
  return seq;
}

TargetSequence decode_target(const std::vector<int>& seq, int n_words,
                             const LabelVocabulary& vocab) {
  const LabelSpace space(n_words, vocab);
  GrammarState state(space);
  TargetSequence out;
  int start = -1, end = -1;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int id = seq[i];
    try {
      state.advance(id);
    } catch (const GrammarError& e) {
      throw ParseError(std::string(e.what()) + " at step " + std::to_string(i), out, i);
    }
    if (state.finished()) {
      if (i + 1 != seq.size())
        throw ParseError("labels follow the terminator at step " + std::to_string(i + 1),
                         out, i + 1);
      return out;
    }
    switch (state.phase()) {
      case GrammarState::Phase::IntentOrStart:
        out.intents.push_back(vocab.intent_name(space.intent_label(id)));
        break;
      case GrammarState::Phase::ExpectEnd:
        start = id;
        break;
      case GrammarState::Phase::ExpectCategory:
        end = id;
        break;
      case GrammarState::Phase::StartOrEos:
        out.slots.push_back({start, end, vocab.slot_name(space.slot_label(id))});
        break;
      case GrammarState::Phase::ExpectIntent:
        break;
    }
  }
  throw ParseError("sequence ended without a terminator", out, seq.size());
}

std::vector<std::string> bio_from_spans(const std::vector<Triplet>& spans, int n_words) {
  std::vector<std::string> tags(static_cast<std::size_t>(n_words), "O");
  int prev_end = -1;
  auto sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const Triplet& a, const Triplet& b) {
    return a.start < b.start;
  });
  for (const auto& sp : spans) {
    if (sp.start < 0 || sp.end > n_words || sp.start >= sp.end)
      throw GrammarError("span (" + std::to_string(sp.start) + "," + std::to_string(sp.end) +
                         ") out of range for " + std::to_string(n_words) + " words");
  }
  for (const auto& sp : sorted) {
    if (sp.start < prev_end)
      throw GrammarError("overlapping spans cannot be expressed as BIO tags");
    tags[static_cast<std::size_t>(sp.start)] = "B-" + sp.category;
    for (int p = sp.start + 1; p < sp.end; ++p)
      tags[static_cast<std::size_t>(p)] = "I-" + sp.category;
    prev_end = sp.end;
  }
  return tags;
}

std::vector<Triplet> spans_from_bio(const std::vector<std::string>& tags) {
  auto problem = check_bio(tags);
  if (!problem.empty()) throw GrammarError(problem);
  std::vector<Triplet> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i].rfind("B-", 0) == 0) {
      Triplet sp;
      sp.start = static_cast<int>(i);
      sp.category = tags[i].substr(2);
      std::size_t j = i + 1;
      while (j < tags.size() && tags[j] == "I-" + sp.category) ++j;
      sp.end = static_cast<int>(j);
      spans.push_back(std::move(sp));
      i = j - 1;
    }
  }
  return spans;
}

std::string check_bio(const std::vector<std::string>& tags) {
  std::string prev_cat;  // category continued by an I- tag, empty after O
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& t = tags[i];
    if (t == "O") {
      prev_cat.clear();
    } else if (t.rfind("B-", 0) == 0 && t.size() > 2) {
      prev_cat = t.substr(2);
    } else if (t.rfind("I-", 0) == 0 && t.size() > 2) {
      if (prev_cat != t.substr(2))
        return "I-" + t.substr(2) + " at position " + std::to_string(i) +
               " does not continue a span";
    } else {
      return "unrecognized tag '" + t + "' at position " + std::to_string(i);
    }
  }
  return "";
}

std::vector<std::string> check_utterance(const Utterance& u) {
  std::vector<std::string> problems;
  if (u.tokens.empty()) problems.push_back("utterance has no tokens");
  if (u.intents.empty()) problems.push_back("utterance has no intents");
  std::set<std::string> seen(u.intents.begin(), u.intents.end());
  if (seen.size() != u.intents.size()) problems.push_back("duplicate intent labels");
  if (u.bio_tags.size() != u.tokens.size())
    problems.push_back("tag count " + std::to_string(u.bio_tags.size()) +
                       " != token count " + std::to_string(u.tokens.size()));
  else {
    auto bio = check_bio(u.bio_tags);
    if (!bio.empty()) problems.push_back(bio);
  }
  return problems;
}

}  // namespace gslu
