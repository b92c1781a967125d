#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gslu {

struct GrammarError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One utterance: surface tokens, their vocabulary ids, gold intents (file
// order, may be empty before prediction) and per-token BIO tags.
struct Utterance {
  std::vector<std::string> tokens;
  std::vector<int> token_ids;
  std::vector<std::string> intents;
  std::vector<std::string> bio_tags;
};

// Slot span: 0-indexed inclusive start, exclusive end, category label.
struct Triplet {
  int start = 0;
  int end = 0;
  std::string category;
  bool operator==(const Triplet&) const = default;
};

// Structured generation target: intent labels followed by slot triplets.
struct TargetSequence {
  std::vector<std::string> intents;
  std::vector<Triplet> slots;
  bool operator==(const TargetSequence&) const = default;
};

// Dense intent/slot label ids: intents occupy [0, n_intents), slot
// categories [n_intents, L). Special tokens live outside [0, L).
class LabelVocabulary {
 public:
  static LabelVocabulary from_corpus(const std::vector<Utterance>& corpus);

  void add_intent(const std::string& name);
  void add_slot(const std::string& name);

  int n_intents() const { return static_cast<int>(intents_.size()); }
  int n_slots() const { return static_cast<int>(slots_.size()); }
  int total() const { return n_intents() + n_slots(); }

  int intent_id(const std::string& name) const;
  int slot_id(const std::string& name) const;
  bool has_intent(const std::string& name) const { return intent_ids_.count(name) > 0; }
  bool has_slot(const std::string& name) const { return slot_ids_.count(name) > 0; }
  const std::string& intent_name(int id) const;
  const std::string& slot_name(int id) const;
  const std::vector<std::string>& intent_names() const { return intents_; }
  const std::vector<std::string>& slot_names() const { return slots_; }

 private:
  std::vector<std::string> intents_, slots_;
  std::unordered_map<std::string, int> intent_ids_, slot_ids_;
};

// Arithmetic of the per-utterance output label space. For an utterance of W
// words the model input carries a trailing sentinel token, so pointer ids run
// 0..W (position W is the exclusive end just past the last word), category
// ids follow, and the final id terminates generation.
struct LabelSpace {
  int n_words = 0;
  int n_intents = 0;
  int n_slots = 0;

  LabelSpace(int words, const LabelVocabulary& vocab)
      : n_words(words), n_intents(vocab.n_intents()), n_slots(vocab.n_slots()) {}
  LabelSpace(int words, int intents, int slots)
      : n_words(words), n_intents(intents), n_slots(slots) {}

  int positions() const { return n_words + 1; }
  int intent_base() const { return positions(); }
  int slot_base() const { return positions() + n_intents; }
  int eos() const { return positions() + n_intents + n_slots; }
  int size() const { return eos() + 1; }

  bool is_position(int id) const { return id >= 0 && id < positions(); }
  bool is_intent(int id) const { return id >= intent_base() && id < slot_base(); }
  bool is_slot(int id) const { return id >= slot_base() && id < eos(); }
  bool is_eos(int id) const { return id == eos(); }

  int intent_label(int id) const { return id - intent_base(); }
  int slot_label(int id) const { return id - slot_base(); }
  int intent_id(int label) const { return intent_base() + label; }
  int slot_id(int label) const { return slot_base() + label; }
};

// Parse automaton over the target grammar  intents+ (start end category)* eos.
// Tracks enough state to answer "which labels are legal next".
class GrammarState {
 public:
  enum class Phase { ExpectIntent, IntentOrStart, ExpectEnd, ExpectCategory, StartOrEos };

  explicit GrammarState(const LabelSpace& space)
      : space_(space), used_intent_(static_cast<std::size_t>(space.n_intents), false) {}

  Phase phase() const { return phase_; }
  bool finished() const { return finished_; }
  int pending_start() const { return pending_start_; }
  const LabelSpace& space() const { return space_; }

  // True entries are the grammar-legal next labels; size == space.size().
  std::vector<bool> legal_mask() const;

  // Consumes one label; throws GrammarError if it is not legal here.
  void advance(int id);

 private:
  LabelSpace space_;
  Phase phase_ = Phase::ExpectIntent;
  std::vector<bool> used_intent_;
  int pending_start_ = -1;
  bool finished_ = false;
};

// Parse failure for model output; carries the longest valid prefix (complete
// intents and triplets seen before the offending step).
struct ParseError : GrammarError {
  ParseError(const std::string& msg, TargetSequence pfx, std::size_t pos)
      : GrammarError(msg), prefix(std::move(pfx)), at(pos) {}
  TargetSequence prefix;
  std::size_t at = 0;
};

// Gold utterance -> label-id sequence (intents, then triplets sorted by
// start, then the terminator id). Throws GrammarError on malformed BIO,
// unknown labels, or missing intents.
std::vector<int> encode_target(const Utterance& u, const LabelVocabulary& vocab);

// Label-id sequence -> structured target for an utterance of n_words words.
// Accepts anything grammar-legal (model output may interleave spans in any
// order); throws ParseError on grammar violations or a missing terminator.
TargetSequence decode_target(const std::vector<int>& seq, int n_words,
                              const LabelVocabulary& vocab);

// Span/BIO conversions; exact mutual inverses on their valid domains.
std::vector<std::string> bio_from_spans(const std::vector<Triplet>& spans, int n_words);
std::vector<Triplet> spans_from_bio(const std::vector<std::string>& tags);

// Empty string if well-formed, else a description of the first violation.
std::string check_bio(const std::vector<std::string>& tags);

// Gold-target validation used at ingestion: ≥1 intent, distinct intents,
// well-formed BIO, tag/token count agreement. Returns problem descriptions.
std::vector<std::string> check_utterance(const Utterance& u);

}  // namespace gslu
