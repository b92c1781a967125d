#pragma once

#include "gslu/grammar.hpp"

#include <map>
#include <string>
#include <vector>

namespace gslu {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged exact-match span scores over aligned per-utterance span
// lists; duplicate spans match with multiplicity.
PrfScores slot_f1(const std::vector<std::vector<Triplet>>& gold,
                  const std::vector<std::vector<Triplet>>& pred);

// Fraction of utterances whose predicted intent set equals gold exactly.
double intent_accuracy(const std::vector<std::vector<std::string>>& gold,
                       const std::vector<std::vector<std::string>>& pred);

// Fraction of utterances with exact intent-set match AND exact slot-triplet
// multiset match.
double overall_accuracy(const std::vector<TargetSequence>& gold,
                        const std::vector<TargetSequence>& pred);

// Per gold-intent-count slice of the corpus (the 1/2/3-intent analysis).
struct IntentCountBucket {
  long utterances = 0;
  long intent_correct = 0;
  long overall_correct = 0;
  long span_tp = 0, span_fp = 0, span_fn = 0;
};

struct EvalReport {
  long utterances = 0;
  double slot_precision = 0.0, slot_recall = 0.0, slot_f1 = 0.0;
  double intent_accuracy = 0.0;
  double overall_accuracy = 0.0;
  long span_tp = 0, span_fp = 0, span_fn = 0;
  std::map<int, IntentCountBucket> by_intent_count;

  std::string to_text() const;  // flat key=value lines
  std::string to_json() const;
};

EvalReport evaluate(const std::vector<TargetSequence>& gold,
                    const std::vector<TargetSequence>& pred);

// Gold structured targets for a labeled corpus: intents as listed, spans
// recovered from the BIO tags. Malformed tags raise MetricsError naming the
// utterance.
std::vector<TargetSequence> corpus_targets(const std::vector<Utterance>& corpus);

}  // namespace gslu
