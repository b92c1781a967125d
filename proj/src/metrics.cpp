#include "gslu/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

namespace gslu {

namespace {

using SpanKey = std::tuple<int, int, std::string>;

std::map<SpanKey, long> span_counts(const std::vector<Triplet>& spans) {
  std::map<SpanKey, long> counts;
  for (const auto& s : spans) ++counts[{s.start, s.end, s.category}];
  return counts;
}

struct SpanTally {
  long tp = 0, fp = 0, fn = 0;
};

SpanTally tally_spans(const std::vector<Triplet>& gold, const std::vector<Triplet>& pred) {
  auto g = span_counts(gold), p = span_counts(pred);
  SpanTally t;
  for (const auto& [key, n_pred] : p) {
    auto it = g.find(key);
    long matched = it == g.end() ? 0 : std::min(n_pred, it->second);
    t.tp += matched;
    t.fp += n_pred - matched;
  }
  t.fn = static_cast<long>(gold.size()) - t.tp;
  return t;
}

bool intents_match(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  return std::set<std::string>(gold.begin(), gold.end()) ==
         std::set<std::string>(pred.begin(), pred.end());
}

bool spans_match(const std::vector<Triplet>& gold, const std::vector<Triplet>& pred) {
  return span_counts(gold) == span_counts(pred);
}

PrfScores prf_from(long tp, long fp, long fn) {
  PrfScores s;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

void require_aligned(std::size_t gold, std::size_t pred) {
  if (gold != pred)
    throw MetricsError("gold and predicted lists are not aligned: " + std::to_string(gold) +
                       " vs " + std::to_string(pred));
}

}  // namespace

PrfScores slot_f1(const std::vector<std::vector<Triplet>>& gold,
                  const std::vector<std::vector<Triplet>>& pred) {
  require_aligned(gold.size(), pred.size());
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto t = tally_spans(gold[i], pred[i]);
    tp += t.tp;
    fp += t.fp;
    fn += t.fn;
  }
  return prf_from(tp, fp, fn);
}

double intent_accuracy(const std::vector<std::vector<std::string>>& gold,
                       const std::vector<std::vector<std::string>>& pred) {
  require_aligned(gold.size(), pred.size());
  if (gold.empty()) return 0.0;
  long correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (intents_match(gold[i], pred[i])) ++correct;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

double overall_accuracy(const std::vector<TargetSequence>& gold,
                        const std::vector<TargetSequence>& pred) {
  require_aligned(gold.size(), pred.size());
  if (gold.empty()) return 0.0;
  long correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (intents_match(gold[i].intents, pred[i].intents) &&
        spans_match(gold[i].slots, pred[i].slots))
      ++correct;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

EvalReport evaluate(const std::vector<TargetSequence>& gold,
                    const std::vector<TargetSequence>& pred) {
  require_aligned(gold.size(), pred.size());
  EvalReport r;
  r.utterances = static_cast<long>(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto t = tally_spans(gold[i].slots, pred[i].slots);
    bool intents_ok = intents_match(gold[i].intents, pred[i].intents);
    bool overall_ok = intents_ok && spans_match(gold[i].slots, pred[i].slots);
    r.span_tp += t.tp;
    r.span_fp += t.fp;
    r.span_fn += t.fn;
    auto& bucket = r.by_intent_count[static_cast<int>(gold[i].intents.size())];
    ++bucket.utterances;
    bucket.span_tp += t.tp;
    bucket.span_fp += t.fp;
    bucket.span_fn += t.fn;
    if (intents_ok) ++bucket.intent_correct;
    if (overall_ok) ++bucket.overall_correct;
  }
  auto prf = prf_from(r.span_tp, r.span_fp, r.span_fn);
  r.slot_precision = prf.precision;
  r.slot_recall = prf.recall;
  r.slot_f1 = prf.f1;
  long intent_correct = 0, overall_correct = 0;
  for (const auto& [count, b] : r.by_intent_count) {
    intent_correct += b.intent_correct;
    overall_correct += b.overall_correct;
  }
  if (r.utterances > 0) {
    r.intent_accuracy = static_cast<double>(intent_correct) / static_cast<double>(r.utterances);
    r.overall_accuracy =
        static_cast<double>(overall_correct) / static_cast<double>(r.utterances);
  }
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "# intent accuracy uses exact set equality (no partial credit)\n";
  os << "utterances=" << utterances << "\n";
  os << "slot_precision=" << slot_precision << "\n";
  os << "slot_recall=" << slot_recall << "\n";
  os << "slot_f1=" << slot_f1 << "\n";
  os << "intent_accuracy=" << intent_accuracy << "\n";
  os << "overall_accuracy=" << overall_accuracy << "\n";
  os << "span_tp=" << span_tp << "\n";
  os << "span_fp=" << span_fp << "\n";
  os << "span_fn=" << span_fn << "\n";
  for (const auto& [count, b] : by_intent_count) {
    std::string prefix = "intents_" + std::to_string(count) + "_";
    os << prefix << "utterances=" << b.utterances << "\n";
    os << prefix << "intent_accuracy="
       << (b.utterances ? static_cast<double>(b.intent_correct) / b.utterances : 0.0) << "\n";
    os << prefix << "overall_accuracy="
       << (b.utterances ? static_cast<double>(b.overall_correct) / b.utterances : 0.0) << "\n";
    auto prf = prf_from(b.span_tp, b.span_fp, b.span_fn);
    os << prefix << "slot_f1=" << prf.f1 << "\n";
  }
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["utterances"] = utterances;
  j["slot_precision"] = slot_precision;
  j["slot_recall"] = slot_recall;
  j["slot_f1"] = slot_f1;
  j["intent_accuracy"] = intent_accuracy;
  j["overall_accuracy"] = overall_accuracy;
  j["span_counts"] = {{"tp", span_tp}, {"fp", span_fp}, {"fn", span_fn}};
  j["note"] = "intent accuracy uses exact set equality";
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& [count, b] : by_intent_count) {
    auto prf = prf_from(b.span_tp, b.span_fp, b.span_fn);
    buckets[std::to_string(count)] = {
        {"utterances", b.utterances},
        {"intent_accuracy",
         b.utterances ? static_cast<double>(b.intent_correct) / b.utterances : 0.0},
        {"overall_accuracy",
         b.utterances ? static_cast<double>(b.overall_correct) / b.utterances : 0.0},
        {"slot_f1", prf.f1}};
  }
  j["by_intent_count"] = buckets;
  return j.dump(2);
}

std::vector<TargetSequence> corpus_targets(const std::vector<Utterance>& corpus) {
  std::vector<TargetSequence> gold;
  gold.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      gold.push_back(TargetSequence{corpus[i].intents, spans_from_bio(corpus[i].bio_tags)});
    } catch (const GrammarError& e) {
      throw MetricsError("utterance " + std::to_string(i) + ": " + e.what());
    }
  }
  return gold;
}

}  // namespace gslu
