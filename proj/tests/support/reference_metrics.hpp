#pragma once

#include "gslu/metrics.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace gslu::testing {

// Independent reference scorer: per utterance, greedily match each predicted
// span against the remaining gold spans by find-and-erase. Same precision /
// recall conventions as the production scorer, completely different tallying
// code path.
struct RefScores {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline RefScores ref_slot_scores(const std::vector<std::vector<Triplet>>& gold,
                                 const std::vector<std::vector<Triplet>>& pred) {
  RefScores s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::vector<Triplet> remaining = gold[i];
    for (const auto& span : pred[i]) {
      auto it = std::find(remaining.begin(), remaining.end(), span);
      if (it != remaining.end()) {
        ++s.tp;
        remaining.erase(it);
      } else {
        ++s.fp;
      }
    }
    s.fn += static_cast<long>(remaining.size());
  }
  s.precision = s.tp + s.fp > 0 ? double(s.tp) / double(s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn > 0 ? double(s.tp) / double(s.tp + s.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

inline std::vector<std::string> ref_dedup_sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline bool ref_intents_equal(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  return ref_dedup_sorted(a) == ref_dedup_sorted(b);
}

inline bool ref_spans_equal(std::vector<Triplet> a, std::vector<Triplet> b) {
  auto key = [](const Triplet& t) { return std::tie(t.start, t.end, t.category); };
  auto lt = [&](const Triplet& x, const Triplet& y) { return key(x) < key(y); };
  std::sort(a.begin(), a.end(), lt);
  std::sort(b.begin(), b.end(), lt);
  return a == b;
}

// Random structured target over a tiny label alphabet.
inline TargetSequence random_target(std::mt19937_64& rng) {
  static const std::vector<std::string> kIntents = {"i1", "i2", "i3"};
  static const std::vector<std::string> kCats = {"a", "b"};
  TargetSequence t;
  std::vector<std::string> pool = kIntents;
  std::shuffle(pool.begin(), pool.end(), rng);
  t.intents.assign(pool.begin(), pool.begin() + 1 + rng() % 3);
  const int n_spans = static_cast<int>(rng() % 4);
  for (int s = 0; s < n_spans; ++s) {
    int start = static_cast<int>(rng() % 6);
    int end = start + 1 + static_cast<int>(rng() % 3);
    t.slots.push_back({start, end, kCats[rng() % kCats.size()]});
  }
  return t;
}

// A prediction correlated with the gold target, so matches, misses, and
// spurious spans all occur with useful frequency.
inline TargetSequence perturbed(const TargetSequence& gold, std::mt19937_64& rng) {
  TargetSequence p;
  for (const auto& intent : gold.intents)
    if (rng() % 4 != 0) p.intents.push_back(intent);
  if (p.intents.empty() || rng() % 5 == 0) p.intents.push_back("i" + std::to_string(1 + rng() % 3));
  for (const auto& span : gold.slots)
    if (rng() % 3 != 0) p.slots.push_back(span);
  if (rng() % 3 == 0) {
    int start = static_cast<int>(rng() % 6);
    p.slots.push_back({start, start + 1, rng() % 2 ? "a" : "b"});
  }
  if (rng() % 4 == 0 && !p.slots.empty()) p.slots.push_back(p.slots.front());  // duplicate
  return p;
}

}  // namespace gslu::testing
