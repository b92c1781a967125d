#pragma once

#include "gslu/corpus.hpp"

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gslu {

struct BuilderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A coherence evaluation that could not produce a score (network failure,
// protocol violation). The corpus builder retries once and then skips the
// candidate; callers using a scorer directly see the exception.
struct ScorerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Symmetric intent-pair affinities in [0, 1] used by the heuristic scorer.
// The diagonal is never consulted: same-intent candidates are filtered out
// before scoring.
class AffinityTable {
 public:
  void set(const std::string& a, const std::string& b, double value);
  double get(const std::string& a, const std::string& b, double fallback) const;
  bool has(const std::string& a, const std::string& b) const;
  std::size_t size() const { return table_.size(); }

  // Text format: one "intentA<TAB>intentB<TAB>value" line per pair.
  static AffinityTable load(std::istream& in);
  static AffinityTable load_file(const std::string& path);
  void save(std::ostream& out) const;

 private:
  static std::pair<std::string, std::string> key(const std::string& a, const std::string& b);
  std::map<std::pair<std::string, std::string>, double> table_;
};

// Pairwise utterance coherence in [0, 1]. Implementations must be
// deterministic per input pair within a run and callable from several
// threads at once.
class CoherenceScorer {
 public:
  virtual ~CoherenceScorer() = default;
  virtual double score(const Utterance& a, const Utterance& b) = 0;
};

// Words ignored when comparing utterance vocabularies; covers articles,
// pronouns, auxiliaries, and the conjunctions the builder itself inserts.
const std::vector<std::string>& default_stopwords();

// Desk-scale surrogate for a next-sentence model: the mean affinity over
// cross-utterance intent pairs and the Jaccard similarity of lowercased
// content-word sets, mixed half and half. Unknown intent pairs fall back to
// a configurable floor.
class HeuristicScorer : public CoherenceScorer {
 public:
  explicit HeuristicScorer(AffinityTable affinity,
                           std::vector<std::string> stopwords = default_stopwords(),
                           double missing_affinity = 0.1);
  double score(const Utterance& a, const Utterance& b) override;

 private:
  AffinityTable affinity_;
  std::unordered_set<std::string> stop_;
  double missing_;
};

// Fixed score regardless of input; with a threshold of zero this reproduces
// the accept-everything random-concatenation baseline.
class ConstantScorer : public CoherenceScorer {
 public:
  explicit ConstantScorer(double value);
  double score(const Utterance& a, const Utterance& b) override;

 private:
  double value_;
};

// HTTP client for an external coherence service. Each query posts
// {"sentence_a": ..., "sentence_b": ...} and expects {"score": r} with
// r in [0, 1]. Transport failures are retried with exponential backoff;
// results are cached per ordered sentence pair for the lifetime of the
// scorer, so repeated queries hit the network once.
class RemoteScorer : public CoherenceScorer {
 public:
  struct Options {
    std::string url;  // e.g. "http://127.0.0.1:8080/score"
    double timeout_seconds = 10.0;
    int retries = 3;               // additional attempts after the first
    double backoff_seconds = 0.25; // first retry delay; doubles per retry
  };

  explicit RemoteScorer(Options options);
  double score(const Utterance& a, const Utterance& b) override;

  // Network round trips actually issued (cache misses, including retries).
  long long requests_issued() const { return requests_.load(); }

 private:
  double fetch(const std::string& sentence_a, const std::string& sentence_b);

  Options options_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
  std::mutex mu_;
  std::unordered_map<std::string, double> cache_;
  std::atomic<long long> requests_{0};
};

// Scorer selection for configuration files and the command line.
struct ScorerConfig {
  std::string kind = "heuristic";  // heuristic | constant | remote
  std::string affinity_path;       // heuristic: affinity table file
  double missing_affinity = 0.1;   // heuristic: fallback for unknown pairs
  double constant_value = 0.5;     // constant: the score
  std::string remote_url;          // remote: service endpoint
  double remote_timeout_seconds = 10.0;
  int remote_retries = 3;
  double remote_backoff_seconds = 0.25;
};

std::unique_ptr<CoherenceScorer> make_scorer(const ScorerConfig& cfg);

// Multi-intent corpus construction settings. The intent-count probabilities
// give P(n = 1 + index); a sampled n means the builder attempts n - 1
// concatenations, decrementing after every attempt whether or not a
// candidate passed.
struct BuilderConfig {
  double tau = 0.3;
  std::vector<double> intent_count_probs = {0.3, 0.5, 0.2};
  std::vector<std::pair<std::string, double>> conjunctions = {
      {"and", 1.0}, {"and then", 1.0}, {"and also", 1.0}};
  int max_candidate_scans = 200;  // candidates scored per concatenation slot
  std::uint64_t seed = 0;
  int n_threads = 1;
  bool dedup = false;  // drop exact repeats of earlier outputs

  void validate() const;  // throws BuilderError on nonsense
};

// One scored candidate during construction; accepted entries always carry
// score > tau.
struct AuditEntry {
  int utterance_id = 0;   // source index of the utterance being extended
  int candidate_id = 0;   // source index of the scored candidate
  double score = 0.0;
  bool accepted = false;
};

struct BuildReport {
  std::vector<AuditEntry> audit;   // every scored candidate, in source order
  std::vector<std::string> notes;  // skipped candidates and unfilled slots
  int shortfalls = 0;              // slots where no candidate passed tau
};

// One "utterance-id,candidate-id,score,accepted" line per entry.
void write_audit_log(const std::vector<AuditEntry>& entries, std::ostream& out);

// Glues two labeled utterances into one: tokens joined through the (possibly
// empty, possibly multi-word) conjunction, conjunction words tagged outside
// any span, the right side's tags shifted past the new prefix, and intents
// united in order. The inputs must not share an intent.
Utterance concat_samples(const Utterance& left, const Utterance& right,
                         const std::string& conjunction);

// Builds a multi-intent corpus from a single-intent one. For every source
// utterance: sample an intent count, then repeatedly scan candidates whose
// intents are all new (seeded shuffle, bounded scan) and splice in the first
// one the scorer rates above tau. Scorer failures are retried once per
// candidate and then skipped. Output order matches source order and, unless
// dedup trims repeats, output size equals source size. Derivations draw from
// per-utterance streams split off the master seed, so results do not depend
// on thread count.
std::vector<Utterance> build(const std::vector<Utterance>& source, const BuilderConfig& cfg,
                             CoherenceScorer& scorer, BuildReport* report = nullptr);

// Pairwise within-utterance intent co-occurrence counts (symmetric, zero
// diagonal, axes sorted by name) and a per-row goodness-of-fit test against
// the uniform distribution over the other intents.
struct Cooccurrence {
  std::vector<std::string> intents;
  std::vector<std::vector<long long>> counts;
  std::vector<double> row_chi2;  // statistic over K-1 cells, dof K-2
  std::vector<double> row_p;     // upper tail; 1.0 when a row is empty or dof < 1
  std::string to_text() const;
};

Cooccurrence cooccurrence_matrix(const std::vector<Utterance>& corpus);

}  // namespace gslu
