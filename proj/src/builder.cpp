#include "gslu/builder.hpp"

#include "gslu/util.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace gslu {

// ---------------------------------------------------------------------------
// Affinity table

std::pair<std::string, std::string> AffinityTable::key(const std::string& a,
                                                       const std::string& b) {
  return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
}

void AffinityTable::set(const std::string& a, const std::string& b, double value) {
  if (a.empty() || b.empty()) throw BuilderError("affinity table: empty intent name");
  if (!(value >= 0.0 && value <= 1.0)) {
    throw BuilderError("affinity table: value for (" + a + ", " + b +
                       ") must lie in [0, 1], got " + std::to_string(value));
  }
  table_[key(a, b)] = value;
}

double AffinityTable::get(const std::string& a, const std::string& b, double fallback) const {
  auto it = table_.find(key(a, b));
  return it == table_.end() ? fallback : it->second;
}

bool AffinityTable::has(const std::string& a, const std::string& b) const {
  return table_.count(key(a, b)) > 0;
}

AffinityTable AffinityTable::load(std::istream& in) {
  AffinityTable t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto parts = split(line, '\t');
    if (parts.size() != 3) {
      throw BuilderError("affinity table line " + std::to_string(line_no) +
                         ": expected intentA<TAB>intentB<TAB>value");
    }
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(parts[2], &used);
      if (used != parts[2].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw BuilderError("affinity table line " + std::to_string(line_no) +
                         ": bad value '" + parts[2] + "'");
    }
    try {
      t.set(trim(parts[0]), trim(parts[1]), v);
    } catch (const BuilderError& e) {
      throw BuilderError("affinity table line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return t;
}

AffinityTable AffinityTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BuilderError("cannot open affinity table: " + path);
  return load(in);
}

void AffinityTable::save(std::ostream& out) const {
  for (const auto& [k, v] : table_) {
    out << k.first << '\t' << k.second << '\t' << v << '\n';
  }
}

// ---------------------------------------------------------------------------
// Scorers

const std::vector<std::string>& default_stopwords() {
  static const std::vector<std::string> words = {
      "a",    "an",   "the",  "and",  "or",   "to",   "of",    "in",   "on",
      "at",   "for",  "is",   "are",  "was",  "be",   "me",    "my",   "i",
      "you",  "it",   "this", "that", "with", "from", "then",  "also", "please",
      "what", "will", "do",   "can",  "would"};
  return words;
}

HeuristicScorer::HeuristicScorer(AffinityTable affinity, std::vector<std::string> stopwords,
                                 double missing_affinity)
    : affinity_(std::move(affinity)), missing_(missing_affinity) {
  for (const auto& w : stopwords) stop_.insert(lowercase(w));
  if (!(missing_ >= 0.0 && missing_ <= 1.0)) {
    throw BuilderError("heuristic scorer: missing-affinity fallback must lie in [0, 1]");
  }
}

namespace {

std::unordered_set<std::string> content_words(const Utterance& u,
                                              const std::unordered_set<std::string>& stop) {
  std::unordered_set<std::string> words;
  for (const auto& t : u.tokens) {
    std::string w = lowercase(t);
    if (stop.count(w) == 0) words.insert(std::move(w));
  }
  return words;
}

}  // namespace

double HeuristicScorer::score(const Utterance& a, const Utterance& b) {
  if (a.intents.empty() || b.intents.empty()) {
    throw ScorerError("heuristic scorer: utterances must carry intents");
  }
  double affinity_sum = 0.0;
  int pairs = 0;
  for (const auto& ia : a.intents) {
    for (const auto& ib : b.intents) {
      affinity_sum += affinity_.get(ia, ib, missing_);
      ++pairs;
    }
  }
  double affinity = affinity_sum / pairs;

  auto wa = content_words(a, stop_), wb = content_words(b, stop_);
  long shared = std::count_if(wa.begin(), wa.end(),
                              [&](const std::string& w) { return wb.count(w) > 0; });
  double uni = static_cast<double>(wa.size() + wb.size() - shared);
  double jaccard = uni > 0.0 ? shared / uni : 0.0;

  return std::clamp(0.5 * affinity + 0.5 * jaccard, 0.0, 1.0);
}

ConstantScorer::ConstantScorer(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw BuilderError("constant scorer: value must lie in [0, 1]");
  }
}

double ConstantScorer::score(const Utterance&, const Utterance&) { return value_; }

RemoteScorer::RemoteScorer(Options options) : options_(std::move(options)) {
  const std::string& url = options_.url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http") {
    throw BuilderError("remote scorer: url must start with http://, got '" + url + "'");
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    base_ = url;
    path_ = "/";
  } else {
    base_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
  if (base_.size() <= scheme_end + 3) throw BuilderError("remote scorer: url has no host");
  if (options_.timeout_seconds <= 0.0 || options_.retries < 0 || options_.backoff_seconds < 0.0) {
    throw BuilderError("remote scorer: timeout must be positive, retries/backoff non-negative");
  }
}

double RemoteScorer::fetch(const std::string& sentence_a, const std::string& sentence_b) {
  nlohmann::json body = {{"sentence_a", sentence_a}, {"sentence_b", sentence_b}};
  const std::string payload = body.dump();

  std::string last_failure = "no attempt made";
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      auto delay = options_.backoff_seconds * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    httplib::Client client(base_);
    auto timeout = std::chrono::duration<double>(options_.timeout_seconds);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
      last_failure = "transport error (" + httplib::to_string(res.error()) + ")";
      continue;
    }
    if (res->status != 200) {
      last_failure = "HTTP status " + std::to_string(res->status);
      continue;
    }
    // A well-formed reply that violates the protocol will not improve on
    // retry, so fail immediately.
    nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("score") || !reply["score"].is_number()) {
      throw ScorerError("remote scorer: malformed reply '" + res->body + "'");
    }
    double s = reply["score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ScorerError("remote scorer: score " + std::to_string(s) + " outside [0, 1]");
    }
    return s;
  }
  throw ScorerError("remote scorer: " + base_ + path_ + " failed after " +
                    std::to_string(options_.retries + 1) + " attempt(s): " + last_failure);
}

double RemoteScorer::score(const Utterance& a, const Utterance& b) {
  std::string sa = join(a.tokens, " "), sb = join(b.tokens, " ");
  std::string cache_key = sa + '\x1f' + sb;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(cache_key);
    if (it != cache_.end()) return it->second;
  }
  ++requests_;
  double s = fetch(sa, sb);
  std::lock_guard<std::mutex> lock(mu_);
  cache_.emplace(cache_key, s);
  return s;
}

std::unique_ptr<CoherenceScorer> make_scorer(const ScorerConfig& cfg) {
  if (cfg.kind == "constant") return std::make_unique<ConstantScorer>(cfg.constant_value);
  if (cfg.kind == "heuristic") {
    AffinityTable table;
    if (!cfg.affinity_path.empty()) table = AffinityTable::load_file(cfg.affinity_path);
    return std::make_unique<HeuristicScorer>(std::move(table), default_stopwords(),
                                             cfg.missing_affinity);
  }
  if (cfg.kind == "remote") {
    if (cfg.remote_url.empty()) throw BuilderError("remote scorer: no url configured");
    RemoteScorer::Options opt;
    opt.url = cfg.remote_url;
    opt.timeout_seconds = cfg.remote_timeout_seconds;
    opt.retries = cfg.remote_retries;
    opt.backoff_seconds = cfg.remote_backoff_seconds;
    return std::make_unique<RemoteScorer>(std::move(opt));
  }
  throw BuilderError("unknown scorer kind '" + cfg.kind +
                     "' (expected heuristic, constant, or remote)");
}

// ---------------------------------------------------------------------------
// Construction

void BuilderConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw BuilderError("builder: tau must lie in [0, 1]");
  if (intent_count_probs.empty()) throw BuilderError("builder: intent-count probabilities empty");
  double sum = 0.0;
  for (double p : intent_count_probs) {
    if (!(p >= 0.0)) throw BuilderError("builder: intent-count probabilities must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw BuilderError("builder: intent-count probabilities sum to " + std::to_string(sum) +
                       ", expected 1");
  }
  if (conjunctions.empty()) throw BuilderError("builder: conjunction pool empty");
  double wsum = 0.0;
  for (const auto& [text, w] : conjunctions) {
    (void)text;
    if (!(w >= 0.0)) throw BuilderError("builder: conjunction weights must be >= 0");
    wsum += w;
  }
  if (wsum <= 0.0) throw BuilderError("builder: conjunction weights sum to zero");
  if (max_candidate_scans < 1) throw BuilderError("builder: max candidate scans must be >= 1");
  if (n_threads < 1) throw BuilderError("builder: thread count must be >= 1");
}

void write_audit_log(const std::vector<AuditEntry>& entries, std::ostream& out) {
  char buf[128];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%d", e.utterance_id, e.candidate_id, e.score,
                  e.accepted ? 1 : 0);
    out << buf << '\n';
  }
}

Utterance concat_samples(const Utterance& left, const Utterance& right,
                         const std::string& conjunction) {
  if (left.tokens.size() != left.bio_tags.size() ||
      right.tokens.size() != right.bio_tags.size()) {
    throw BuilderError("concat: token/tag count mismatch");
  }
  for (const auto& intent : right.intents) {
    if (std::find(left.intents.begin(), left.intents.end(), intent) != left.intents.end()) {
      throw BuilderError("concat: intent '" + intent + "' present on both sides");
    }
  }

  std::vector<std::string> conj_tokens;
  for (const auto& w : split(conjunction, ' ')) {
    if (!w.empty()) conj_tokens.push_back(w);
  }

  Utterance merged;
  merged.tokens = left.tokens;
  merged.tokens.insert(merged.tokens.end(), conj_tokens.begin(), conj_tokens.end());
  merged.tokens.insert(merged.tokens.end(), right.tokens.begin(), right.tokens.end());

  merged.bio_tags = left.bio_tags;
  merged.bio_tags.insert(merged.bio_tags.end(), conj_tokens.size(), "O");
  merged.bio_tags.insert(merged.bio_tags.end(), right.bio_tags.begin(), right.bio_tags.end());

  merged.intents = left.intents;
  merged.intents.insert(merged.intents.end(), right.intents.begin(), right.intents.end());

  // Shifting whole suffixes cannot interleave spans, but a malformed input
  // could smuggle a violation through; re-check the merged tags.
  std::string problem = check_bio(merged.bio_tags);
  if (!problem.empty()) throw BuilderError("concat: merged tags malformed: " + problem);
  return merged;
}

namespace {

// Everything produced while deriving one output utterance, kept separate per
// source index so multi-threaded builds merge back in deterministic order.
struct Derivation {
  Utterance result;
  std::vector<AuditEntry> audit;
  std::vector<std::string> notes;
  int shortfalls = 0;
};

Derivation derive_one(int index, const std::vector<Utterance>& source, const BuilderConfig& cfg,
                      CoherenceScorer& scorer) {
  Derivation d;
  std::mt19937_64 rng = split_rng(cfg.seed, static_cast<std::uint64_t>(index));

  std::discrete_distribution<int> count_dist(cfg.intent_count_probs.begin(),
                                             cfg.intent_count_probs.end());
  int n = 1 + count_dist(rng);

  std::vector<double> conj_weights;
  conj_weights.reserve(cfg.conjunctions.size());
  for (const auto& [text, w] : cfg.conjunctions) {
    (void)text;
    conj_weights.push_back(w);
  }

  d.result = source[index];
  while (n > 1) {
    std::unordered_set<std::string> used(d.result.intents.begin(), d.result.intents.end());
    std::vector<int> candidates;
    candidates.reserve(source.size());
    for (int j = 0; j < static_cast<int>(source.size()); ++j) {
      if (used.count(source[j].intents[0]) == 0) candidates.push_back(j);
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (candidates.size() > static_cast<std::size_t>(cfg.max_candidate_scans)) {
      candidates.resize(static_cast<std::size_t>(cfg.max_candidate_scans));
    }

    bool accepted = false;
    for (int j : candidates) {
      double s = 0.0;
      bool scored = false;
      for (int attempt = 0; attempt < 2 && !scored; ++attempt) {
        try {
          s = scorer.score(d.result, source[j]);
          scored = true;
        } catch (const ScorerError& e) {
          if (attempt == 1) {
            d.notes.push_back("utterance " + std::to_string(index) + ": candidate " +
                              std::to_string(j) + " skipped, scorer failed twice: " + e.what());
          }
        }
      }
      if (!scored) continue;
      if (!(s >= 0.0 && s <= 1.0)) {
        d.notes.push_back("utterance " + std::to_string(index) + ": candidate " +
                          std::to_string(j) + " skipped, score " + std::to_string(s) +
                          " outside [0, 1]");
        continue;
      }
      bool pass = s > cfg.tau;
      d.audit.push_back({index, j, s, pass});
      if (pass) {
        std::discrete_distribution<int> conj_dist(conj_weights.begin(), conj_weights.end());
        const std::string& conj = cfg.conjunctions[conj_dist(rng)].first;
        d.result = concat_samples(d.result, source[j], conj);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      ++d.shortfalls;
      d.notes.push_back("utterance " + std::to_string(index) + ": no candidate passed tau=" +
                        std::to_string(cfg.tau) + " within " +
                        std::to_string(candidates.size()) + " scans; emitting with " +
                        std::to_string(d.result.intents.size()) + " intent(s) so far");
    }
    --n;
  }
  return d;
}

}  // namespace

std::vector<Utterance> build(const std::vector<Utterance>& source, const BuilderConfig& cfg,
                             CoherenceScorer& scorer, BuildReport* report) {
  cfg.validate();
  if (source.empty()) throw BuilderError("builder: source corpus is empty");
  std::unordered_set<std::string> distinct;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i].intents.size() != 1) {
      throw BuilderError("builder: source utterance " + std::to_string(i) + " has " +
                         std::to_string(source[i].intents.size()) + " intents, expected 1");
    }
    distinct.insert(source[i].intents[0]);
  }
  if (distinct.size() < 2) {
    throw BuilderError("builder: source corpus needs at least 2 distinct intents, found " +
                       std::to_string(distinct.size()));
  }

  const int n = static_cast<int>(source.size());
  std::vector<Derivation> derived(static_cast<std::size_t>(n));

  int workers = std::min(cfg.n_threads, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) derived[static_cast<std::size_t>(i)] = derive_one(i, source, cfg, scorer);
  } else {
    std::atomic<int> next{0};
    std::mutex error_mu;
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto worker = [&] {
      while (!failed.load()) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          derived[static_cast<std::size_t>(i)] = derive_one(i, source, cfg, scorer);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(n));
  for (auto& d : derived) {
    auto problems = check_utterance(d.result);
    if (!problems.empty()) {
      throw BuilderError("builder: produced an invalid utterance: " + problems.front());
    }
    out.push_back(std::move(d.result));
    if (report != nullptr) {
      report->audit.insert(report->audit.end(), d.audit.begin(), d.audit.end());
      report->notes.insert(report->notes.end(), d.notes.begin(), d.notes.end());
      report->shortfalls += d.shortfalls;
    }
  }

  if (cfg.dedup) {
    std::unordered_set<std::string> seen;
    std::vector<Utterance> unique;
    unique.reserve(out.size());
    for (auto& u : out) {
      std::string key = join(u.tokens, "\x1f") + '\x1e' + join(u.bio_tags, "\x1f") + '\x1e' +
                        join(u.intents, "\x1f");
      if (seen.insert(std::move(key)).second) unique.push_back(std::move(u));
    }
    out = std::move(unique);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Co-occurrence analysis

Cooccurrence cooccurrence_matrix(const std::vector<Utterance>& corpus) {
  Cooccurrence c;
  std::set<std::string> names;
  for (const auto& u : corpus) names.insert(u.intents.begin(), u.intents.end());
  c.intents.assign(names.begin(), names.end());
  const int k = static_cast<int>(c.intents.size());
  std::unordered_map<std::string, int> index;
  for (int i = 0; i < k; ++i) index[c.intents[static_cast<std::size_t>(i)]] = i;

  c.counts.assign(static_cast<std::size_t>(k), std::vector<long long>(static_cast<std::size_t>(k), 0));
  for (const auto& u : corpus) {
    for (std::size_t a = 0; a < u.intents.size(); ++a) {
      for (std::size_t b = a + 1; b < u.intents.size(); ++b) {
        int ia = index.at(u.intents[a]), ib = index.at(u.intents[b]);
        if (ia == ib) continue;  // duplicate intents are invalid upstream; stay off the diagonal
        ++c.counts[static_cast<std::size_t>(ia)][static_cast<std::size_t>(ib)];
        ++c.counts[static_cast<std::size_t>(ib)][static_cast<std::size_t>(ia)];
      }
    }
  }

  c.row_chi2.assign(static_cast<std::size_t>(k), 0.0);
  c.row_p.assign(static_cast<std::size_t>(k), 1.0);
  const int dof = k - 2;
  for (int i = 0; i < k; ++i) {
    long long row_sum = 0;
    for (int j = 0; j < k; ++j) {
      if (j != i) row_sum += c.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    if (row_sum == 0 || dof < 1) continue;
    double expected = static_cast<double>(row_sum) / (k - 1);
    double chi2 = 0.0;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      double diff = c.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - expected;
      chi2 += diff * diff / expected;
    }
    c.row_chi2[static_cast<std::size_t>(i)] = chi2;
    c.row_p[static_cast<std::size_t>(i)] = chi2_sf(chi2, dof);
  }
  return c;
}

std::string Cooccurrence::to_text() const {
  std::ostringstream out;
  std::size_t width = 6;
  for (const auto& name : intents) width = std::max(width, name.size());
  out << "# pairwise intent co-occurrence counts (within-utterance)\n";
  out << std::left << std::setw(static_cast<int>(width) + 2) << "intent";
  for (const auto& name : intents) out << std::setw(static_cast<int>(width) + 2) << name;
  out << '\n';
  for (std::size_t i = 0; i < intents.size(); ++i) {
    out << std::setw(static_cast<int>(width) + 2) << intents[i];
    for (std::size_t j = 0; j < intents.size(); ++j) {
      out << std::setw(static_cast<int>(width) + 2) << counts[i][j];
    }
    out << '\n';
  }
  out << "# per-row fit against a uniform spread over the other intents\n";
  for (std::size_t i = 0; i < intents.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "chi2=%.4f p=%.6g", row_chi2[i], row_p[i]);
    out << intents[i] << ": " << buf << '\n';
  }
  return out.str();
}

}  // namespace gslu
