#pragma once

#include "gslu/grammar.hpp"

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace gslu {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Word-level vocabulary with fixed special ids. Built once from the training
// split, then frozen; unseen words map to the unknown id.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;

  explicit Tokenizer(bool lowercase = true);

  static Tokenizer from_corpus(const std::vector<Utterance>& corpus, bool lowercase = true);

  int add_word(const std::string& word);  // returns existing id if present
  int id(const std::string& word) const;  // kUnk when absent
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  bool lowercasing() const { return lowercase_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  void save(std::ostream& out) const;
  // Reads until end of stream, or until (and consuming) `stop_line` when one
  // is given — used when the word list is embedded in a larger file.
  static Tokenizer load(std::istream& in, const std::string& stop_line = std::string());

 private:
  bool lowercase_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::string norm(const std::string& w) const;
};

// One ingestion problem: the record's first line number and a description.
struct LintEntry {
  int line = 0;
  std::string message;
};

struct LintReport {
  std::vector<LintEntry> entries;
  bool clean() const { return entries.empty(); }
  std::string to_string() const;
};

// Parses the corpus format: per sample one "token<TAB>tag" line per token,
// a "#intents<TAB>I1#I2" terminator line, blank line between samples.
// Malformed records throw with a line number; BIO violations are linted and
// the record skipped (or thrown in strict mode). Token ids are left empty;
// apply a Tokenizer afterwards.
std::vector<Utterance> read_corpus(const std::string& path, LintReport* lint = nullptr,
                                   bool strict = false);
std::vector<Utterance> read_corpus_stream(std::istream& in, LintReport* lint = nullptr,
                                          bool strict = false);

void write_corpus(const std::vector<Utterance>& corpus, const std::string& path);
void write_corpus_stream(const std::vector<Utterance>& corpus, std::ostream& out);

// Fills token_ids on every utterance in place.
void apply_tokenizer(std::vector<Utterance>& corpus, const Tokenizer& tok);

}  // namespace gslu
