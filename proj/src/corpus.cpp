#include "gslu/corpus.hpp"

#include "gslu/util.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

namespace gslu {

Tokenizer::Tokenizer(bool lowercase) : lowercase_(lowercase) {
  for (const char* s : {"<pad>", "<unk>", "<sos>", "<eos>"}) add_word(s);
}

std::string Tokenizer::norm(const std::string& w) const {
  return lowercase_ ? lowercase(w) : w;
}

Tokenizer Tokenizer::from_corpus(const std::vector<Utterance>& corpus, bool lc) {
  Tokenizer tok(lc);
  for (const auto& u : corpus)
    for (const auto& t : u.tokens) tok.add_word(tok.norm(t));
  return tok;
}

int Tokenizer::add_word(const std::string& word) {
  auto it = ids_.find(word);
  if (it != ids_.end()) return it->second;
  int id = size();
  ids_[word] = id;
  words_.push_back(word);
  return id;
}

int Tokenizer::id(const std::string& word) const {
  auto it = ids_.find(norm(word));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= size()) throw CorpusError("token id out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void Tokenizer::save(std::ostream& out) const {
  out << "lowercase\t" << (lowercase_ ? 1 : 0) << "\n";
  for (const auto& w : words_) out << w << "\n";
}

Tokenizer Tokenizer::load(std::istream& in, const std::string& stop_line) {
  std::string line;
  if (!std::getline(in, line)) throw CorpusError("tokenizer stream is empty");
  auto parts = split(line, '\t');
  if (parts.size() != 2 || parts[0] != "lowercase")
    throw CorpusError("tokenizer stream missing lowercase header");
  Tokenizer tok(parts[1] == "1");
  int expected = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!stop_line.empty() && line == stop_line) break;
    if (line.empty()) continue;
    if (expected < 4) {
      // special rows are created by the constructor; verify order only
      if (line != tok.word(expected))
        throw CorpusError("tokenizer specials out of order: " + line);
    } else {
      tok.add_word(line);
    }
    ++expected;
  }
  return tok;
}

std::string LintReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) os << "line " << e.line << ": " << e.message << "\n";
  return os.str();
}

namespace {

constexpr const char* kIntentMarker = "#intents";

void flush_record(std::vector<Utterance>& out, Utterance& u, bool& has_terminator,
                  int first_line, LintReport* lint, bool strict) {
  if (u.tokens.empty() && !has_terminator) return;  // nothing buffered
  if (!has_terminator)
    throw CorpusError("record starting at line " + std::to_string(first_line) +
                      " has no " + kIntentMarker + " terminator");
  std::string bio = u.bio_tags.size() == u.tokens.size() ? check_bio(u.bio_tags)
                                                         : std::string();
  if (!bio.empty()) {
    if (strict)
      throw CorpusError("record starting at line " + std::to_string(first_line) + ": " + bio);
    if (lint) lint->entries.push_back({first_line, bio});
  } else {
    out.push_back(std::move(u));
  }
  u = Utterance{};
  has_terminator = false;
}

}  // namespace

std::vector<Utterance> read_corpus_stream(std::istream& in, LintReport* lint, bool strict) {
  std::vector<Utterance> out;
  Utterance cur;
  bool has_terminator = false;
  int line_no = 0, first_line = 1;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush_record(out, cur, has_terminator, first_line, lint, strict);
      first_line = line_no + 1;
      continue;
    }
    if (has_terminator)
      throw CorpusError("line " + std::to_string(line_no) +
                        ": content after intent terminator without a blank line");
    auto parts = split(line, '\t');
    if (parts.size() != 2)
      throw CorpusError("line " + std::to_string(line_no) +
                        ": expected exactly one tab separator");
    if (parts[0] == kIntentMarker) {
      if (cur.tokens.empty())
        throw CorpusError("line " + std::to_string(line_no) + ": record has no tokens");
      if (!parts[1].empty())
        for (auto& name : split(parts[1], '#')) {
          if (name.empty())
            throw CorpusError("line " + std::to_string(line_no) + ": empty intent label");
          cur.intents.push_back(name);
        }
      has_terminator = true;
    } else {
      if (parts[0].empty() || parts[1].empty())
        throw CorpusError("line " + std::to_string(line_no) + ": empty token or tag");
      cur.tokens.push_back(parts[0]);
      cur.bio_tags.push_back(parts[1]);
    }
  }
  if (!cur.tokens.empty() || has_terminator)
    flush_record(out, cur, has_terminator, first_line, lint, strict);
  if (out.empty() && (!lint || lint->clean()))
    std::cerr << "warning: corpus is empty\n";
  return out;
}

std::vector<Utterance> read_corpus(const std::string& path, LintReport* lint, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file: " + path);
  return read_corpus_stream(in, lint, strict);
}

void write_corpus_stream(const std::vector<Utterance>& corpus, std::ostream& out) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& u = corpus[i];
    if (u.bio_tags.size() != u.tokens.size())
      throw CorpusError("utterance " + std::to_string(i) + ": tag/token count mismatch");
    for (std::size_t t = 0; t < u.tokens.size(); ++t)
      out << u.tokens[t] << "\t" << u.bio_tags[t] << "\n";
    out << kIntentMarker << "\t" << join(u.intents, "#") << "\n";
    if (i + 1 < corpus.size()) out << "\n";
  }
}

void write_corpus(const std::vector<Utterance>& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot open file for writing: " + path);
  write_corpus_stream(corpus, out);
  if (!out) throw CorpusError("write failed: " + path);
}

void apply_tokenizer(std::vector<Utterance>& corpus, const Tokenizer& tok) {
  for (auto& u : corpus) u.token_ids = tok.encode(u.tokens);
}

}  // namespace gslu
