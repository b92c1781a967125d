#include "gslu/gradcheck.hpp"

#include "gslu/trainer.hpp"
#include "gslu/util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <unordered_set>

namespace gslu {

namespace {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

// A fixed two-sample batch over a tiny closed vocabulary: one single-intent
// and one two-intent utterance, each opts.n_words long, with spans placed to
// exercise both pointer positions and category labels.
std::vector<Sample> synthetic_batch(const GradCheckOptions& opts, LabelVocabulary& vocab) {
  const int n = std::max(3, opts.n_words);
  std::mt19937_64 rng = split_rng(opts.seed, 0xFDu);

  std::vector<Utterance> corpus;
  for (int which = 0; which < 2; ++which) {
    // One word shorter on the first sample so the batch goes through the
    // padded-loss path.
    const int len = which == 0 ? n - 1 : n;
    Utterance u;
    for (int i = 0; i < len; ++i) u.tokens.push_back("w" + std::to_string(rng() % 12));
    if (which == 0) {
      u.intents = {"i0"};
      u.bio_tags = bio_from_spans({{0, 2, "s0"}}, len);
    } else {
      u.intents = {"i0", "i1"};
      u.bio_tags = bio_from_spans({{0, 1, "s1"}, {len - 2, len, "s0"}}, len);
    }
    corpus.push_back(std::move(u));
  }

  vocab = LabelVocabulary::from_corpus(corpus);
  Tokenizer tok = Tokenizer::from_corpus(corpus);
  apply_tokenizer(corpus, tok);
  return prepare_samples(corpus, vocab);
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  const auto started = std::chrono::steady_clock::now();

  LabelVocabulary vocab;
  auto batch = synthetic_batch(opts, vocab);

  ModelConfig cfg;
  cfg.d = opts.d;
  cfg.n_heads = opts.n_heads;
  cfg.n_enc_layers = opts.n_layers;
  cfg.n_dec_layers = opts.n_layers;
  cfg.d_ff = 2 * opts.d;
  cfg.vocab_size = 32;
  cfg.n_intents = vocab.n_intents();
  cfg.n_slots = vocab.n_slots();
  cfg.max_len = 4 * (opts.n_words + 2);
  cfg.dropout_p = 0.0;

  auto params = ModelParams<double>::init(cfg, opts.seed);
  std::mt19937_64 rng(0);

  auto loss_value = [&] {
    Tape<double> tape;
    return teacher_forcing_loss(batch, params, &tape, rng, false).item();
  };

  params.zero_grads();
  {
    Tape<double> tape;
    auto loss = teacher_forcing_loss(batch, params, &tape, rng, false);
    tape.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = opts.tolerance;

  for (std::size_t ti = 0; ti < params.order.size(); ++ti) {
    const std::string& name = params.order[ti];
    Mat<double>& value = *params.val.at(name);
    const Mat<double>& grad = *params.grad.at(name);
    const long long total = static_cast<long long>(value.size());

    std::vector<long long> picks;
    if (opts.entries_per_tensor <= 0 || total <= opts.entries_per_tensor) {
      picks.resize(static_cast<std::size_t>(total));
      for (long long i = 0; i < total; ++i) picks[static_cast<std::size_t>(i)] = i;
    } else {
      std::mt19937_64 pick_rng = split_rng(opts.seed, 0x100u + ti);
      std::uniform_int_distribution<long long> dist(0, total - 1);
      std::unordered_set<long long> seen;
      while (seen.size() < static_cast<std::size_t>(opts.entries_per_tensor))
        seen.insert(dist(pick_rng));
      picks.assign(seen.begin(), seen.end());
      std::sort(picks.begin(), picks.end());
    }

    GradCheckEntry worst;
    worst.tensor = name;
    worst.rel_err = -1.0;
    for (long long flat : picks) {
      const int r = static_cast<int>(flat % value.rows());
      const int c = static_cast<int>(flat / value.rows());
      const double keep = value(r, c);
      value(r, c) = keep + opts.h;
      const double up = loss_value();
      value(r, c) = keep - opts.h;
      const double dn = loss_value();
      value(r, c) = keep;
      const double numeric = (up - dn) / (2.0 * opts.h);
      const double analytic = grad(r, c);
      const double err = relative_error(analytic, numeric);
      ++report.entries_checked;
      if (err > worst.rel_err) {
        worst.row = r;
        worst.col = c;
        worst.analytic = analytic;
        worst.numeric = numeric;
        worst.rel_err = err;
      }
    }
    report.per_tensor.push_back(worst);
    if (worst.rel_err > report.max_rel_err) {
      report.max_rel_err = worst.rel_err;
      report.worst_tensor = name;
    }
  }

  report.passed = report.max_rel_err < opts.tolerance;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::string GradCheckReport::to_text() const {
  std::ostringstream out;
  char buf[160];
  for (const auto& e : per_tensor) {
    std::snprintf(buf, sizeof(buf), "%-22s (%d,%d) analytic=% .9e numeric=% .9e rel_err=%.3e",
                  e.tensor.c_str(), e.row, e.col, e.analytic, e.numeric, e.rel_err);
    out << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf),
                "max relative error %.6e over %lld entries (tolerance %.1e) in %.2fs: %s",
                max_rel_err, entries_checked, tolerance, seconds, passed ? "PASS" : "FAIL");
  out << buf << '\n';
  return out.str();
}

}  // namespace gslu
