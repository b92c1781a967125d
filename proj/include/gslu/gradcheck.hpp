#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gslu {

// Finite-difference audit of the training loss. A small double-precision
// model is built from scratch, the full loss (encoder, decoder, pointer
// head, batch padding) is differentiated once analytically, and a sampled
// set of entries in every parameter tensor is then re-derived by central
// differences for comparison.
struct GradCheckOptions {
  int d = 16;
  int n_heads = 4;
  int n_layers = 2;   // encoder and decoder depth
  int n_words = 6;    // words per synthetic sample, before the sentinel
  double h = 1e-5;
  double tolerance = 1e-4;
  int entries_per_tensor = 6;  // <= 0 checks every entry
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string tensor;
  int row = 0, col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  std::string worst_tensor;
  long long entries_checked = 0;
  double seconds = 0.0;
  std::vector<GradCheckEntry> per_tensor;  // worst entry of each tensor
  std::string to_text() const;
};

GradCheckReport run_gradcheck(const GradCheckOptions& opts = {});

}  // namespace gslu
