#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gslu {

// Deterministic per-item generator split from a master seed, stable under
// any scheduling of the items.
inline std::mt19937_64 split_rng(std::uint64_t master_seed, std::uint64_t index) {
  std::seed_seq seq{master_seed, index, std::uint64_t{0x9e3779b97f4a7c15ULL}};
  return std::mt19937_64(seq);
}

std::string lowercase(const std::string& s);
std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

// SHA-1 in the git blob form: sha1("blob <len>\0" + content), hex digest.
std::string sha1_hex(const void* data, std::size_t len);
std::string git_blob_hash(const std::string& content);
std::string git_blob_hash_file(const std::string& path);

// Regularized incomplete gamma Q(a, x) = Gamma(a,x)/Gamma(a), a > 0, x >= 0.
double gamma_q(double a, double x);

// Survival function of the chi-squared distribution with dof degrees of freedom.
double chi2_sf(double x, int dof);

}  // namespace gslu
