#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tokenforce {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

/// Argmax with ties broken toward the lowest index.
inline int argmax_lowest(const Eigen::Ref<const Vector>& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Indices of the k largest entries, ranked by (value desc, index asc).
/// k larger than the candidate count returns all candidates.
std::vector<int> top_k_indices(const Eigen::Ref<const Vector>& values, int k);

/// Same, but restricted to the given candidate indices.
std::vector<int> top_k_indices(const Eigen::Ref<const Vector>& values,
                               std::span<const int> candidates, int k);

/// Draw an index from unnormalized non-negative weights.
int sample_index(std::span<const double> weights, Rng& rng);

/// FNV-1a over a byte string; used to derive per-run seeds from string keys.
std::uint64_t fnv1a64(std::string_view bytes);

/// Stateless mix of (seed, stream, salt) into a fresh generator seed, so each
/// step of an attack owns an independent, replayable stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t salt);

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

[[noreturn]] inline void fail_input(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail_input(msg);
}

}  // namespace tokenforce
