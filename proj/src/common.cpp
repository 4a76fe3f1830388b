#include "tokenforce/common.hpp"

#include <algorithm>
#include <numeric>

namespace tokenforce {

std::vector<int> top_k_indices(const Eigen::Ref<const Vector>& values, int k) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  return top_k_indices(values, idx, k);
}

std::vector<int> top_k_indices(const Eigen::Ref<const Vector>& values,
                               std::span<const int> candidates, int k) {
  std::vector<int> idx(candidates.begin(), candidates.end());
  k = std::min<int>(k, static_cast<int>(idx.size()));
  if (k < 0) k = 0;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int a, int b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

int sample_index(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail_input("sample_index: negative or NaN weight");
    total += w;
  }
  require(total > 0.0, "sample_index: weights sum to zero");
  std::uniform_real_distribution<double> unit(0.0, total);
  double u = unit(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;  // u landed on the total
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t salt) {
  return splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ salt);
}

}  // namespace tokenforce
