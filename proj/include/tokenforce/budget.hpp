#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tokenforce {

using Flops = std::int64_t;

/// Kaplan-approximation compute cost of a forward pass over `tokens` sequence
/// tokens, batched `batch` times: batch * 2 * N * tokens.
Flops cost_forward(std::int64_t n_nonembed, std::int64_t tokens,
                   std::int64_t batch = 1);

/// Backward counterpart: batch * 4 * N * tokens. A gradient computation
/// charges cost_forward + cost_backward.
Flops cost_backward(std::int64_t n_nonembed, std::int64_t tokens,
                    std::int64_t batch = 1);

/// Hard per-run compute budget. Work is admitted whole: callers project the
/// cost of the next step, try_charge it, and only then run the model.
class FlopMeter {
 public:
  FlopMeter(std::int64_t n_nonembed, Flops limit);

  Flops forward_cost(std::int64_t tokens, std::int64_t batch = 1) const {
    return cost_forward(n_nonembed_, tokens, batch);
  }
  Flops backward_cost(std::int64_t tokens, std::int64_t batch = 1) const {
    return cost_backward(n_nonembed_, tokens, batch);
  }

  /// Accept the charge iff used + cost <= limit. Boundary is inclusive.
  bool try_charge(Flops cost);

  Flops used() const { return used_; }
  Flops limit() const { return limit_; }
  std::int64_t n_nonembed() const { return n_nonembed_; }
  double progress() const {
    return static_cast<double>(used_) / static_cast<double>(limit_);
  }

  /// Every accepted charge in order; replaying the log reproduces used().
  const std::vector<Flops>& charges() const { return charges_; }

 private:
  std::int64_t n_nonembed_;
  Flops limit_;
  Flops used_ = 0;
  std::vector<Flops> charges_;
};

}  // namespace tokenforce
