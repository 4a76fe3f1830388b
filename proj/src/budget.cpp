#include "tokenforce/budget.hpp"

#include "tokenforce/common.hpp"

namespace tokenforce {

Flops cost_forward(std::int64_t n_nonembed, std::int64_t tokens,
                   std::int64_t batch) {
  require(n_nonembed >= 1, "cost_forward: n_nonembed must be >= 1");
  require(tokens >= 1, "cost_forward: token count must be >= 1");
  require(batch >= 1, "cost_forward: batch must be >= 1");
  return batch * 2 * n_nonembed * tokens;
}

Flops cost_backward(std::int64_t n_nonembed, std::int64_t tokens,
                    std::int64_t batch) {
  require(n_nonembed >= 1, "cost_backward: n_nonembed must be >= 1");
  require(tokens >= 1, "cost_backward: token count must be >= 1");
  require(batch >= 1, "cost_backward: batch must be >= 1");
  return batch * 4 * n_nonembed * tokens;
}

FlopMeter::FlopMeter(std::int64_t n_nonembed, Flops limit)
    : n_nonembed_(n_nonembed), limit_(limit) {
  require(n_nonembed >= 1, "FlopMeter: n_nonembed must be >= 1");
  require(limit >= 1, "FlopMeter: limit must be positive");
}

bool FlopMeter::try_charge(Flops cost) {
  require(cost >= 0, "FlopMeter: negative charge");
  if (cost > limit_ - used_) return false;
  used_ += cost;
  charges_.push_back(cost);
  return true;
}

}  // namespace tokenforce
