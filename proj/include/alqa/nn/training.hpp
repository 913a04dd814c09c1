#pragma once

#include <cstdint>
#include <functional>

namespace alqa::nn {

struct EpochPlan {
  std::size_t batch_size = 24;
  std::function<double(std::size_t)> learning_rate;  // by global optimizer step
  std::size_t first_step = 0;
  double anchor_decay = 0.0;
  std::uint64_t seed = 0;
};

struct EpochResult {
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

}  // namespace alqa::nn
