// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay:
//   param <- param * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   param <- param - lr * m_hat / (sqrt(v_hat) + eps)
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace srcid {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct OptimizerState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::uint64_t step_count = 0;

  bool operator==(const OptimizerState&) const = default;
};

/// One AdamW update. The state is sized on first use and must stay congruent
/// with `params` afterwards. Throws DimensionError on shape mismatch and
/// ValidationError on a non-finite gradient (parameters untouched).
void adamw_step(std::span<const std::span<float>> params,
                std::span<const std::span<const float>> grads, OptimizerState& state,
                const OptimizerConfig& config);

}  // namespace srcid
