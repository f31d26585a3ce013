// SPDX-License-Identifier: Apache-2.0
#include "srcid/optimizer.hpp"

#include <cmath>
#include <string>

#include "srcid/errors.hpp"
#include "srcid/matrix.hpp"

namespace srcid {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw ValidationError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ValidationError("beta2 must be in [0, 1)");
  if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (!(weight_decay >= 0)) throw ValidationError("weight_decay must be non-negative");
}

void adamw_step(std::span<const std::span<float>> params,
                std::span<const std::span<const float>> grads, OptimizerState& state,
                const OptimizerConfig& config) {
  config.validate();
  if (params.size() != grads.size()) {
    throw DimensionError("got " + std::to_string(grads.size()) + " gradient tensors for " +
                         std::to_string(params.size()) + " parameter tensors");
  }
  if (state.first_moment.empty() && state.step_count == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0f);
      state.second_moment.emplace_back(p.size(), 0.0f);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("optimizer state is not congruent with the parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.first_moment[i].size() != params[i].size() ||
        state.second_moment[i].size() != params[i].size()) {
      throw DimensionError("tensor " + std::to_string(i) + " shape mismatch in optimizer step");
    }
    if (!all_finite(grads[i])) {
      throw ValidationError("non-finite gradient in tensor " + std::to_string(i));
    }
  }

  const std::uint64_t t = ++state.step_count;
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const float decay = static_cast<float>(1.0 - config.learning_rate * config.weight_decay);
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float step_size = static_cast<float>(config.learning_rate / bias1);
  const float inv_sqrt_bias2 = static_cast<float>(1.0 / std::sqrt(bias2));
  const float eps = static_cast<float>(config.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].data();
    const float* g = grads[i].data();
    float* m = state.first_moment[i].data();
    float* v = state.second_moment[i].data();
    const std::size_t n = params[i].size();
    for (std::size_t k = 0; k < n; ++k) {
      p[k] *= decay;
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bias2 + eps);
    }
  }
}

}  // namespace srcid
