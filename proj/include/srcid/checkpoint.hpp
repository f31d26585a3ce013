// SPDX-License-Identifier: Apache-2.0
//
// Prober checkpoints. Little-endian container:
//   "SIDP" | u32 version=1 | u8 size_class | u32 input_dim | u32 num_docs
//   | u64 init_seed | u32 ngram | u16 len + layer_tag | u32 hidden_dim
//   | u32 layer_count | per layer: u32 out, u32 in, out*in f32 weight, out f32 bias
//   [ "SIDO" | u64 step_count | u32 tensor_count
//     | per tensor: u64 len, len f32 first moment, len f32 second moment ]
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "srcid/optimizer.hpp"
#include "srcid/prober.hpp"

namespace srcid {

/// Feature layout the prober was trained on.
struct FeatureBinding {
  std::uint32_t ngram = 1;
  std::string layer_tag;
  std::uint32_t hidden_dim = 0;

  bool operator==(const FeatureBinding&) const = default;
};

struct Checkpoint {
  Prober prober;
  FeatureBinding features;
  std::optional<OptimizerState> optimizer;
};

std::string encode_checkpoint(const Prober& prober, const FeatureBinding& features,
                              const OptimizerState* optimizer = nullptr);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Prober& prober,
                     const FeatureBinding& features, const OptimizerState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace srcid
