// SPDX-License-Identifier: Apache-2.0
//
// Source identifier: an MLP mapping an n-gram window of hidden vectors to one
// logit per document. Hidden layers use ReLU; the output layer is affine.
// Per-document probabilities are independent sigmoids (multi-label head).
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srcid/matrix.hpp"

namespace srcid {

enum class SizeClass : std::uint8_t { linear = 0, tiny = 1, small = 2, medium = 3, large = 4 };

inline constexpr SizeClass kAllSizeClasses[] = {SizeClass::linear, SizeClass::tiny,
                                               SizeClass::small, SizeClass::medium,
                                               SizeClass::large};

/// linear: none, tiny: 128, small: 128-256, medium: 128-256-512,
/// large: 128-256-512-1024.
std::vector<std::uint32_t> hidden_widths(SizeClass size);
const char* to_string(SizeClass size);
SizeClass parse_size_class(std::string_view name);

struct ProberConfig {
  SizeClass size_class = SizeClass::medium;
  std::uint32_t input_dim = 0;
  std::uint32_t num_docs = 0;
  std::uint64_t init_seed = 0;

  void validate() const;
};

/// Affine layer, weight stored row-major as out x in.
struct DenseLayer {
  std::uint32_t in = 0;
  std::uint32_t out = 0;
  FloatBuffer weight;
  FloatBuffer bias;

  bool operator==(const DenseLayer&) const = default;
};

struct GradientSet {
  std::vector<DenseLayer> layers;

  /// weight, bias, weight, bias, ... in layer order.
  std::vector<std::span<const float>> spans() const;
  bool all_zero() const;
};

class Prober;

/// Intermediates of one forward pass, consumed by Prober::backward.
struct ForwardCache {
  const Prober* owner = nullptr;
  std::uint64_t version = 0;
  Matrix input;
  std::vector<Matrix> outputs;  // per layer, after its activation
};

class Prober {
public:
  /// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
  explicit Prober(const ProberConfig& config);

  /// Wraps existing parameters; throws DimensionError unless the layers chain
  /// input_dim -> hidden widths -> num_docs.
  Prober(const ProberConfig& config, std::vector<DenseLayer> layers);

  const ProberConfig& config() const { return config_; }
  std::uint32_t input_dim() const { return config_.input_dim; }
  std::uint32_t num_docs() const { return config_.num_docs; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  /// Mutable access invalidates outstanding forward caches.
  DenseLayer& mutable_layer(std::size_t i);
  std::vector<std::span<float>> mutable_parameters();
  std::vector<std::span<const float>> parameters() const;

  Matrix forward(const Matrix& batch) const;
  Matrix forward(const Matrix& batch, ForwardCache& cache) const;

  /// Gradients of the loss w.r.t. every parameter given dloss/dlogits.
  /// Throws Error when `cache` was not produced by this prober's current
  /// parameters.
  GradientSet backward(const ForwardCache& cache, const Matrix& dlogits) const;

  Matrix predict_proba(const Matrix& batch) const;

  bool operator==(const Prober& other) const {
    return config_.size_class == other.config_.size_class &&
           config_.input_dim == other.config_.input_dim &&
           config_.num_docs == other.config_.num_docs && layers_ == other.layers_;
  }

private:
  void check_batch(const Matrix& batch) const;

  ProberConfig config_;
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

inline Prober init(const ProberConfig& config) { return Prober(config); }

double sigmoid(double z);

/// Elementwise sigmoid.
Matrix sigmoid(const Matrix& logits);

struct BceResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean binary cross entropy over all B x num_docs entries, in the stable
/// logit form max(z,0) - z*y + log1p(exp(-|z|)). dlogits = (sigmoid(z) - y) /
/// (B * num_docs). Targets must be exactly 0 or 1.
BceResult bce_loss_and_grad(const Matrix& logits, const Matrix& targets);

/// Same with one-hot targets given as document ids.
BceResult bce_loss_and_grad(const Matrix& logits, std::span<const std::uint32_t> target_docs);

}  // namespace srcid
