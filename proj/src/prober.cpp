// SPDX-License-Identifier: Apache-2.0
#include "srcid/prober.hpp"

#include <cmath>

#include <Eigen/Core>

#include "srcid/errors.hpp"
#include "srcid/rng.hpp"

namespace srcid {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXf>;

ConstMapMat view(const Matrix& m) {
  return ConstMapMat(m.data.data(), static_cast<Eigen::Index>(m.rows),
                     static_cast<Eigen::Index>(m.cols));
}
MapMat view(Matrix& m) {
  return MapMat(m.data.data(), static_cast<Eigen::Index>(m.rows),
                static_cast<Eigen::Index>(m.cols));
}
ConstMapMat weight_view(const DenseLayer& l) {
  return ConstMapMat(l.weight.data(), l.out, l.in);
}

// out = in * W^T + b, optionally rectified.
void affine(const Matrix& in, const DenseLayer& layer, bool relu, Matrix& out) {
  out.resize(in.rows, layer.out);
  auto o = view(out);
  o.noalias() = view(in) * weight_view(layer).transpose();
  o.rowwise() += ConstMapVec(layer.bias.data(), layer.out).transpose();
  if (relu) o = o.cwiseMax(0.0f);
}

double softplus_neg_abs(double z) { return std::log1p(std::exp(-std::fabs(z))); }

}  // namespace

std::vector<std::uint32_t> hidden_widths(SizeClass size) {
  switch (size) {
    case SizeClass::linear: return {};
    case SizeClass::tiny: return {128};
    case SizeClass::small: return {128, 256};
    case SizeClass::medium: return {128, 256, 512};
    case SizeClass::large: return {128, 256, 512, 1024};
  }
  return {};
}

const char* to_string(SizeClass size) {
  switch (size) {
    case SizeClass::linear: return "linear";
    case SizeClass::tiny: return "tiny";
    case SizeClass::small: return "small";
    case SizeClass::medium: return "medium";
    case SizeClass::large: return "large";
  }
  return "?";
}

SizeClass parse_size_class(std::string_view name) {
  for (auto s : kAllSizeClasses) {
    if (name == to_string(s)) return s;
  }
  throw ValidationError("unknown prober size '" + std::string(name) +
                        "' (expected linear, tiny, small, medium or large)");
}

void ProberConfig::validate() const {
  if (input_dim == 0) throw ValidationError("prober input_dim must be at least 1");
  if (num_docs == 0) throw ValidationError("prober num_docs must be at least 1");
}

std::vector<std::span<const float>> GradientSet::spans() const {
  std::vector<std::span<const float>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weight);
    out.emplace_back(l.bias);
  }
  return out;
}

bool GradientSet::all_zero() const {
  for (const auto& s : spans()) {
    for (float v : s) {
      if (v != 0.0f) return false;
    }
  }
  return true;
}

Prober::Prober(const ProberConfig& config) : config_(config) {
  config_.validate();
  auto widths = hidden_widths(config_.size_class);
  widths.push_back(config_.num_docs);
  Rng rng(config_.init_seed);
  std::uint32_t fan_in = config_.input_dim;
  for (auto width : widths) {
    DenseLayer l;
    l.in = fan_in;
    l.out = width;
    l.weight.resize(static_cast<std::size_t>(width) * fan_in);
    l.bias.assign(width, 0.0f);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& w : l.weight) w = static_cast<float>(uniform_real(rng, -bound, bound));
    layers_.push_back(std::move(l));
    fan_in = width;
  }
}

Prober::Prober(const ProberConfig& config, std::vector<DenseLayer> layers)
    : config_(config), layers_(std::move(layers)) {
  config_.validate();
  auto widths = hidden_widths(config_.size_class);
  widths.push_back(config_.num_docs);
  if (widths.size() != layers_.size()) {
    throw DimensionError(std::string("size class ") + to_string(config_.size_class) + " needs " +
                         std::to_string(widths.size()) + " layers, got " +
                         std::to_string(layers_.size()));
  }
  std::uint32_t fan_in = config_.input_dim;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.in != fan_in || l.out != widths[i] ||
        l.weight.size() != static_cast<std::size_t>(l.in) * l.out || l.bias.size() != l.out) {
      throw DimensionError("layer " + std::to_string(i) + " does not chain: expected " +
                           std::to_string(fan_in) + "->" + std::to_string(widths[i]));
    }
    if (!all_finite(l.weight) || !all_finite(l.bias)) {
      throw ValidationError("layer " + std::to_string(i) + " has non-finite parameters");
    }
    fan_in = l.out;
  }
}

std::size_t Prober::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

DenseLayer& Prober::mutable_layer(std::size_t i) {
  ++version_;
  return layers_.at(i);
}

std::vector<std::span<float>> Prober::mutable_parameters() {
  ++version_;
  std::vector<std::span<float>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight);
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const float>> Prober::parameters() const {
  std::vector<std::span<const float>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weight);
    out.emplace_back(l.bias);
  }
  return out;
}

void Prober::check_batch(const Matrix& batch) const {
  if (batch.cols != config_.input_dim) {
    throw DimensionError("batch width " + std::to_string(batch.cols) +
                         " does not match prober input_dim " +
                         std::to_string(config_.input_dim));
  }
}

Matrix Prober::forward(const Matrix& batch) const {
  check_batch(batch);
  Matrix cur = batch;
  Matrix next;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    affine(cur, layers_[i], i + 1 < layers_.size(), next);
    std::swap(cur, next);
  }
  return cur;
}

Matrix Prober::forward(const Matrix& batch, ForwardCache& cache) const {
  check_batch(batch);
  cache.owner = this;
  cache.version = version_;
  cache.input = batch;
  cache.outputs.resize(layers_.size());
  const Matrix* cur = &cache.input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    affine(*cur, layers_[i], i + 1 < layers_.size(), cache.outputs[i]);
    cur = &cache.outputs[i];
  }
  return cache.outputs.back();
}

GradientSet Prober::backward(const ForwardCache& cache, const Matrix& dlogits) const {
  if (cache.owner != this || cache.version != version_ ||
      cache.outputs.size() != layers_.size()) {
    throw Error("backward called without forward intermediates for the current parameters");
  }
  const std::size_t batch = cache.input.rows;
  if (dlogits.rows != batch || dlogits.cols != config_.num_docs) {
    throw DimensionError("dlogits shape " + std::to_string(dlogits.rows) + "x" +
                         std::to_string(dlogits.cols) + " does not match batch " +
                         std::to_string(batch) + "x" + std::to_string(config_.num_docs));
  }

  GradientSet grads;
  grads.layers.resize(layers_.size());
  Matrix delta = dlogits;
  Matrix prev_delta;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& layer = layers_[i];
    const Matrix& prev = i == 0 ? cache.input : cache.outputs[i - 1];
    auto& g = grads.layers[i];
    g.in = layer.in;
    g.out = layer.out;
    g.weight.resize(layer.weight.size());
    g.bias.resize(layer.out);
    MapMat gw(g.weight.data(), layer.out, layer.in);
    gw.noalias() = view(delta).transpose() * view(prev);
    Eigen::Map<Eigen::VectorXf>(g.bias.data(), layer.out) = view(delta).colwise().sum().transpose();
    if (i > 0) {
      prev_delta.resize(batch, layer.in);
      auto pd = view(prev_delta);
      pd.noalias() = view(delta) * weight_view(layer);
      // ReLU derivative: pass where the activation was positive.
      pd.array() = (view(prev).array() > 0.0f).select(pd.array(), 0.0f);
      std::swap(delta, prev_delta);
    }
  }
  return grads;
}

Matrix Prober::predict_proba(const Matrix& batch) const { return sigmoid(forward(batch)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    out.data[i] = static_cast<float>(sigmoid(static_cast<double>(logits.data[i])));
  }
  return out;
}

BceResult bce_loss_and_grad(const Matrix& logits, const Matrix& targets) {
  if (logits.rows != targets.rows || logits.cols != targets.cols) {
    throw DimensionError("logits and targets shapes differ");
  }
  BceResult r;
  r.dlogits.resize(logits.rows, logits.cols);
  const double scale = 1.0 / static_cast<double>(logits.data.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double z = logits.data[i];
    const float y = targets.data[i];
    if (y != 0.0f && y != 1.0f) throw ValidationError("BCE targets must be 0 or 1");
    total += std::max(z, 0.0) - (y == 1.0f ? z : 0.0) + softplus_neg_abs(z);
    const double diff = y == 1.0f ? -sigmoid(-z) : sigmoid(z);
    r.dlogits.data[i] = static_cast<float>(diff * scale);
  }
  r.loss = total * scale;
  return r;
}

BceResult bce_loss_and_grad(const Matrix& logits, std::span<const std::uint32_t> target_docs) {
  if (target_docs.size() != logits.rows) {
    throw DimensionError("got " + std::to_string(target_docs.size()) + " targets for " +
                         std::to_string(logits.rows) + " logit rows");
  }
  BceResult r;
  r.dlogits.resize(logits.rows, logits.cols);
  const double scale = 1.0 / static_cast<double>(logits.data.size());
  double total = 0.0;
  for (std::size_t b = 0; b < logits.rows; ++b) {
    if (target_docs[b] >= logits.cols) {
      throw ValidationError("target doc " + std::to_string(target_docs[b]) +
                            " out of range for " + std::to_string(logits.cols) + " documents");
    }
    const auto row = logits.row(b);
    auto drow = r.dlogits.row(b);
    for (std::size_t d = 0; d < logits.cols; ++d) {
      const double z = row[d];
      const bool positive = d == target_docs[b];
      total += std::max(z, 0.0) - (positive ? z : 0.0) + softplus_neg_abs(z);
      const double diff = positive ? -sigmoid(-z) : sigmoid(z);
      drow[d] = static_cast<float>(diff * scale);
    }
  }
  r.loss = total * scale;
  return r;
}

}  // namespace srcid
