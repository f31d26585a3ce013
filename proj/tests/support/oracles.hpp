// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used as test oracles. They share no
// code with the library: plain double-precision loops, no Eigen.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "srcid/activation_store.hpp"
#include "srcid/prober.hpp"

namespace oracle {

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;  // out x in
  std::vector<double> b;
};

inline std::vector<Layer> layers_of(const srcid::Prober& p) {
  std::vector<Layer> out;
  for (const auto& l : p.layers()) {
    out.push_back({l.in, l.out, {l.weight.begin(), l.weight.end()}, {l.bias.begin(), l.bias.end()}});
  }
  return out;
}

/// Logits for one input row. `pre` (optional) receives every hidden
/// pre-activation, so callers can detect ReLU sign changes.
inline std::vector<double> forward(const std::vector<Layer>& layers, const std::vector<double>& x,
                                   std::vector<double>* pre = nullptr) {
  std::vector<double> a = x;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    std::vector<double> z(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = l.b[o];
      for (std::size_t i = 0; i < l.in; ++i) s += l.w[o * l.in + i] * a[i];
      z[o] = s;
    }
    if (li + 1 < layers.size()) {
      if (pre) pre->insert(pre->end(), z.begin(), z.end());
      for (auto& v : z) v = v > 0.0 ? v : 0.0;
    }
    a = std::move(z);
  }
  return a;
}

/// Mean binary cross entropy over rows x docs with one-hot targets, computed
/// directly as -[y log s + (1-y) log(1-s)] through log-sigmoid.
inline double bce(const std::vector<Layer>& layers, const std::vector<std::vector<double>>& xs,
                  const std::vector<std::uint32_t>& targets, std::vector<double>* pre = nullptr) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const auto z = forward(layers, xs[r], pre);
    for (std::size_t d = 0; d < z.size(); ++d) {
      // log sigmoid(z) = -log(1 + e^-z); log(1 - sigmoid(z)) = -log(1 + e^z)
      const double log_p = -std::log1p(std::exp(-std::fabs(z[d]))) - std::max(-z[d], 0.0);
      const double log_q = -std::log1p(std::exp(-std::fabs(z[d]))) - std::max(z[d], 0.0);
      total -= d == targets[r] ? log_p : log_q;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
};

/// Compares analytic gradients of `prober` on (xs, targets) against central
/// differences of the double-precision reference loss at `coords` random
/// parameter coordinates. Coordinates whose perturbation flips a ReLU are
/// skipped and replaced.
GradCheck check_gradients(const srcid::Prober& prober, const std::vector<std::vector<double>>& xs,
                          const std::vector<std::uint32_t>& targets, std::size_t coords,
                          std::uint64_t seed);

/// Multiclass perceptron. Returns the number of epochs it needed to classify
/// every point correctly, or 0 if it did not converge within max_epochs.
inline std::size_t perceptron_epochs(const std::vector<std::vector<double>>& xs,
                                     const std::vector<std::uint32_t>& ys, std::size_t classes,
                                     std::size_t max_epochs) {
  const std::size_t dim = xs.front().size() + 1;
  std::vector<std::vector<double>> w(classes, std::vector<double>(dim, 0.0));
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    std::size_t mistakes = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t c = 0; c < classes; ++c) {
        double s = w[c][dim - 1];
        for (std::size_t k = 0; k + 1 < dim; ++k) s += w[c][k] * xs[i][k];
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      if (best != ys[i]) {
        ++mistakes;
        for (std::size_t k = 0; k + 1 < dim; ++k) {
          w[ys[i]][k] += xs[i][k];
          w[best][k] -= xs[i][k];
        }
        w[ys[i]][dim - 1] += 1.0;
        w[best][dim - 1] -= 1.0;
      }
    }
    if (mistakes == 0) return epoch;
  }
  return 0;
}

/// AdamW in double: decoupled decay first, then the bias-corrected update.
struct AdamW {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wd = 0.01;
  std::vector<double> m, v;
  std::uint64_t t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - lr * wd;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

/// A random finite float, covering the whole exponent range and both zeros.
inline float random_finite_float(std::mt19937_64& rng) {
  for (;;) {
    const auto bits = static_cast<std::uint32_t>(rng());
    float f;
    static_assert(sizeof(f) == sizeof(bits));
    std::memcpy(&f, &bits, sizeof(f));
    if (std::isfinite(f)) return f;
  }
}

inline srcid::Shard random_shard(std::mt19937_64& rng) {
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return lo + rng() % (hi - lo + 1);
  };
  auto random_text = [&](std::size_t max_len) {
    std::string s(pick(0, max_len), ' ');
    for (auto& c : s) c = static_cast<char>(pick(1, 255));
    return s;
  };
  srcid::Shard shard;
  auto& h = shard.header;
  h.doc_id = static_cast<std::uint32_t>(rng());
  h.layer_tag = random_text(24);
  h.hidden_dim = static_cast<std::uint32_t>(pick(1, 48));
  h.token_count = static_cast<std::uint32_t>(pick(1, 40));
  h.model_id = random_text(40);
  for (std::uint32_t p = 0; p < h.token_count; ++p) {
    srcid::TokenRecord r;
    r.position = p;
    r.token_id = static_cast<std::uint32_t>(rng());
    r.vector.resize(h.hidden_dim);
    for (auto& v : r.vector) v = random_finite_float(rng);
    shard.records.push_back(std::move(r));
  }
  return shard;
}

/// Self-deleting scratch directory.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("srcid-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

}  // namespace oracle
