// SPDX-License-Identifier: Apache-2.0
//
// Per-split evaluation. "Accuracy" is top-1: a window counts as correct iff
// the argmax over document scores (ties -> lowest doc id) is its source
// document. Multi-label metrics at a probability threshold are reported
// separately.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srcid/features.hpp"
#include "srcid/prober.hpp"

namespace srcid {

struct Confusion {
  std::uint32_t target = 0;
  std::uint32_t predicted = 0;
  std::uint64_t count = 0;
};

/// Counts over the sets {d : p_d > threshold}.
struct ThresholdMetrics {
  double threshold = 0.99;
  std::uint64_t true_positive = 0;
  std::uint64_t false_positive = 0;
  std::uint64_t false_negative = 0;

  double precision() const;
  double recall() const;
};

struct EvalReport {
  SplitLabel split = SplitLabel::train;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  double accuracy = 0.0;
  std::vector<std::uint64_t> per_doc_correct;
  std::vector<std::uint64_t> per_doc_total;
  std::vector<Confusion> top_confusions;
  ThresholdMetrics threshold_metrics;

  bool empty() const { return total == 0; }
  /// nullopt for documents with no windows in this split.
  std::vector<std::optional<double>> per_doc_accuracy() const;
  std::string to_json() const;
};

struct EvalOptions {
  double threshold = 0.99;
  std::size_t top_confusions = 10;
  std::size_t batch_size = 1024;
};

enum class ScoreKind { logits, probabilities };

/// Number of rows whose lowest-index argmax equals the target.
std::uint64_t count_top1_correct(const Matrix& scores, std::span<const std::uint32_t> targets);

/// Report from precomputed scores (one row per window).
EvalReport evaluate_scores(const Matrix& scores, ScoreKind kind,
                           std::span<const std::uint32_t> targets, SplitLabel split,
                           const EvalOptions& options = {});

EvalReport evaluate(const Prober& prober, const FeatureSet& features, SplitLabel split,
                    const EvalOptions& options = {});

/// Top-1 accuracy only, batched; nullopt for an empty split.
std::optional<double> split_accuracy(const Prober& prober, const FeatureSet& features,
                                     SplitLabel split, std::size_t batch_size = 1024);

/// split,correct,total,accuracy,threshold,precision,recall
std::string reports_to_csv(std::span<const EvalReport> reports);

}  // namespace srcid
