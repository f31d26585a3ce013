// SPDX-License-Identifier: Apache-2.0
#include "srcid/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include <nlohmann/json.hpp>

#include "float_env.hpp"
#include "srcid/errors.hpp"

namespace srcid {

double ThresholdMetrics::precision() const {
  const auto denom = true_positive + false_positive;
  return denom == 0 ? 0.0 : static_cast<double>(true_positive) / static_cast<double>(denom);
}

double ThresholdMetrics::recall() const {
  const auto denom = true_positive + false_negative;
  return denom == 0 ? 0.0 : static_cast<double>(true_positive) / static_cast<double>(denom);
}

std::vector<std::optional<double>> EvalReport::per_doc_accuracy() const {
  std::vector<std::optional<double>> out(per_doc_total.size());
  for (std::size_t d = 0; d < per_doc_total.size(); ++d) {
    if (per_doc_total[d] > 0) {
      out[d] = static_cast<double>(per_doc_correct[d]) / static_cast<double>(per_doc_total[d]);
    }
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = to_string(split);
  j["correct"] = correct;
  j["total"] = total;
  j["accuracy"] = accuracy;
  auto per_doc = nlohmann::ordered_json::array();
  for (auto a : per_doc_accuracy()) {
    per_doc.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json(nullptr));
  }
  j["per_doc_accuracy"] = std::move(per_doc);
  j["per_doc_total"] = per_doc_total;
  auto conf = nlohmann::ordered_json::array();
  for (const auto& c : top_confusions) {
    conf.push_back({{"target", c.target}, {"predicted", c.predicted}, {"count", c.count}});
  }
  j["top_confusions"] = std::move(conf);
  j["threshold"] = {{"value", threshold_metrics.threshold},
                    {"true_positive", threshold_metrics.true_positive},
                    {"false_positive", threshold_metrics.false_positive},
                    {"false_negative", threshold_metrics.false_negative},
                    {"precision", threshold_metrics.precision()},
                    {"recall", threshold_metrics.recall()}};
  return j.dump(2);
}

std::uint64_t count_top1_correct(const Matrix& scores, std::span<const std::uint32_t> targets) {
  if (targets.size() != scores.rows) throw DimensionError("score rows and targets differ");
  std::uint64_t correct = 0;
  for (std::size_t r = 0; r < scores.rows; ++r) {
    if (argmax_lowest(scores.row(r)) == targets[r]) ++correct;
  }
  return correct;
}

namespace {

class Accumulator {
public:
  Accumulator(SplitLabel split, std::uint32_t num_docs, const EvalOptions& options)
      : options_(options) {
    report_.split = split;
    report_.per_doc_correct.assign(num_docs, 0);
    report_.per_doc_total.assign(num_docs, 0);
    report_.threshold_metrics.threshold = options.threshold;
  }

  void add(const Matrix& scores, ScoreKind kind, std::span<const std::uint32_t> targets) {
    if (targets.size() != scores.rows) throw DimensionError("score rows and targets differ");
    const double threshold = options_.threshold;
    auto& tm = report_.threshold_metrics;
    for (std::size_t r = 0; r < scores.rows; ++r) {
      const auto row = scores.row(r);
      const auto target = targets[r];
      if (target >= report_.per_doc_total.size()) {
        throw DimensionError("target doc " + std::to_string(target) + " outside score width");
      }
      const auto pred = static_cast<std::uint32_t>(argmax_lowest(row));
      ++report_.total;
      ++report_.per_doc_total[target];
      if (pred == target) {
        ++report_.correct;
        ++report_.per_doc_correct[target];
      } else {
        ++confusions_[{target, pred}];
      }
      bool hit = false;
      for (std::size_t d = 0; d < row.size(); ++d) {
        const double p = kind == ScoreKind::logits ? sigmoid(static_cast<double>(row[d]))
                                                   : static_cast<double>(row[d]);
        if (p > threshold) {
          if (d == target) {
            hit = true;
            ++tm.true_positive;
          } else {
            ++tm.false_positive;
          }
        }
      }
      if (!hit) ++tm.false_negative;
    }
  }

  EvalReport finish() {
    report_.accuracy = report_.total == 0 ? 0.0
                                          : static_cast<double>(report_.correct) /
                                                static_cast<double>(report_.total);
    std::vector<Confusion> all;
    for (const auto& [key, count] : confusions_) all.push_back({key.first, key.second, count});
    std::stable_sort(all.begin(), all.end(),
                     [](const Confusion& a, const Confusion& b) { return a.count > b.count; });
    if (all.size() > options_.top_confusions) all.resize(options_.top_confusions);
    report_.top_confusions = std::move(all);
    return std::move(report_);
  }

private:
  EvalOptions options_;
  EvalReport report_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> confusions_;
};

}  // namespace

EvalReport evaluate_scores(const Matrix& scores, ScoreKind kind,
                           std::span<const std::uint32_t> targets, SplitLabel split,
                           const EvalOptions& options) {
  Accumulator acc(split, static_cast<std::uint32_t>(scores.cols), options);
  acc.add(scores, kind, targets);
  return acc.finish();
}

EvalReport evaluate(const Prober& prober, const FeatureSet& features, SplitLabel split,
                    const EvalOptions& options) {
  const detail::FlushDenormals ftz;
  if (features.meta().input_dim() != prober.input_dim()) {
    throw DimensionError("feature width " + std::to_string(features.meta().input_dim()) +
                         " does not match prober input_dim " +
                         std::to_string(prober.input_dim()));
  }
  Accumulator acc(split, prober.num_docs(), options);
  const auto indices = features.indices_of(split);
  const std::size_t step = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t begin = 0; begin < indices.size(); begin += step) {
    const std::span<const std::size_t> chunk(indices.data() + begin,
                                             std::min(step, indices.size() - begin));
    acc.add(prober.forward(features.gather_inputs(chunk)), ScoreKind::logits,
            features.gather_targets(chunk));
  }
  return acc.finish();
}

std::optional<double> split_accuracy(const Prober& prober, const FeatureSet& features,
                                     SplitLabel split, std::size_t batch_size) {
  const detail::FlushDenormals ftz;
  const auto indices = features.indices_of(split);
  if (indices.empty()) return std::nullopt;
  std::uint64_t correct = 0;
  const std::size_t step = std::max<std::size_t>(1, batch_size);
  for (std::size_t begin = 0; begin < indices.size(); begin += step) {
    const std::span<const std::size_t> chunk(indices.data() + begin,
                                             std::min(step, indices.size() - begin));
    correct += count_top1_correct(prober.forward(features.gather_inputs(chunk)),
                                  features.gather_targets(chunk));
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::string out = "split,correct,total,accuracy,threshold,precision,recall\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%llu,%.6f,%.4f,%.6f,%.6f\n", to_string(r.split),
                  static_cast<unsigned long long>(r.correct),
                  static_cast<unsigned long long>(r.total), r.accuracy,
                  r.threshold_metrics.threshold, r.threshold_metrics.precision(),
                  r.threshold_metrics.recall());
    out += buf;
  }
  return out;
}

}  // namespace srcid
