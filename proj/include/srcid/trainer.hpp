// SPDX-License-Identifier: Apache-2.0
//
// Prober training: for each epoch, walk the documents in order and update the
// prober on minibatches of that document's train-split windows (BCE + AdamW).
//
// Batch order policies
//   per_document  batches never straddle documents (default)
//   packed        same example order, but batches continue across documents
//   mixed         one global shuffle of all train windows per epoch
// Within a document the train windows are shuffled with a generator seeded by
// (shuffle_seed, epoch, doc_id), so in-memory and streaming runs that share a
// policy visit identical batches.
#pragma once

#include <cstdint>
#include <filesystem>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "srcid/features.hpp"
#include "srcid/optimizer.hpp"
#include "srcid/prober.hpp"
#include "srcid/splitter.hpp"

namespace srcid {

enum class TrainMode { in_memory, streaming };
enum class BatchPolicy { per_document, packed, mixed };

const char* to_string(TrainMode mode);
const char* to_string(BatchPolicy policy);
TrainMode parse_train_mode(const std::string& name);
BatchPolicy parse_batch_policy(const std::string& name);

struct TrainConfig {
  std::uint32_t epochs = 1;
  std::uint32_t batch_size = 64;
  std::uint64_t shuffle_seed = 0;
  TrainMode mode = TrainMode::in_memory;
  std::optional<std::uint64_t> max_steps;
  BatchPolicy batch_policy = BatchPolicy::per_document;
  /// History cadence in steps. Unset: once per epoch (in-memory) or every
  /// 1000 steps (streaming).
  std::optional<std::uint64_t> eval_every;
  /// Streaming only: read the next shard on a worker thread.
  bool prefetch = false;

  void validate() const;
};

struct HistoryPoint {
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;
  /// Mean loss and top-1 accuracy of the batches since the previous point,
  /// measured on the forward pass that produced each update.
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_in_accuracy;
};

struct TrainingHistory {
  std::vector<HistoryPoint> points;

  /// step,epoch,train_loss,train_acc,test_in_acc
  std::string to_csv() const;
};

struct TrainStats {
  std::uint64_t steps = 0;
  std::uint64_t examples = 0;
  /// Examples from a non-train split that reached a gradient. Always 0.
  std::uint64_t non_train_examples = 0;
};

struct TrainResult {
  TrainingHistory history;
  TrainStats stats;
};

struct Batch {
  Matrix inputs;
  std::vector<std::uint32_t> targets;
  std::vector<SplitLabel> splits;

  std::size_t size() const { return targets.size(); }
};

/// Example indices (into `features.examples()`) of every batch in `epoch`.
std::vector<std::vector<std::size_t>> plan_epoch(const FeatureSet& features,
                                                 const TrainConfig& config, std::uint32_t epoch);

/// In-memory training on the train split of `features`. When `monitor` is
/// given its test-in windows are scored at each history point; otherwise the
/// test-in windows of `features` are used.
TrainResult train(Prober& prober, OptimizerState& state, const FeatureSet& features,
                  const TrainConfig& config, const OptimizerConfig& optimizer,
                  const FeatureSet* monitor = nullptr);

/// Yields train-split minibatches straight from shard files.
///
/// per_document and packed read one document at a time (two with prefetch).
/// mixed keeps only the (document, position) address of every train window,
/// shuffles the addresses exactly like the in-memory mixed policy, and reads
/// each window from memory-mapped shards.
class BatchStream {
public:
  BatchStream(std::vector<std::filesystem::path> shard_paths, SplitSpec split, std::uint32_t n,
              std::uint32_t batch_size, std::uint64_t seed,
              BatchPolicy policy = BatchPolicy::per_document, bool prefetch = false);

  void start_epoch(std::uint32_t epoch);
  /// False once the current epoch is exhausted.
  bool next(Batch& out);

  std::uint32_t hidden_dim() const { return hidden_dim_; }
  std::uint32_t input_dim() const { return n_ * hidden_dim_; }
  std::uint32_t num_docs() const { return num_docs_; }
  const std::string& layer_tag() const { return layer_tag_; }
  std::size_t shard_count() const { return paths_.size(); }

private:
  bool load_next_document();
  void launch_prefetch();

  std::vector<std::filesystem::path> paths_;
  SplitSpec split_;
  std::uint32_t n_;
  std::uint32_t batch_size_;
  std::uint64_t seed_;
  BatchPolicy policy_;
  bool prefetch_;
  std::uint32_t hidden_dim_ = 0;
  std::uint32_t num_docs_ = 0;
  std::string layer_tag_;

  std::uint32_t epoch_ = 0;
  std::size_t next_shard_ = 0;
  std::vector<NGramExample> pending_;
  std::size_t pending_pos_ = 0;
  std::future<Shard> prefetched_;

  struct Address {
    std::uint32_t shard;
    std::uint32_t position;
  };
  struct MappedShards;
  std::shared_ptr<MappedShards> mapped_;
  std::vector<Address> addresses_;
  std::vector<Address> order_;
  std::size_t order_pos_ = 0;
};

TrainResult train_streaming(Prober& prober, OptimizerState& state, BatchStream& stream,
                            const TrainConfig& config, const OptimizerConfig& optimizer,
                            const FeatureSet* monitor = nullptr);

}  // namespace srcid
