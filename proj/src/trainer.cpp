// SPDX-License-Identifier: Apache-2.0
#include "srcid/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cstdio>
#include <limits>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "float_env.hpp"
#include "srcid/activation_store.hpp"
#include "srcid/errors.hpp"
#include "srcid/evaluator.hpp"
#include "srcid/rng.hpp"

namespace srcid {

const char* to_string(TrainMode mode) {
  return mode == TrainMode::in_memory ? "in_memory" : "streaming";
}

const char* to_string(BatchPolicy policy) {
  switch (policy) {
    case BatchPolicy::per_document: return "per_document";
    case BatchPolicy::packed: return "packed";
    case BatchPolicy::mixed: return "mixed";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "in_memory" || name == "in-memory") return TrainMode::in_memory;
  if (name == "streaming") return TrainMode::streaming;
  throw ValidationError("unknown train mode '" + name + "' (expected in_memory or streaming)");
}

BatchPolicy parse_batch_policy(const std::string& name) {
  if (name == "per_document" || name == "per-document") return BatchPolicy::per_document;
  if (name == "packed") return BatchPolicy::packed;
  if (name == "mixed") return BatchPolicy::mixed;
  throw ValidationError("unknown batch policy '" + name +
                        "' (expected per_document, packed or mixed)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (eval_every && *eval_every == 0) throw ValidationError("eval_every must be positive");
}

std::string TrainingHistory::to_csv() const {
  std::string out = "step,epoch,train_loss,train_acc,test_in_acc\n";
  char buf[160];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%llu,%u,%.8f,%.6f,", static_cast<unsigned long long>(p.step),
                  p.epoch, p.train_loss, p.train_accuracy);
    out += buf;
    if (p.test_in_accuracy) {
      std::snprintf(buf, sizeof(buf), "%.6f", *p.test_in_accuracy);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

std::uint64_t doc_shuffle_seed(std::uint64_t seed, std::uint32_t epoch, std::uint32_t doc_id) {
  return mix_seed(seed, epoch, doc_id);
}

/// Emits batches of `batch_size` from a running example sequence, optionally
/// carrying a partial batch into the next document.
template <typename T>
class Chunker {
public:
  explicit Chunker(std::size_t batch_size) : batch_size_(batch_size) {}

  template <typename Emit>
  void push(std::vector<T> items, bool flush_at_end, Emit&& emit) {
    for (auto& item : items) {
      current_.push_back(std::move(item));
      if (current_.size() == batch_size_) {
        emit(std::move(current_));
        current_.clear();
      }
    }
    if (flush_at_end) flush(emit);
  }

  template <typename Emit>
  void flush(Emit&& emit) {
    if (!current_.empty()) {
      emit(std::move(current_));
      current_.clear();
    }
  }

private:
  std::size_t batch_size_;
  std::vector<T> current_;
};

/// Bookkeeping shared by both training loops.
class Loop {
public:
  Loop(Prober& prober, OptimizerState& state, const TrainConfig& config,
       const OptimizerConfig& optimizer, const FeatureSet* monitor, std::uint64_t default_cadence)
      : prober_(prober), state_(state), config_(config), optimizer_(optimizer),
        monitor_(monitor), cadence_(config.eval_every.value_or(default_cadence)) {
    optimizer_.validate();
  }

  bool budget_exhausted() const {
    return config_.max_steps && result_.stats.steps >= *config_.max_steps;
  }

  void step(const Matrix& inputs, std::span<const std::uint32_t> targets,
            std::span<const SplitLabel> splits) {
    for (auto s : splits) {
      if (s != SplitLabel::train) ++result_.stats.non_train_examples;
    }
    const auto logits = prober_.forward(inputs, cache_);
    const auto bce = bce_loss_and_grad(logits, targets);
    const auto grads = prober_.backward(cache_, bce.dlogits);
    const auto params = prober_.mutable_parameters();
    const auto grad_spans = grads.spans();
    adamw_step(params, grad_spans, state_, optimizer_);

    window_loss_ += bce.loss * static_cast<double>(targets.size());
    window_correct_ += count_top1_correct(logits, targets);
    window_examples_ += targets.size();
    ++result_.stats.steps;
    result_.stats.examples += targets.size();
    if (cadence_ > 0 && result_.stats.steps % cadence_ == 0) record();
  }

  void end_epoch() {
    if (cadence_ == 0) record();
  }

  void set_epoch(std::uint32_t epoch) { epoch_ = epoch; }

  TrainResult finish() {
    if (window_examples_ > 0) record();
    return std::move(result_);
  }

private:
  void record() {
    if (window_examples_ == 0) return;
    HistoryPoint p;
    p.step = result_.stats.steps;
    p.epoch = epoch_;
    p.train_loss = window_loss_ / static_cast<double>(window_examples_);
    p.train_accuracy =
        static_cast<double>(window_correct_) / static_cast<double>(window_examples_);
    if (monitor_ != nullptr) p.test_in_accuracy = split_accuracy(prober_, *monitor_, SplitLabel::test_in);
    result_.history.points.push_back(p);
    window_loss_ = 0.0;
    window_correct_ = 0;
    window_examples_ = 0;
  }

  Prober& prober_;
  OptimizerState& state_;
  const TrainConfig& config_;
  OptimizerConfig optimizer_;
  const FeatureSet* monitor_;
  std::uint64_t cadence_;
  ForwardCache cache_;
  TrainResult result_;
  std::uint32_t epoch_ = 0;
  double window_loss_ = 0.0;
  std::uint64_t window_correct_ = 0;
  std::uint64_t window_examples_ = 0;
};

}  // namespace

std::vector<std::vector<std::size_t>> plan_epoch(const FeatureSet& features,
                                                 const TrainConfig& config, std::uint32_t epoch) {
  std::vector<std::vector<std::size_t>> batches;
  auto emit = [&](std::vector<std::size_t> b) { batches.push_back(std::move(b)); };
  const auto& examples = features.examples();

  if (config.batch_policy == BatchPolicy::mixed) {
    auto all = features.indices_of(SplitLabel::train);
    Rng rng(mix_seed(config.shuffle_seed, epoch, std::numeric_limits<std::uint64_t>::max()));
    shuffle(all.begin(), all.end(), rng);
    Chunker<std::size_t> chunker(config.batch_size);
    chunker.push(std::move(all), true, emit);
    return batches;
  }

  const bool per_doc = config.batch_policy == BatchPolicy::per_document;
  Chunker<std::size_t> chunker(config.batch_size);
  for (const auto& doc : features.documents()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = doc.begin; i < doc.end; ++i) {
      if (examples[i].split == SplitLabel::train) idx.push_back(i);
    }
    Rng rng(doc_shuffle_seed(config.shuffle_seed, epoch, doc.doc_id));
    shuffle(idx.begin(), idx.end(), rng);
    chunker.push(std::move(idx), per_doc, emit);
  }
  chunker.flush(emit);
  return batches;
}

TrainResult train(Prober& prober, OptimizerState& state, const FeatureSet& features,
                  const TrainConfig& config, const OptimizerConfig& optimizer,
                  const FeatureSet* monitor) {
  const detail::FlushDenormals ftz;
  config.validate();
  if (features.examples().empty()) throw ValidationError("no training examples");
  if (features.meta().count(SplitLabel::train) == 0) {
    throw ValidationError("feature set has no train-split windows");
  }
  if (features.meta().input_dim() != prober.input_dim()) {
    throw DimensionError("feature width " + std::to_string(features.meta().input_dim()) +
                         " does not match prober input_dim " +
                         std::to_string(prober.input_dim()));
  }
  for (const auto& doc : features.documents()) {
    if (doc.doc_id >= prober.num_docs()) {
      throw ValidationError("target doc " + std::to_string(doc.doc_id) + " out of range for " +
                            std::to_string(prober.num_docs()) + " documents");
    }
  }
  if (monitor == nullptr && features.meta().count(SplitLabel::test_in) > 0) monitor = &features;

  Loop loop(prober, state, config, optimizer, monitor, 0);
  std::vector<SplitLabel> splits;
  for (std::uint32_t epoch = 1; epoch <= config.epochs && !loop.budget_exhausted(); ++epoch) {
    loop.set_epoch(epoch);
    for (const auto& batch : plan_epoch(features, config, epoch)) {
      if (loop.budget_exhausted()) break;
      splits.clear();
      for (auto i : batch) splits.push_back(features.examples()[i].split);
      loop.step(features.gather_inputs(batch), features.gather_targets(batch), splits);
    }
    if (!loop.budget_exhausted()) loop.end_epoch();
  }
  return loop.finish();
}

// ---------------------------------------------------------------------------
// Streaming

struct BatchStream::MappedShards {
  struct Map {
    const unsigned char* base = nullptr;
    std::size_t size = 0;
    std::size_t header_bytes = 0;
    std::uint32_t doc_id = 0;
    std::string path;
  };
  std::vector<Map> maps;

  MappedShards() = default;
  MappedShards(const MappedShards&) = delete;
  MappedShards& operator=(const MappedShards&) = delete;
  ~MappedShards() {
    for (auto& m : maps) {
      if (m.base != nullptr) ::munmap(const_cast<unsigned char*>(m.base), m.size);
    }
  }

  void add(const std::filesystem::path& path, const ShardHeader& h) {
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw IoError("cannot open " + path.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
      ::close(fd);
      throw IoError("cannot stat " + path.string());
    }
    const auto size = static_cast<std::size_t>(st.st_size);
    const std::size_t header = header_byte_size(h);
    const std::size_t expected =
        header + static_cast<std::size_t>(h.token_count) * record_byte_size(h.hidden_dim);
    if (size != expected) {
      ::close(fd);
      if (size < expected) {
        throw FormatError("truncated shard " + path.string() + ": expected " +
                              std::to_string(expected) + " bytes",
                          size);
      }
      throw FormatError("trailing bytes after the last record of " + path.string(), expected);
    }
    void* base = ::mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (base == MAP_FAILED) throw IoError("cannot map " + path.string());
    maps.push_back({static_cast<const unsigned char*>(base), size, header, h.doc_id, path.string()});
  }

  /// Copies the n records ending at `position` into `dst`.
  void read_window(std::uint32_t shard, std::uint32_t position, std::uint32_t n,
                   std::uint32_t dim, float* dst) const {
    static_assert(std::endian::native == std::endian::little, "shards are little-endian");
    const auto& m = maps[shard];
    const std::size_t rec = record_byte_size(dim);
    for (std::uint32_t k = 0; k < n; ++k) {
      const std::uint32_t q = position + 1 + k - n;
      const std::size_t offset = m.header_bytes + static_cast<std::size_t>(q) * rec;
      const unsigned char* r = m.base + offset;
      std::uint32_t stored = 0;
      std::memcpy(&stored, r, sizeof(stored));
      if (stored != q) {
        throw FormatError("record " + std::to_string(q) + " of " + m.path + " carries position " +
                              std::to_string(stored),
                          offset);
      }
      float* out = dst + static_cast<std::size_t>(k) * dim;
      std::memcpy(out, r + 8, static_cast<std::size_t>(dim) * sizeof(float));
      if (!all_finite({out, dim})) {
        throw FormatError("non-finite activation in record " + std::to_string(q) + " of " + m.path,
                          offset + 8);
      }
    }
  }
};

BatchStream::BatchStream(std::vector<std::filesystem::path> shard_paths, SplitSpec split,
                         std::uint32_t n, std::uint32_t batch_size, std::uint64_t seed,
                         BatchPolicy policy, bool prefetch)
    : split_(split), n_(n), batch_size_(batch_size), seed_(seed), policy_(policy),
      prefetch_(prefetch) {
  split_.validate();
  if (n_ == 0) throw ValidationError("n-gram size must be at least 1");
  if (batch_size_ == 0) throw ValidationError("batch_size must be at least 1");
  if (shard_paths.empty()) throw ValidationError("no shards to stream");

  struct Entry {
    ShardHeader header;
    std::filesystem::path path;
  };
  std::vector<Entry> entries;
  for (auto& path : shard_paths) {
    auto h = read_shard_header_file(path);
    if (entries.empty()) {
      hidden_dim_ = h.hidden_dim;
      layer_tag_ = h.layer_tag;
    } else if (h.hidden_dim != hidden_dim_ || h.layer_tag != layer_tag_) {
      throw DimensionError("shard " + path.string() + " (" + h.layer_tag + ", dim " +
                           std::to_string(h.hidden_dim) + ") is inconsistent with " +
                           layer_tag_ + ", dim " + std::to_string(hidden_dim_));
    }
    num_docs_ = std::max(num_docs_, h.doc_id + 1);
    entries.push_back({std::move(h), std::move(path)});
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.header.doc_id < b.header.doc_id;
  });
  for (const auto& e : entries) paths_.push_back(e.path);

  if (policy_ == BatchPolicy::mixed) {
    mapped_ = std::make_shared<MappedShards>();
    for (std::uint32_t i = 0; i < entries.size(); ++i) {
      const auto& h = entries[i].header;
      if (h.token_count < n_) {
        throw DimensionError("shard for doc " + std::to_string(h.doc_id) + " has " +
                             std::to_string(h.token_count) + " tokens, fewer than n = " +
                             std::to_string(n_));
      }
      mapped_->add(entries[i].path, h);
      const auto assignment = split_for_document(split_, h.doc_id, h.token_count);
      for (std::uint32_t p = n_ - 1; p < h.token_count; ++p) {
        if (assignment.labels[p] == SplitLabel::train) addresses_.push_back({i, p});
      }
    }
  }
}

void BatchStream::start_epoch(std::uint32_t epoch) {
  if (prefetched_.valid()) prefetched_.wait();
  prefetched_ = {};
  epoch_ = epoch;
  next_shard_ = 0;
  pending_.clear();
  pending_pos_ = 0;
  if (policy_ == BatchPolicy::mixed) {
    order_ = addresses_;
    Rng rng(mix_seed(seed_, epoch, std::numeric_limits<std::uint64_t>::max()));
    shuffle(order_.begin(), order_.end(), rng);
    order_pos_ = 0;
    return;
  }
  launch_prefetch();
}

void BatchStream::launch_prefetch() {
  if (!prefetch_ || next_shard_ >= paths_.size()) return;
  prefetched_ = std::async(std::launch::async, [path = paths_[next_shard_]] {
    return read_shard_file(path);
  });
}

bool BatchStream::load_next_document() {
  if (next_shard_ >= paths_.size()) return false;
  Shard shard = prefetched_.valid() ? prefetched_.get() : read_shard_file(paths_[next_shard_]);
  ++next_shard_;
  launch_prefetch();
  if (shard.header.hidden_dim != hidden_dim_ || shard.header.layer_tag != layer_tag_) {
    throw DimensionError("shard for doc " + std::to_string(shard.header.doc_id) +
                         " changed since the stream was opened");
  }
  const auto len = static_cast<std::uint32_t>(shard.records.size());
  auto examples = assemble(shard, split_for_document(split_, shard.header.doc_id, len), n_);
  std::vector<NGramExample> train;
  for (auto& ex : examples) {
    if (ex.split == SplitLabel::train) train.push_back(std::move(ex));
  }
  Rng rng(doc_shuffle_seed(seed_, epoch_, shard.header.doc_id));
  shuffle(train.begin(), train.end(), rng);
  if (pending_pos_ > 0) {
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(pending_pos_));
    pending_pos_ = 0;
  }
  if (policy_ == BatchPolicy::per_document && !pending_.empty()) {
    throw Error("internal: per-document batch left examples behind");
  }
  for (auto& ex : train) pending_.push_back(std::move(ex));
  return true;
}

bool BatchStream::next(Batch& out) {
  const std::uint32_t width = n_ * hidden_dim_;
  if (policy_ == BatchPolicy::mixed) {
    if (order_pos_ >= order_.size()) return false;
    const std::size_t take = std::min<std::size_t>(batch_size_, order_.size() - order_pos_);
    out.inputs.resize(take, width);
    out.targets.resize(take);
    out.splits.assign(take, SplitLabel::train);
    for (std::size_t r = 0; r < take; ++r) {
      const auto a = order_[order_pos_ + r];
      mapped_->read_window(a.shard, a.position, n_, hidden_dim_, out.inputs.row(r).data());
      out.targets[r] = mapped_->maps[a.shard].doc_id;
    }
    order_pos_ += take;
    return true;
  }
  auto available = [&] { return pending_.size() - pending_pos_; };
  if (policy_ == BatchPolicy::per_document) {
    while (available() == 0) {
      pending_.clear();
      pending_pos_ = 0;
      if (!load_next_document()) return false;
    }
  } else {
    while (available() < batch_size_ && load_next_document()) {
    }
    if (available() == 0) return false;
  }
  const std::size_t take = std::min<std::size_t>(batch_size_, available());
  out.inputs.resize(take, width);
  out.targets.resize(take);
  out.splits.resize(take);
  for (std::size_t r = 0; r < take; ++r) {
    const auto& ex = pending_[pending_pos_ + r];
    std::copy(ex.input.begin(), ex.input.end(), out.inputs.row(r).begin());
    out.targets[r] = ex.target_doc;
    out.splits[r] = ex.split;
  }
  pending_pos_ += take;
  return true;
}

TrainResult train_streaming(Prober& prober, OptimizerState& state, BatchStream& stream,
                            const TrainConfig& config, const OptimizerConfig& optimizer,
                            const FeatureSet* monitor) {
  const detail::FlushDenormals ftz;
  config.validate();
  if (stream.input_dim() != prober.input_dim()) {
    throw DimensionError("stream width " + std::to_string(stream.input_dim()) +
                         " does not match prober input_dim " +
                         std::to_string(prober.input_dim()));
  }
  if (stream.num_docs() > prober.num_docs()) {
    throw ValidationError("stream has doc ids up to " + std::to_string(stream.num_docs() - 1) +
                          " but prober covers " + std::to_string(prober.num_docs()) +
                          " documents");
  }
  Loop loop(prober, state, config, optimizer, monitor, 1000);
  Batch batch;
  std::uint64_t seen = 0;
  for (std::uint32_t epoch = 1; epoch <= config.epochs && !loop.budget_exhausted(); ++epoch) {
    loop.set_epoch(epoch);
    stream.start_epoch(epoch);
    while (!loop.budget_exhausted() && stream.next(batch)) {
      loop.step(batch.inputs, batch.targets, batch.splits);
      ++seen;
    }
    if (!loop.budget_exhausted()) loop.end_epoch();
  }
  if (seen == 0) throw ValidationError("stream produced no train-split windows");
  return loop.finish();
}

}  // namespace srcid
