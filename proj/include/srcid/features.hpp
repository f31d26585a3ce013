// SPDX-License-Identifier: Apache-2.0
//
// n-gram input windows. The example at position p concatenates the vectors
// at positions p-n+1 .. p in increasing order; positions p < n-1 have no
// full window and are skipped.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srcid/activation_store.hpp"
#include "srcid/matrix.hpp"
#include "srcid/splitter.hpp"

namespace srcid {

struct NGramExample {
  std::vector<float> input;
  std::uint32_t target_doc = 0;
  std::uint32_t position = 0;
  SplitLabel split = SplitLabel::train;

  bool operator==(const NGramExample&) const = default;
};

std::vector<NGramExample> assemble(const Shard& shard, const SplitAssignment& assignment,
                                   std::uint32_t n);

/// Windows only (no labels), one row per position n-1..len-1. Used for tagging.
Matrix window_matrix(std::span<const TokenRecord> records, std::uint32_t n);

struct FeatureSetMeta {
  std::uint32_t n = 1;
  std::string layer_tag;
  std::uint32_t hidden_dim = 0;
  std::uint32_t num_docs = 0;
  std::array<std::size_t, 3> split_counts{};

  std::uint32_t input_dim() const { return n * hidden_dim; }
  std::size_t count(SplitLabel label) const { return split_counts[static_cast<int>(label)]; }
};

/// Examples of many documents, kept grouped by document in insertion order.
class FeatureSet {
public:
  FeatureSet(std::uint32_t n, std::string layer_tag);

  /// Appends the windows of one shard. Throws DimensionError when the shard's
  /// hidden_dim or layer tag differs from earlier shards.
  void add_shard(const Shard& shard, const SplitAssignment& assignment);

  /// Raises the label count (num_docs) to at least `num_docs`.
  void reserve_docs(std::uint32_t num_docs);

  const FeatureSetMeta& meta() const { return meta_; }
  const std::vector<NGramExample>& examples() const { return examples_; }

  struct DocRange {
    std::uint32_t doc_id;
    std::size_t begin;
    std::size_t end;
  };
  const std::vector<DocRange>& documents() const { return doc_ranges_; }

  /// Indices of examples carrying `label`, in storage order.
  std::vector<std::size_t> indices_of(SplitLabel label) const;

  /// Copies the inputs of `indices` into a batch matrix.
  Matrix gather_inputs(std::span<const std::size_t> indices) const;
  std::vector<std::uint32_t> gather_targets(std::span<const std::size_t> indices) const;

private:
  FeatureSetMeta meta_;
  std::vector<NGramExample> examples_;
  std::vector<DocRange> doc_ranges_;
};

/// Builds a feature set from every shard of one layer, splitting each document
/// with spec_for_document(split, doc_id, length).
FeatureSet build_feature_set(std::span<const Shard> shards, const SplitSpec& split,
                             std::uint32_t n, std::uint32_t num_docs);

}  // namespace srcid
