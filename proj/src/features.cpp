// SPDX-License-Identifier: Apache-2.0
#include "srcid/features.hpp"

#include <algorithm>
#include <cstring>

#include "srcid/errors.hpp"

namespace srcid {

namespace {

void check_window(std::size_t len, std::uint32_t n) {
  if (n == 0) throw ValidationError("n-gram size must be at least 1");
  if (len < n) {
    throw DimensionError("shard of " + std::to_string(len) + " tokens is shorter than n=" +
                         std::to_string(n));
  }
}

void fill_window(std::span<const TokenRecord> records, std::size_t p, std::uint32_t n,
                 std::uint32_t dim, float* out) {
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto& v = records[p + 1 - n + k].vector;
    std::memcpy(out + static_cast<std::size_t>(k) * dim, v.data(), dim * sizeof(float));
  }
}

}  // namespace

std::vector<NGramExample> assemble(const Shard& shard, const SplitAssignment& assignment,
                                   std::uint32_t n) {
  const auto& recs = shard.records;
  check_window(recs.size(), n);
  if (assignment.size() != recs.size()) {
    throw DimensionError("split assignment covers " + std::to_string(assignment.size()) +
                         " positions but shard has " + std::to_string(recs.size()));
  }
  const std::uint32_t dim = shard.header.hidden_dim;
  std::vector<NGramExample> out;
  out.reserve(recs.size() - (n - 1));
  for (std::size_t p = n - 1; p < recs.size(); ++p) {
    NGramExample ex;
    ex.input.resize(static_cast<std::size_t>(n) * dim);
    fill_window(recs, p, n, dim, ex.input.data());
    ex.target_doc = shard.header.doc_id;
    ex.position = static_cast<std::uint32_t>(p);
    ex.split = assignment.labels[p];
    out.push_back(std::move(ex));
  }
  return out;
}

Matrix window_matrix(std::span<const TokenRecord> records, std::uint32_t n) {
  check_window(records.size(), n);
  const auto dim = static_cast<std::uint32_t>(records.front().vector.size());
  Matrix m(records.size() - (n - 1), static_cast<std::size_t>(n) * dim);
  for (std::size_t p = n - 1; p < records.size(); ++p) {
    fill_window(records, p, n, dim, m.row(p - (n - 1)).data());
  }
  return m;
}

FeatureSet::FeatureSet(std::uint32_t n, std::string layer_tag) {
  if (n == 0) throw ValidationError("n-gram size must be at least 1");
  meta_.n = n;
  meta_.layer_tag = std::move(layer_tag);
}

void FeatureSet::add_shard(const Shard& shard, const SplitAssignment& assignment) {
  if (meta_.hidden_dim != 0 && shard.header.hidden_dim != meta_.hidden_dim) {
    throw DimensionError("shard for doc " + std::to_string(shard.header.doc_id) +
                         " has hidden_dim " + std::to_string(shard.header.hidden_dim) +
                         ", feature set uses " + std::to_string(meta_.hidden_dim));
  }
  if (!meta_.layer_tag.empty() && shard.header.layer_tag != meta_.layer_tag) {
    throw DimensionError("shard layer tag '" + shard.header.layer_tag +
                         "' does not match feature set tag '" + meta_.layer_tag + "'");
  }
  auto examples = assemble(shard, assignment, meta_.n);
  meta_.hidden_dim = shard.header.hidden_dim;
  meta_.layer_tag = shard.header.layer_tag;
  meta_.num_docs = std::max(meta_.num_docs, shard.header.doc_id + 1);
  const std::size_t begin = examples_.size();
  for (auto& ex : examples) {
    ++meta_.split_counts[static_cast<int>(ex.split)];
    examples_.push_back(std::move(ex));
  }
  doc_ranges_.push_back({shard.header.doc_id, begin, examples_.size()});
}

void FeatureSet::reserve_docs(std::uint32_t num_docs) {
  meta_.num_docs = std::max(meta_.num_docs, num_docs);
}

std::vector<std::size_t> FeatureSet::indices_of(SplitLabel label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    if (examples_[i].split == label) out.push_back(i);
  }
  return out;
}

Matrix FeatureSet::gather_inputs(std::span<const std::size_t> indices) const {
  Matrix m(indices.size(), meta_.input_dim());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& in = examples_[indices[r]].input;
    std::copy(in.begin(), in.end(), m.row(r).begin());
  }
  return m;
}

std::vector<std::uint32_t> FeatureSet::gather_targets(std::span<const std::size_t> indices) const {
  std::vector<std::uint32_t> t(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) t[r] = examples_[indices[r]].target_doc;
  return t;
}

FeatureSet build_feature_set(std::span<const Shard> shards, const SplitSpec& split,
                             std::uint32_t n, std::uint32_t num_docs) {
  FeatureSet set(n, shards.empty() ? std::string() : shards.front().header.layer_tag);
  for (const auto& shard : shards) {
    const auto len = static_cast<std::uint32_t>(shard.records.size());
    set.add_shard(shard, split_for_document(split, shard.header.doc_id, len));
  }
  set.reserve_docs(num_docs);
  return set;
}

}  // namespace srcid
