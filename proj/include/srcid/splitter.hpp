// SPDX-License-Identifier: Apache-2.0
//
// Token-level train / test-in / test-out split of one document.
//
// The first train_count + test_in_count positions form the prefix region;
// train positions are drawn uniformly at random inside it and the remaining
// prefix positions become test-in. Everything after the prefix is test-out.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace srcid {

enum class SplitLabel : std::uint8_t { train = 0, test_in = 1, test_out = 2 };

inline constexpr SplitLabel kAllSplits[] = {SplitLabel::train, SplitLabel::test_in,
                                           SplitLabel::test_out};

const char* to_string(SplitLabel label);
SplitLabel parse_split_label(const std::string& name);

struct SplitSpec {
  std::uint32_t total_len = 512;
  std::uint32_t train_count = 180;
  std::uint32_t test_in_count = 76;
  std::uint32_t test_out_count = 256;
  std::uint64_t seed = 0;

  /// Throws ValidationError unless the counts sum to total_len >= 1.
  void validate() const;

  std::uint32_t prefix_len() const { return train_count + test_in_count; }
};

struct SplitAssignment {
  std::vector<SplitLabel> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t count(SplitLabel label) const;
  bool operator==(const SplitAssignment&) const = default;
};

SplitAssignment make_split(const SplitSpec& spec);

/// Strictly increasing positions carrying `label`.
std::vector<std::uint32_t> positions_of(const SplitAssignment& assignment, SplitLabel label);

/// Fits a spec to a document of `doc_len` tokens. Shorter documents lose
/// test-out first, then test-in, then train. Longer documents get the extra
/// tail positions as test-out.
SplitSpec fit_to_length(SplitSpec spec, std::uint32_t doc_len);

/// Per-document spec: seed is `base.seed ^ doc_id`, counts fitted to doc_len.
SplitSpec spec_for_document(const SplitSpec& base, std::uint32_t doc_id, std::uint32_t doc_len);

SplitAssignment split_for_document(const SplitSpec& base, std::uint32_t doc_id,
                                   std::uint32_t doc_len);

/// JSON array of 0/1/2 codes (train/test-in/test-out).
std::string assignment_to_json(const SplitAssignment& assignment);

}  // namespace srcid
