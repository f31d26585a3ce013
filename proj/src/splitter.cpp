// SPDX-License-Identifier: Apache-2.0
#include "srcid/splitter.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "srcid/errors.hpp"
#include "srcid/rng.hpp"

namespace srcid {

const char* to_string(SplitLabel label) {
  switch (label) {
    case SplitLabel::train: return "train";
    case SplitLabel::test_in: return "test_in";
    case SplitLabel::test_out: return "test_out";
  }
  return "?";
}

SplitLabel parse_split_label(const std::string& name) {
  if (name == "train") return SplitLabel::train;
  if (name == "test_in" || name == "test-in") return SplitLabel::test_in;
  if (name == "test_out" || name == "test-out") return SplitLabel::test_out;
  throw ValidationError("unknown split '" + name + "' (expected train, test_in or test_out)");
}

void SplitSpec::validate() const {
  if (total_len == 0) throw ValidationError("split total_len must be at least 1");
  const std::uint64_t sum = std::uint64_t{train_count} + test_in_count + test_out_count;
  if (sum != total_len) {
    throw ValidationError("split counts " + std::to_string(train_count) + "+" +
                          std::to_string(test_in_count) + "+" + std::to_string(test_out_count) +
                          " do not sum to total_len " + std::to_string(total_len));
  }
}

std::size_t SplitAssignment::count(SplitLabel label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

SplitAssignment make_split(const SplitSpec& spec) {
  spec.validate();
  SplitAssignment out;
  out.labels.assign(spec.total_len, SplitLabel::test_out);

  const std::uint32_t prefix = spec.prefix_len();
  std::vector<std::uint32_t> candidates(prefix);
  std::iota(candidates.begin(), candidates.end(), 0u);
  // Partial Fisher-Yates: the first train_count slots become a uniform sample.
  Rng rng(spec.seed);
  for (std::uint32_t i = 0; i < spec.train_count; ++i) {
    const auto j = i + static_cast<std::uint32_t>(uniform_index(rng, prefix - i));
    std::swap(candidates[i], candidates[j]);
  }
  for (std::uint32_t i = 0; i < prefix; ++i) out.labels[i] = SplitLabel::test_in;
  for (std::uint32_t i = 0; i < spec.train_count; ++i) out.labels[candidates[i]] = SplitLabel::train;
  return out;
}

std::vector<std::uint32_t> positions_of(const SplitAssignment& assignment, SplitLabel label) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t p = 0; p < assignment.labels.size(); ++p) {
    if (assignment.labels[p] == label) out.push_back(p);
  }
  return out;
}

SplitSpec fit_to_length(SplitSpec spec, std::uint32_t doc_len) {
  spec.validate();
  if (doc_len >= spec.total_len) {
    spec.test_out_count += doc_len - spec.total_len;
    spec.total_len = doc_len;
    return spec;
  }
  std::uint32_t excess = spec.total_len - doc_len;
  for (auto* count : {&spec.test_out_count, &spec.test_in_count, &spec.train_count}) {
    const auto cut = std::min(excess, *count);
    *count -= cut;
    excess -= cut;
  }
  spec.total_len = doc_len;
  return spec;
}

SplitSpec spec_for_document(const SplitSpec& base, std::uint32_t doc_id, std::uint32_t doc_len) {
  auto spec = fit_to_length(base, doc_len);
  spec.seed = base.seed ^ doc_id;
  return spec;
}

SplitAssignment split_for_document(const SplitSpec& base, std::uint32_t doc_id,
                                   std::uint32_t doc_len) {
  return make_split(spec_for_document(base, doc_id, doc_len));
}

std::string assignment_to_json(const SplitAssignment& assignment) {
  nlohmann::json codes = nlohmann::json::array();
  for (auto l : assignment.labels) codes.push_back(static_cast<int>(l));
  return codes.dump();
}

}  // namespace srcid
