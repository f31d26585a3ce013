// SPDX-License-Identifier: Apache-2.0
//
// Per-token source attribution. A token is attributed to the document with
// the highest sigmoid probability when that probability is strictly above the
// threshold. The first n-1 tokens of a passage have no window and stay
// untagged.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srcid/activation_store.hpp"
#include "srcid/matrix.hpp"
#include "srcid/prober.hpp"

namespace srcid {

inline constexpr double kDefaultTagThreshold = 0.99;
inline constexpr std::size_t kPaletteSize = 8;

struct TokenTag {
  std::uint32_t position = 0;
  std::string token_text;
  std::optional<std::uint32_t> attribution;
  /// Max per-document probability; absent for tokens without a window.
  std::optional<double> confidence;
  /// Every document above the threshold, most probable first.
  std::vector<std::uint32_t> above_threshold_docs;
};

struct LegendEntry {
  std::uint32_t doc_id = 0;
  std::string title;
  std::size_t color_index = 0;
};

struct TagReport {
  std::vector<TokenTag> tokens;
  std::vector<LegendEntry> legend;  // first-appearance order
  double threshold = kDefaultTagThreshold;

  /// Color of an attributed doc, from the legend.
  std::optional<std::size_t> color_of(std::uint32_t doc_id) const;
};

/// Tags from a probability table with one row per windowed token (positions
/// n-1 .. len-1). `token_texts` covers the whole passage.
TagReport tag_probabilities(const Matrix& probabilities, std::span<const std::string> token_texts,
                            std::uint32_t n, double threshold = kDefaultTagThreshold,
                            const DocumentCatalog* catalog = nullptr);

/// Runs the prober on the passage's windows (see window_matrix) and tags.
TagReport tag(const Prober& prober, const Matrix& windows, std::span<const std::string> token_texts,
              std::uint32_t n, double threshold = kDefaultTagThreshold,
              const DocumentCatalog* catalog = nullptr);

enum class RenderFormat { terminal, html };

/// Terminal: ANSI background colors. HTML: standalone page with inline styles.
/// Token text is emitted verbatim (HTML-escaped for html).
std::string render(const TagReport& report, RenderFormat format);

/// [{position, token, doc_id|null, confidence, above_threshold_docs}]
std::string tag_report_to_json(const TagReport& report);

/// ANSI background SGR code for a palette slot.
int ansi_background(std::size_t color_index);
/// CSS color for a palette slot.
const char* html_color(std::size_t color_index);

}  // namespace srcid
