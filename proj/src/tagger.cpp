// SPDX-License-Identifier: Apache-2.0
#include "srcid/tagger.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "srcid/errors.hpp"

namespace srcid {

namespace {

constexpr std::array<int, kPaletteSize> kAnsi{43, 41, 42, 44, 45, 46, 47, 100};
constexpr std::array<const char*, kPaletteSize> kCss{"#ffff80", "#ff8099", "#66ff99", "#66b3ff",
                                                     "#ffc266", "#cc99ff", "#99ffff", "#cccccc"};

std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string legend_label(const LegendEntry& e) {
  return "Document(" + std::to_string(e.doc_id) + "): " + e.title;
}

}  // namespace

int ansi_background(std::size_t color_index) { return kAnsi[color_index % kPaletteSize]; }
const char* html_color(std::size_t color_index) { return kCss[color_index % kPaletteSize]; }

std::optional<std::size_t> TagReport::color_of(std::uint32_t doc_id) const {
  for (const auto& e : legend) {
    if (e.doc_id == doc_id) return e.color_index;
  }
  return std::nullopt;
}

TagReport tag_probabilities(const Matrix& probabilities, std::span<const std::string> token_texts,
                            std::uint32_t n, double threshold, const DocumentCatalog* catalog) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("tag threshold must lie strictly between 0 and 1");
  }
  if (n == 0) throw ValidationError("n-gram size must be at least 1");
  const std::size_t windowed = token_texts.size() >= n ? token_texts.size() - (n - 1) : 0;
  if (probabilities.rows != windowed) {
    throw DimensionError("probability table has " + std::to_string(probabilities.rows) +
                         " rows, passage has " + std::to_string(windowed) + " windows");
  }
  // Probabilities are single precision; compare at that precision so that a
  // stored 0.99 is not above a 0.99 threshold.
  const float cut = static_cast<float>(threshold);

  TagReport report;
  report.threshold = threshold;
  for (std::uint32_t p = 0; p < token_texts.size(); ++p) {
    TokenTag t;
    t.position = p;
    t.token_text = token_texts[p];
    if (p + 1 >= n) {
      const auto row = probabilities.row(p - (n - 1));
      const auto best = static_cast<std::uint32_t>(argmax_lowest(row));
      t.confidence = row[best];
      std::vector<std::uint32_t> above;
      for (std::uint32_t d = 0; d < row.size(); ++d) {
        if (row[d] > cut) above.push_back(d);
      }
      std::stable_sort(above.begin(), above.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b]; });
      t.above_threshold_docs = std::move(above);
      if (row[best] > cut) {
        t.attribution = best;
        if (!report.color_of(best)) {
          const std::size_t color = report.legend.size() % kPaletteSize;
          report.legend.push_back(
              {best, catalog ? catalog->title_of(best) : "Document " + std::to_string(best), color});
        }
      }
    }
    report.tokens.push_back(std::move(t));
  }
  return report;
}

TagReport tag(const Prober& prober, const Matrix& windows, std::span<const std::string> token_texts,
              std::uint32_t n, double threshold, const DocumentCatalog* catalog) {
  return tag_probabilities(prober.predict_proba(windows), token_texts, n, threshold, catalog);
}

std::string render(const TagReport& report, RenderFormat format) {
  std::string out;
  if (format == RenderFormat::terminal) {
    for (const auto& t : report.tokens) {
      if (t.attribution) {
        out += "\x1b[" + std::to_string(ansi_background(*report.color_of(*t.attribution))) + "m";
        out += t.token_text;
        out += "\x1b[0m";
      } else {
        out += t.token_text;
      }
    }
    out += "\n----\n";
    for (const auto& e : report.legend) {
      out += "\x1b[" + std::to_string(ansi_background(e.color_index)) + "m" + legend_label(e) +
             "\x1b[0m\n";
    }
    return out;
  }

  char threshold_text[32];
  std::snprintf(threshold_text, sizeof(threshold_text), "%g", report.threshold);
  out += "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n";
  out += "<title>Source attribution</title>\n</head>\n";
  out += "<body style=\"font-family: monospace; max-width: 60em;\">\n";
  out += "<p style=\"color: #555;\">threshold &gt; ";
  out += threshold_text;
  out += "</p>\n<div class=\"passage\" style=\"white-space: pre-wrap; line-height: 1.8;\">";
  for (const auto& t : report.tokens) {
    if (t.attribution) {
      out += "<span style=\"background-color: ";
      out += html_color(*report.color_of(*t.attribution));
      out += ";\" title=\"Document(" + std::to_string(*t.attribution) + ")\">";
      out += html_escape(t.token_text);
      out += "</span>";
    } else {
      out += html_escape(t.token_text);
    }
  }
  out += "</div>\n<hr>\n<div class=\"legend\">\n";
  for (const auto& e : report.legend) {
    out += "<div><span style=\"background-color: ";
    out += html_color(e.color_index);
    out += ";\">" + html_escape(legend_label(e)) + "</span></div>\n";
  }
  out += "</div>\n</body>\n</html>\n";
  return out;
}

std::string tag_report_to_json(const TagReport& report) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& t : report.tokens) {
    nlohmann::ordered_json j;
    j["position"] = t.position;
    j["token"] = t.token_text;
    j["doc_id"] = t.attribution ? nlohmann::ordered_json(*t.attribution) : nlohmann::ordered_json(nullptr);
    j["confidence"] = t.confidence ? nlohmann::ordered_json(*t.confidence) : nlohmann::ordered_json(nullptr);
    j["above_threshold_docs"] = t.above_threshold_docs;
    arr.push_back(std::move(j));
  }
  return arr.dump(2, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

}  // namespace srcid
