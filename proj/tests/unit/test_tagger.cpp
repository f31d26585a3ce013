// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "srcid/errors.hpp"
#include "srcid/tagger.hpp"

using namespace srcid;

namespace {

// Drops ESC [ ... m sequences and the legend after the separator.
std::string strip_ansi_passage(const std::string& s) {
  const auto body = s.substr(0, s.find("\n----\n"));
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] == '\x1b' && i + 1 < body.size() && body[i + 1] == '[') {
      i = body.find('m', i);
      continue;
    }
    out += body[i];
  }
  return out;
}

// Text content of the passage div with entities decoded.
std::string strip_html_passage(const std::string& s) {
  const std::string open = "<div class=\"passage\"";
  auto start = s.find('>', s.find(open)) + 1;
  const auto end = s.find("</div>", start);
  std::string out;
  for (std::size_t i = start; i < end; ++i) {
    if (s[i] == '<') {
      i = s.find('>', i);
    } else if (s[i] == '&') {
      const auto semi = s.find(';', i);
      const auto ent = s.substr(i, semi - i + 1);
      if (ent == "&amp;") out += '&';
      else if (ent == "&lt;") out += '<';
      else if (ent == "&gt;") out += '>';
      else if (ent == "&quot;") out += '"';
      else if (ent == "&#39;") out += '\'';
      else FAIL("unexpected entity " << ent);
      i = semi;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += x;
  return s;
}

}  // namespace

TEST_SUITE("tagger") {

TEST_CASE("strictly above threshold: 0.99 itself is untagged") {
  Matrix p(3, 2);
  p(0, 0) = 0.99f;
  p(1, 1) = 0.9901f;
  p(2, 0) = 0.5f;
  const std::vector<std::string> toks{" a", " b", " c"};
  const auto r = tag_probabilities(p, toks, 1);
  CHECK_FALSE(r.tokens[0].attribution.has_value());
  CHECK(r.tokens[0].confidence.value() == doctest::Approx(0.99));
  CHECK(r.tokens[1].attribution == 1u);
  CHECK_FALSE(r.tokens[2].attribution.has_value());
}

TEST_CASE("the first n-1 tokens have no window") {
  Matrix p(2, 1, 1.0f);
  const std::vector<std::string> toks{"x", "y", "z"};
  const auto r = tag_probabilities(p, toks, 2, 0.5);
  CHECK_FALSE(r.tokens[0].confidence.has_value());
  CHECK(r.tokens[1].attribution == 0u);
  CHECK(r.tokens[2].attribution == 0u);
  CHECK_THROWS_AS(tag_probabilities(Matrix(3, 1), toks, 2), DimensionError);
  CHECK_THROWS_AS(tag_probabilities(p, toks, 2, 1.0), ValidationError);
}

TEST_CASE("legend follows first appearance and colors cycle") {
  Matrix p(12, 12);
  const std::uint32_t order[] = {5, 2, 5, 9, 0, 1, 3, 4, 6, 7, 8, 10};
  for (std::size_t r = 0; r < 12; ++r) p(r, order[r]) = 1.0f;
  std::vector<std::string> toks(12, "t");
  const auto r = tag_probabilities(p, toks, 1, 0.5);
  REQUIRE(r.legend.size() == 11);
  CHECK(r.legend[0].doc_id == 5);
  CHECK(r.legend[1].doc_id == 2);
  CHECK(r.legend[2].doc_id == 9);
  for (std::size_t i = 0; i < r.legend.size(); ++i) CHECK(r.legend[i].color_index == i % kPaletteSize);
  CHECK(r.legend[0].title == "Document 5");
  DocumentCatalog c;
  c.documents = {{5, "Five", 1}};
  CHECK(tag_probabilities(p, toks, 1, 0.5, &c).legend[0].title == "Five");
}

TEST_CASE("above-threshold docs are listed most probable first") {
  Matrix p(1, 4);
  p(0, 0) = 0.995f;
  p(0, 1) = 0.2f;
  p(0, 2) = 0.999f;
  p(0, 3) = 0.9999f;
  const std::vector<std::string> toks{"w"};
  const auto r = tag_probabilities(p, toks, 1);
  CHECK(r.tokens[0].above_threshold_docs == std::vector<std::uint32_t>{3, 2, 0});
  CHECK(r.tokens[0].attribution == 3u);
}

TEST_CASE("raising the threshold never adds a tag") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.9f, 1.0f);
  std::uniform_real_distribution<double> th(0.5, 0.9999);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng() % 12, docs = 1 + rng() % 6;
    Matrix p(rows, docs);
    for (auto& v : p.data) v = u(rng);
    const std::vector<std::string> toks(rows, "t");
    double a = th(rng), b = th(rng);
    if (a > b) std::swap(a, b);
    const auto lo = tag_probabilities(p, toks, 1, a);
    const auto hi = tag_probabilities(p, toks, 1, b);
    for (std::size_t i = 0; i < rows; ++i) {
      if (hi.tokens[i].attribution) CHECK(lo.tokens[i].attribution == hi.tokens[i].attribution);
      const std::set<std::uint32_t> l(lo.tokens[i].above_threshold_docs.begin(),
                                      lo.tokens[i].above_threshold_docs.end());
      for (auto d : hi.tokens[i].above_threshold_docs) CHECK(l.count(d) == 1);
    }
  }
}

TEST_CASE("reports reproduce token text byte-exactly") {
  const std::vector<std::string> toks{"Hello", ",", " <b>", " &amp;", " \"q\"", " it's",
                                      "\n", "\tcaf\xc3\xa9", " \xe2\x9c\x93", ""};
  Matrix p(toks.size(), 3);
  for (std::size_t r = 0; r < toks.size(); ++r) p(r, r % 3) = r % 2 ? 1.0f : 0.1f;
  const auto rep = tag_probabilities(p, toks, 1);
  CHECK(strip_ansi_passage(render(rep, RenderFormat::terminal)) == join(toks));
  CHECK(strip_html_passage(render(rep, RenderFormat::html)) == join(toks));
}

TEST_CASE("ANSI and HTML layout") {
  Matrix p(2, 2);
  p(1, 1) = 1.0f;
  const std::vector<std::string> toks{"a", "b"};
  const auto rep = tag_probabilities(p, toks, 1);
  const auto code = std::to_string(ansi_background(0));
  CHECK(render(rep, RenderFormat::terminal) ==
        "a\x1b[" + code + "mb\x1b[0m\n----\n\x1b[" + code + "mDocument(1): Document 1\x1b[0m\n");
  const auto html = render(rep, RenderFormat::html);
  CHECK(html.rfind("<!DOCTYPE html>", 0) == 0);
  CHECK(html.find(std::string("background-color: ") + html_color(0)) != std::string::npos);
}

TEST_CASE("JSON report") {
  Matrix p(2, 2);
  p(0, 0) = 0.999f;
  p(1, 1) = 0.3f;
  const std::vector<std::string> toks{"x", "y", "z"};
  const auto j = nlohmann::json::parse(tag_report_to_json(tag_probabilities(p, toks, 2)));
  REQUIRE(j.size() == 3);
  CHECK(j[0]["doc_id"].is_null());
  CHECK(j[0]["confidence"].is_null());
  CHECK(j[1]["doc_id"] == 0);
  CHECK(j[1]["confidence"].get<double>() == doctest::Approx(0.999));
  CHECK(j[2]["doc_id"].is_null());
  CHECK(j[2]["token"] == "z");
  CHECK(j[1]["above_threshold_docs"] == nlohmann::json::array({0}));
}

TEST_CASE("tag runs the prober") {
  std::vector<DenseLayer> layers(1);
  layers[0] = {1, 2, {10.0f, -10.0f}, {0.0f, 0.0f}};
  const Prober prober({SizeClass::linear, 1, 2, 0}, layers);
  Matrix w(2, 1);
  w(0, 0) = 1.0f;
  w(1, 0) = -1.0f;
  const std::vector<std::string> toks{"u", "v"};
  const auto r = tag(prober, w, toks, 1);
  CHECK(r.tokens[0].attribution == 0u);
  CHECK(r.tokens[1].attribution == 1u);
}

}  // TEST_SUITE
