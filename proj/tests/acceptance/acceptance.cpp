// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. `--only <name>[,<name>...]` runs a subset.
#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "srcid/checkpoint.hpp"
#include "srcid/corpus.hpp"
#include "srcid/errors.hpp"
#include "srcid/evaluator.hpp"
#include "srcid/optimizer.hpp"
#include "srcid/splitter.hpp"
#include "srcid/sweep.hpp"
#include "srcid/tagger.hpp"
#include "srcid/toy_lm.hpp"
#include "srcid/trainer.hpp"

using namespace srcid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome split_exactness() {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitSpec spec{512, 180, 76, 256, seed * 7919 + 1};
    const auto a = make_split(spec);
    if (a.count(SplitLabel::train) != 180 || a.count(SplitLabel::test_in) != 76 ||
        a.count(SplitLabel::test_out) != 256) {
      return {false, fmt("wrong counts at seed %llu", static_cast<unsigned long long>(spec.seed))};
    }
    for (auto p : positions_of(a, SplitLabel::test_out)) {
      if (p < 256) return {false, fmt("test-out position %u < 256", p)};
    }
  }
  return {true, "100 seeds: 180/76/256, test-out positions all >= 256"};
}

Outcome gradient_correctness() {
  std::string detail;
  bool ok = true;
  for (auto size : kAllSizeClasses) {
    const Prober p({size, 8, 5, 17});
    std::size_t checked = 0;
    double worst = 0.0;
    for (std::uint64_t batch = 0; checked < 100; ++batch) {
      std::mt19937_64 rng(1000 + batch);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      std::vector<std::vector<double>> xs(6, std::vector<double>(8));
      for (auto& r : xs)
        for (auto& v : r) v = u(rng);
      std::vector<std::uint32_t> targets(6);
      for (auto& t : targets) t = static_cast<std::uint32_t>(rng() % 5);
      const auto g = oracle::check_gradients(p, xs, targets, 100 - checked, batch);
      checked += g.checked;
      worst = std::max(worst, g.max_rel_error);
    }
    ok = ok && worst < 1e-3;
    detail += fmt("%s %.1e; ", to_string(size), worst);
  }
  return {ok, "max rel error over 100 coords: " + detail.substr(0, detail.size() - 2)};
}

Outcome optimizer_oracle() {
  std::vector<float> w{1.0f};
  const std::vector<float> g{1.0f};
  std::span<float> ps[] = {w};
  std::span<const float> gs[] = {g};
  OptimizerState st;
  adamw_step(ps, gs, st, {});
  // Hand derivation: decay 1 - 0.001 * 0.01, then step 0.001 * 1 / (1 + 1e-8).
  const double derived = (1.0 - 1e-3 * 0.01) - 1e-3 / (1.0 + 1e-8);
  const bool first_ok = std::fabs(w[0] - derived) <= 1e-5;

  OptimizerConfig cfg;
  cfg.weight_decay = 0.1;
  std::vector<float> v{3.0f, -0.5f};
  const std::vector<float> zero{0.0f, 0.0f};
  std::span<float> pv[] = {v};
  std::span<const float> gz[] = {zero};
  OptimizerState sz;
  const float factor = static_cast<float>(1.0 - cfg.learning_rate * cfg.weight_decay);
  std::vector<float> expect = v;
  bool geometric = true;
  for (int t = 0; t < 1000; ++t) {
    adamw_step(pv, gz, sz, cfg);
    for (std::size_t i = 0; i < 2; ++i) {
      // one float rounding per step of the product
      const float next = expect[i] * factor;
      if (std::fabs(v[i] - next) > std::fabs(next) * 0x1.0p-22f) geometric = false;
      expect[i] = v[i];
    }
  }
  const double series = 3.0 * std::pow(1.0 - 1e-4, 1000);
  geometric = geometric && std::fabs(v[0] - series) / series < 1e-4;
  return {first_ok && geometric,
          fmt("first step %.6f (derived %.6f); zero-gradient decay geometric over 1000 steps: %s",
              w[0], derived, geometric ? "yes" : "no")};
}

Outcome separable_oracle() {
  std::vector<Shard> shards;
  std::mt19937_64 rng(4);
  std::normal_distribution<float> noise(0.0f, 0.5f);
  for (std::uint32_t d = 0; d < 3; ++d) {
    Shard s;
    s.header = {kShardFormatVersion, d, "synthetic", 4, DType::f32, 8, "synthetic"};
    for (std::uint32_t p = 0; p < 8; ++p) {
      TokenRecord r{p, p, std::vector<float>(4)};
      for (std::uint32_t k = 0; k < 4; ++k) r.vector[k] = noise(rng) + (k == d ? 2.0f : 0.0f);
      s.records.push_back(r);
    }
    shards.push_back(s);
  }
  const auto fs = build_feature_set(shards, SplitSpec{8, 8, 0, 0, 0}, 1, 3);
  std::vector<std::vector<double>> xs;
  std::vector<std::uint32_t> ys;
  for (const auto& e : fs.examples()) {
    xs.emplace_back(e.input.begin(), e.input.end());
    ys.push_back(e.target_doc);
  }
  const auto perceptron = oracle::perceptron_epochs(xs, ys, 3, 10000);
  if (perceptron == 0) return {false, "perceptron oracle did not separate the set"};

  Prober p({SizeClass::linear, 4, 3, 0});
  OptimizerState st;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.batch_policy = BatchPolicy::mixed;
  OptimizerConfig opt;
  opt.learning_rate = 1e-2;
  for (std::uint32_t epoch = 1; epoch <= 200; ++epoch) {
    train(p, st, fs, cfg, opt);
    cfg.shuffle_seed = epoch;
    if (split_accuracy(p, fs, SplitLabel::train).value() == 1.0) {
      return {true, fmt("perceptron separates in %zu epochs; linear prober hits 100%% train at epoch %u",
                        perceptron, epoch)};
    }
  }
  return {false, fmt("train accuracy %.3f after 200 epochs",
                     split_accuracy(p, fs, SplitLabel::train).value())};
}

struct DeskCorpus {
  Corpus corpus;
  double tv_fraction = 0.0;
};

const DeskCorpus& desk_corpus() {
  static const DeskCorpus c = [] {
    const ToyLm lm({});
    const auto tokens = generate_corpus({100, 512, 0.6, 32, 0}, lm);
    std::size_t pairs = 0, far = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      for (std::size_t j = i + 1; j < 100; ++j) {
        ++pairs;
        far += token_tv_distance(tokens.documents[i], tokens.documents[j]) >= 0.3;
      }
    }
    return DeskCorpus{make_toy_corpus(tokens, lm, {"last_hidden"}),
                      static_cast<double>(far) / static_cast<double>(pairs)};
  }();
  return c;
}

SweepSettings desk_settings() {
  SweepSettings s;
  s.train.epochs = 50;
  s.train.batch_size = 64;
  s.train.batch_policy = BatchPolicy::mixed;
  s.optimizer.learning_rate = 1e-3;
  return s;
}

Outcome end_to_end() {
  const auto& dc = desk_corpus();
  const auto cell = run_cell(dc.corpus, "last_hidden", 2, SizeClass::medium, 0, desk_settings());
  const bool ok = dc.tv_fraction >= 0.9 && cell.train.accuracy >= 0.95 && cell.test_in.accuracy >= 0.25;
  return {ok, fmt("100 docs x 512, pairs with TV >= 0.3: %.3f; train %.4f, test-in %.4f (>= 0.25), "
                  "test-out %.4f",
                  dc.tv_fraction, cell.train.accuracy, cell.test_in.accuracy, cell.test_out.accuracy)};
}

Outcome ngram_sweep() {
  SweepGrid grid;
  grid.layer_tags = {"last_hidden"};
  grid.ngrams = {1, 2, 3};
  grid.sizes = {SizeClass::medium};
  grid.seeds = {0, 1, 2, 3, 4};
  const auto table = sweep(grid, desk_corpus().corpus, desk_settings());
  bool ok = true;
  std::string detail;
  for (auto n : grid.ngrams) {
    double min_train = 1.0;
    int nonneg = 0;
    for (const auto& c : table.cells) {
      if (c.ngram != n) continue;
      min_train = std::min(min_train, c.train.accuracy);
      nonneg += c.test_in.accuracy - c.test_out.accuracy >= 0.0;
    }
    ok = ok && min_train >= 0.95 && nonneg >= 4;
    detail += fmt("%s min train %.4f, drop >= 0 in %d/5; ", ngram_name(n).c_str(), min_train, nonneg);
  }
  std::fputs(table.render_text().c_str(), stdout);
  return {ok, detail.substr(0, detail.size() - 2)};
}

std::string strip_ansi(const std::string& s) {
  const auto body = s.substr(0, s.find("\n----\n"));
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] == '\x1b') {
      i = body.find('m', i);
      continue;
    }
    out += body[i];
  }
  return out;
}

std::string strip_html(const std::string& s) {
  auto i = s.find('>', s.find("<div class=\"passage\"")) + 1;
  const auto end = s.find("</div>", i);
  std::string out;
  for (; i < end; ++i) {
    if (s[i] == '<') {
      i = s.find('>', i);
    } else if (s[i] == '&') {
      const auto semi = s.find(';', i);
      const auto e = s.substr(i, semi - i + 1);
      out += e == "&amp;" ? "&" : e == "&lt;" ? "<" : e == "&gt;" ? ">" : e == "&quot;" ? "\"" : "'";
      i = semi;
    } else {
      out += s[i];
    }
  }
  return out;
}

Outcome tagging_contract() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.95f, 1.0f);
  std::uniform_real_distribution<double> th(0.9, 0.9999);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng() % 16, docs = 1 + rng() % 8;
    Matrix p(rows, docs);
    for (auto& v : p.data) v = u(rng);
    const std::vector<std::string> toks(rows, " w");
    double a = th(rng), b = th(rng);
    if (a > b) std::swap(a, b);
    const auto lo = tag_probabilities(p, toks, 1, a);
    const auto hi = tag_probabilities(p, toks, 1, b);
    for (std::size_t i = 0; i < rows; ++i) {
      if (hi.tokens[i].attribution && lo.tokens[i].attribution != hi.tokens[i].attribution) ++violations;
      const std::set<std::uint32_t> l(lo.tokens[i].above_threshold_docs.begin(),
                                      lo.tokens[i].above_threshold_docs.end());
      for (auto d : hi.tokens[i].above_threshold_docs) violations += l.count(d) == 0;
    }
  }
  Matrix exact(1, 2);
  exact(0, 0) = 0.99f;
  exact(0, 1) = 0.5f;
  const std::vector<std::string> one{" x"};
  const bool exact_untagged = !tag_probabilities(exact, one, 1, 0.99).tokens[0].attribution;

  const std::vector<std::string> toks{"Hi", " <em>", " & ", " \"quoted\"", " it's", "\n\t",
                                      " caf\xc3\xa9", " \xf0\x9f\x99\x82", " plain"};
  Matrix p(toks.size(), 3);
  for (std::size_t r = 0; r < toks.size(); ++r) p(r, r % 3) = r % 2 ? 0.999f : 0.2f;
  const auto rep = tag_probabilities(p, toks, 1);
  std::string joined;
  for (const auto& t : toks) joined += t;
  const bool ansi_exact = strip_ansi(render(rep, RenderFormat::terminal)) == joined;
  const bool html_exact = strip_html(render(rep, RenderFormat::html)) == joined;
  return {violations == 0 && exact_untagged && ansi_exact && html_exact,
          fmt("monotonicity violations %zu over 1000 tables; p=0.99 untagged: %s; ANSI/HTML byte-exact: %s/%s",
              violations, exact_untagged ? "yes" : "no", ansi_exact ? "yes" : "no", html_exact ? "yes" : "no")};
}

Outcome format_round_trip() {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    const auto s = oracle::random_shard(rng);
    std::stringstream io;
    write_shard(s.header, s.records, io);
    const auto bytes = io.str();
    const auto back = read_shard(io);
    if (!(back.header == s.header) || back.records.size() != s.records.size()) {
      return {false, fmt("header mismatch on shard %d", i)};
    }
    for (std::size_t r = 0; r < s.records.size(); ++r) {
      const auto& a = s.records[r].vector;
      const auto& b = back.records[r].vector;
      if (s.records[r].token_id != back.records[r].token_id ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0) {
        return {false, fmt("record %zu of shard %d differs", r, i)};
      }
    }
  }
  // corruptions
  const auto s = oracle::random_shard(rng);
  const auto good = encode_shard(s.header, s.records);
  std::vector<std::pair<std::string, std::string>> cases;
  auto magic = good;
  magic[0] = 'X';
  cases.emplace_back("magic", magic);
  cases.emplace_back("truncated", good.substr(0, good.size() - 3));
  cases.emplace_back("trailing", good + "\x01");
  auto version = good;
  version[4] = 9;
  cases.emplace_back("version", version);
  std::size_t diagnosed = 0;
  for (const auto& [name, bytes] : cases) {
    try {
      decode_shard(bytes);
    } catch (const FormatError& e) {
      diagnosed += std::string(e.what()).find("byte offset") != std::string::npos;
    }
  }
  return {diagnosed == cases.size(),
          fmt("1000 random shards bit-exact; %zu/%zu corruptions rejected with byte offsets", diagnosed,
              cases.size())};
}

Outcome determinism() {
  ToyLmConfig lc;
  lc.hidden_dim = 16;
  lc.num_layers = 2;
  const ToyLm lm(lc);
  const auto tokens = generate_corpus({8, 64, 0.6, 16, 2}, lm);
  oracle::TempDir dir;
  write_toy_corpus(dir.path(), tokens, lm, {"last_hidden"});
  const auto corpus = load_corpus(dir.path());
  const SplitSpec split{64, 24, 10, 30, 3};
  const auto fs = build_feature_set(corpus.layer("last_hidden"), split, 2, 8);

  auto run = [&](BatchPolicy policy, bool streaming) {
    Prober p({SizeClass::small, 32, 8, 5});
    OptimizerState st;
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.shuffle_seed = 6;
    cfg.batch_policy = policy;
    if (streaming) {
      cfg.mode = TrainMode::streaming;
      BatchStream stream(find_shards(dir.path(), "last_hidden"), split, 2, 16, 6, policy);
      train_streaming(p, st, stream, cfg, {});
    } else {
      train(p, st, fs, cfg, {});
    }
    std::string report;
    for (auto s : kAllSplits) report += evaluate(p, fs, s).to_json();
    return std::make_pair(encode_checkpoint(p, {2, "last_hidden", 16}, &st), report);
  };
  const auto a = run(BatchPolicy::per_document, false);
  const auto b = run(BatchPolicy::per_document, false);
  const bool repeat = a == b;
  bool stream_equal = true;
  for (auto policy : {BatchPolicy::per_document, BatchPolicy::packed, BatchPolicy::mixed}) {
    stream_equal = stream_equal && run(policy, false).first == run(policy, true).first;
  }
  return {repeat && stream_equal,
          fmt("repeat run checkpoints+reports identical: %s; streaming == in-memory for all policies: %s",
              repeat ? "yes" : "no", stream_equal ? "yes" : "no")};
}

Outcome extreme_label() {
  const auto t0 = std::chrono::steady_clock::now();
  const ToyLm lm({});
  oracle::TempDir dir;
  write_toy_corpus(dir.path(), generate_corpus({1000, 512, 0.6, 32, 0}, lm), lm, {"last_hidden"});
  BatchStream stream(find_shards(dir.path(), "last_hidden"), SplitSpec{}, 2, 64, 0, BatchPolicy::mixed);
  Prober p({SizeClass::large, stream.input_dim(), stream.num_docs(), 0});
  OptimizerState st;
  TrainConfig cfg;
  cfg.mode = TrainMode::streaming;
  cfg.batch_policy = BatchPolicy::mixed;
  cfg.epochs = 1000;
  cfg.max_steps = 50000;
  cfg.eval_every = 1000;
  const auto result = train_streaming(p, st, stream, cfg, {});

  const auto& pts = result.history.points;
  std::vector<double> ma;
  for (std::size_t i = 4; i < pts.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = i - 4; k <= i; ++k) s += pts[k].train_accuracy;
    ma.push_back(s / 5);
  }
  std::size_t decreases = 0;
  double worst_drop = 0.0;
  std::string drop_steps;
  for (std::size_t i = 1; i < ma.size(); ++i) {
    if (ma[i] < ma[i - 1]) {
      ++decreases;
      worst_drop = std::max(worst_drop, ma[i - 1] - ma[i]);
      drop_steps += fmt(" %llu", static_cast<unsigned long long>(pts[i + 4].step));
    }
  }
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  const double peak_gb = static_cast<double>(ru.ru_maxrss) / (1024.0 * 1024.0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fputs("  step,train_acc\n", stdout);
  for (const auto& pt : pts) {
    if (pt.step % 5000 == 0) std::printf("  %llu,%.4f\n", static_cast<unsigned long long>(pt.step), pt.train_accuracy);
  }
  const bool ok = result.stats.steps == 50000 && peak_gb < 4.0 && decreases == 0 && !ma.empty();
  return {ok, fmt("%llu steps in %.0f s, peak RSS %.2f GB; train acc %.4f -> %.4f; 5-point moving "
                  "average decreases %zu times (worst %.4f) at steps%s",
                  static_cast<unsigned long long>(result.stats.steps), secs, peak_gb,
                  pts.empty() ? 0.0 : pts.front().train_accuracy,
                  pts.empty() ? 0.0 : pts.back().train_accuracy, decreases, worst_drop,
                  drop_steps.empty() ? " none" : drop_steps.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"split-exactness", split_exactness},
      {"gradient-correctness", gradient_correctness},
      {"optimizer-oracle", optimizer_oracle},
      {"separable-oracle", separable_oracle},
      {"end-to-end", end_to_end},
      {"ngram-sweep", ngram_sweep},
      {"tagging-contract", tagging_contract},
      {"format-round-trip", format_round_trip},
      {"determinism", determinism},
      {"extreme-label", extreme_label},
  };
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string name; std::getline(list, name, ',');) only.insert(name);
    } else if (std::strcmp(argv[i], "--list") == 0) {
      for (const auto& [name, fn] : criteria) std::printf("%s\n", name.c_str());
      return 0;
    } else {
      std::fprintf(stderr, "usage: %s [--only name,...] [--list]\n", argv[0]);
      return 2;
    }
  }
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
