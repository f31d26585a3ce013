// SPDX-License-Identifier: Apache-2.0
#include "srcid/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "srcid/errors.hpp"
#include "srcid/rng.hpp"

namespace srcid {

std::string ngram_name(std::uint32_t n) {
  switch (n) {
    case 1: return "unigram";
    case 2: return "bigram";
    case 3: return "trigram";
    default: return std::to_string(n) + "-gram";
  }
}

SweepCell run_cell(const Corpus& corpus, const std::string& layer_tag, std::uint32_t ngram,
                   SizeClass size, std::uint64_t seed, const SweepSettings& settings) {
  const auto& shards = corpus.layer(layer_tag);
  auto split = settings.split;
  split.seed = mix_seed(settings.split.seed, seed);
  const auto features = build_feature_set(shards, split, ngram, corpus.num_docs());

  ProberConfig pc;
  pc.size_class = size;
  pc.input_dim = features.meta().input_dim();
  pc.num_docs = std::max(corpus.num_docs(), features.meta().num_docs);
  pc.init_seed = seed;
  Prober prober(pc);

  auto train_cfg = settings.train;
  train_cfg.shuffle_seed = seed;
  train_cfg.mode = TrainMode::in_memory;
  OptimizerState state;

  SweepCell cell;
  cell.layer_tag = layer_tag;
  cell.ngram = ngram;
  cell.size = size;
  cell.seed = seed;
  cell.history = train(prober, state, features, train_cfg, settings.optimizer).history;
  cell.train = evaluate(prober, features, SplitLabel::train, settings.eval);
  cell.test_in = evaluate(prober, features, SplitLabel::test_in, settings.eval);
  cell.test_out = evaluate(prober, features, SplitLabel::test_out, settings.eval);
  return cell;
}

SweepTable sweep(const SweepGrid& grid, const Corpus& corpus, const SweepSettings& settings) {
  struct Job {
    std::string tag;
    std::uint32_t n;
    SizeClass size;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& tag : grid.layer_tags) {
    corpus.layer(tag);  // fail fast on a missing layer
    for (auto n : grid.ngrams) {
      for (auto size : grid.sizes) {
        for (auto seed : grid.seeds) jobs.push_back({tag, n, size, seed});
      }
    }
  }

  SweepTable table;
  table.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto& j = jobs[i];
        table.cells[i] = run_cell(corpus, j.tag, j.n, j.size, j.seed, settings);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(settings.jobs, static_cast<unsigned>(jobs.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return table;
}

namespace {

struct Mean {
  double sum = 0.0;
  int count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double value() const { return count ? sum / count : 0.0; }
};

}  // namespace

std::string SweepTable::render_text() const {
  std::vector<std::uint32_t> ngrams;
  std::vector<std::string> rows;
  std::map<std::pair<std::string, std::uint32_t>, std::pair<Mean, Mean>> acc;
  for (const auto& c : cells) {
    if (std::find(ngrams.begin(), ngrams.end(), c.ngram) == ngrams.end()) ngrams.push_back(c.ngram);
    const std::string row = c.layer_tag + " " + to_string(c.size);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    auto& [in, out] = acc[{row, c.ngram}];
    in.add(c.test_in.accuracy);
    out.add(c.test_out.accuracy);
  }
  std::sort(ngrams.begin(), ngrams.end());

  std::size_t label_width = 6;
  for (const auto& r : rows) label_width = std::max(label_width, r.size());
  constexpr int kInWidth = 9;
  constexpr int kOutWidth = 18;
  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-*s |", static_cast<int>(label_width), "");
  out += buf;
  std::snprintf(buf, sizeof(buf), " %-*s|", static_cast<int>(ngrams.size()) * kInWidth, "Test-In");
  out += buf;
  std::snprintf(buf, sizeof(buf), " %s\n", "Test-Out");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-*s |", static_cast<int>(label_width), "layer / size");
  out += buf;
  for (auto n : ngrams) {
    std::snprintf(buf, sizeof(buf), " %-*s", kInWidth - 1, ngram_name(n).c_str());
    out += buf;
  }
  out += "|";
  for (auto n : ngrams) {
    std::snprintf(buf, sizeof(buf), " %-*s", kOutWidth - 1, ngram_name(n).c_str());
    out += buf;
  }
  out += "\n" + std::string(out.size() - out.rfind('\n', out.size() - 2) - 2, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s |", static_cast<int>(label_width), r.c_str());
    out += buf;
    for (auto n : ngrams) {
      const auto it = acc.find({r, n});
      if (it == acc.end()) {
        std::snprintf(buf, sizeof(buf), " %-*s", kInWidth - 1, "-");
      } else {
        std::snprintf(buf, sizeof(buf), " %-*.3f", kInWidth - 1, it->second.first.value());
      }
      out += buf;
    }
    out += "|";
    for (auto n : ngrams) {
      const auto it = acc.find({r, n});
      if (it == acc.end()) {
        std::snprintf(buf, sizeof(buf), " %-*s", kOutWidth - 1, "-");
      } else {
        const double in = it->second.first.value();
        const double o = it->second.second.value();
        char cell[64];
        std::snprintf(cell, sizeof(cell), "%.3f (%+.3f)", o, o - in);
        std::snprintf(buf, sizeof(buf), " %-*s", kOutWidth - 1, cell);
      }
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string SweepTable::render_layer_pair(const std::string& first,
                                          const std::string& second) const {
  std::map<std::pair<std::string, std::uint32_t>, std::pair<Mean, Mean>> acc;
  std::vector<std::pair<std::string, std::uint32_t>> keys;
  for (const auto& c : cells) {
    if (c.layer_tag != first && c.layer_tag != second) continue;
    const std::pair<std::string, std::uint32_t> key{to_string(c.size), c.ngram};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    auto& slot = acc[key];
    (c.layer_tag == first ? slot.first : slot.second).add(c.test_in.accuracy);
  }
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-18s | %-12s | %-12s\n", "prober", first.c_str(), second.c_str());
  out += buf;
  out += std::string(48, '-') + "\n";
  for (const auto& key : keys) {
    const auto& [a, b] = acc[key];
    const std::string label = ngram_name(key.second) + " " + key.first;
    std::string av = a.count ? std::to_string(a.value()).substr(0, 5) : "-";
    std::string bv = b.count ? std::to_string(b.value()).substr(0, 5) : "-";
    std::snprintf(buf, sizeof(buf), "%-18s | %-12s | %-12s\n", label.c_str(), av.c_str(), bv.c_str());
    out += buf;
  }
  return out;
}

std::string SweepTable::to_csv() const {
  std::string out =
      "layer_tag,ngram,size,seed,train_acc,test_in_acc,test_out_acc,test_out_drop,"
      "train_total,test_in_total,test_out_total\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "%s,%u,%s,%llu,%.6f,%.6f,%.6f,%.6f,%llu,%llu,%llu\n",
                  c.layer_tag.c_str(), c.ngram, to_string(c.size),
                  static_cast<unsigned long long>(c.seed), c.train.accuracy, c.test_in.accuracy,
                  c.test_out.accuracy, c.test_in.accuracy - c.test_out.accuracy,
                  static_cast<unsigned long long>(c.train.total),
                  static_cast<unsigned long long>(c.test_in.total),
                  static_cast<unsigned long long>(c.test_out.total));
    out += buf;
  }
  return out;
}

std::string SweepTable::to_json() const {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json j;
    j["layer_tag"] = c.layer_tag;
    j["ngram"] = c.ngram;
    j["size"] = to_string(c.size);
    j["seed"] = c.seed;
    j["train"] = nlohmann::ordered_json::parse(c.train.to_json());
    j["test_in"] = nlohmann::ordered_json::parse(c.test_in.to_json());
    j["test_out"] = nlohmann::ordered_json::parse(c.test_out.to_json());
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace srcid
