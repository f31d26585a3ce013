// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "srcid/activation_store.hpp"
#include "srcid/checkpoint.hpp"
#include "srcid/corpus.hpp"
#include "srcid/errors.hpp"
#include "srcid/evaluator.hpp"
#include "srcid/features.hpp"
#include "srcid/prober.hpp"
#include "srcid/splitter.hpp"
#include "srcid/sweep.hpp"
#include "srcid/tagger.hpp"
#include "srcid/toy_lm.hpp"
#include "srcid/trainer.hpp"
#include "srcid/version.hpp"

namespace srcid::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Option tables and flag/file layering

enum class Kind { uint, real, text, flag, uint_list, text_list };

struct OptSpec {
  std::string name;
  Kind kind;
  json fallback;  // null: no default
  std::string help;
  bool required = false;
};

json parse_flag_value(const OptSpec& spec, const std::string& raw) {
  const auto fail = [&](const char* what) {
    return UsageError("--" + spec.name + ": expected " + what + ", got '" + raw + "'");
  };
  auto parse_uint = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw fail("a non-negative integer");
    }
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw fail("a non-negative integer");
    }
  };
  auto split_list = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
      if (!item.empty()) parts.push_back(item);
    }
    return parts;
  };
  switch (spec.kind) {
    case Kind::uint: return parse_uint(raw);
    case Kind::real: {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(raw, &used);
      } catch (const std::exception&) {
        throw fail("a number");
      }
      if (used != raw.size() || !std::isfinite(v)) throw fail("a number");
      return v;
    }
    case Kind::text: return raw;
    case Kind::flag: return true;
    case Kind::uint_list: {
      json arr = json::array();
      for (const auto& item : split_list(raw)) arr.push_back(parse_uint(item));
      return arr;
    }
    case Kind::text_list: {
      json arr = json::array();
      for (const auto& item : split_list(raw)) arr.push_back(item);
      return arr;
    }
  }
  return raw;
}

json check_file_value(const OptSpec& spec, const json& value) {
  const auto fail = [&](const char* what) {
    return UsageError("config key '" + spec.name + "': expected " + what);
  };
  if (value.is_null()) return value;
  switch (spec.kind) {
    case Kind::uint:
      if (!value.is_number_unsigned()) throw fail("a non-negative integer");
      return value;
    case Kind::real:
      if (!value.is_number()) throw fail("a number");
      return value.get<double>();
    case Kind::text:
      if (!value.is_string()) throw fail("a string");
      return value;
    case Kind::flag:
      if (!value.is_boolean()) throw fail("a boolean");
      return value;
    case Kind::uint_list:
      if (!value.is_array()) throw fail("an array of non-negative integers");
      for (const auto& v : value) {
        if (!v.is_number_unsigned()) throw fail("an array of non-negative integers");
      }
      return value;
    case Kind::text_list:
      if (!value.is_array()) throw fail("an array of strings");
      for (const auto& v : value) {
        if (!v.is_string()) throw fail("an array of strings");
      }
      return value;
  }
  return value;
}

/// Resolved configuration of one invocation.
class Config {
public:
  explicit Config(json values) : values_(std::move(values)) {}

  const json& values() const { return values_; }
  bool has(const std::string& key) const { return !values_.at(key).is_null(); }
  std::uint64_t u64(const std::string& key) const { return values_.at(key).get<std::uint64_t>(); }
  std::uint32_t u32(const std::string& key) const {
    const auto v = u64(key);
    if (v > UINT32_MAX) throw UsageError("--" + key + " is out of range");
    return static_cast<std::uint32_t>(v);
  }
  double real(const std::string& key) const { return values_.at(key).get<double>(); }
  std::string text(const std::string& key) const { return values_.at(key).get<std::string>(); }
  bool flag(const std::string& key) const { return values_.at(key).get<bool>(); }
  std::vector<std::string> texts(const std::string& key) const {
    return values_.at(key).get<std::vector<std::string>>();
  }
  std::vector<std::uint32_t> u32s(const std::string& key) const {
    std::vector<std::uint32_t> out;
    for (auto v : values_.at(key).get<std::vector<std::uint64_t>>()) {
      if (v > UINT32_MAX) throw UsageError("--" + key + " is out of range");
      out.push_back(static_cast<std::uint32_t>(v));
    }
    return out;
  }
  std::vector<std::uint64_t> u64s(const std::string& key) const {
    return values_.at(key).get<std::vector<std::uint64_t>>();
  }

private:
  json values_;
};

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  // A run manifest carries the resolved settings under "config".
  if (doc.contains("config") && doc.contains("subcommand")) doc = doc["config"];
  if (!doc.is_object()) throw UsageError("config file " + path + " has a malformed config block");
  return doc;
}

struct Subcommand {
  std::string name;
  std::string description;
  std::vector<OptSpec> options;
  std::string positional;  // option that may also be given positionally
  std::function<int(const Config&, std::ostream&, std::ostream&)> handler;
};

// ---------------------------------------------------------------------------
// Shared helpers

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string run_id(const std::string& subcommand, const json& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : subcommand + "\n" + config.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw ValidationError(std::string(what) + " directory not found: " + dir.string());
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " not found: " + path.string());
}

/// Refuses output directories that coincide with an input directory, so no
/// subcommand overwrites its inputs.
void check_out_dir(const fs::path& out, const std::vector<fs::path>& inputs) {
  for (const auto& in : inputs) {
    if (fs::exists(out) && fs::exists(in) && fs::equivalent(out, in)) {
      throw UsageError("--out must differ from input directory " + in.string());
    }
  }
}

/// Collects output artifacts and writes the manifest at the run root.
class Run {
public:
  Run(std::string subcommand, const Config& config, fs::path out)
      : subcommand_(std::move(subcommand)), config_(config), out_(std::move(out)), started_(utc_now()) {
    fs::create_directories(out_);
  }

  const fs::path& dir() const { return out_; }

  void input(const fs::path& path) { inputs_.push_back(path.string()); }

  fs::path output(const std::string& relative, const std::string& contents) {
    const auto path = out_ / relative;
    write_text(path, contents);
    outputs_.push_back(relative);
    return path;
  }

  void record_output(const fs::path& absolute) {
    outputs_.push_back(fs::relative(absolute, out_).generic_string());
  }

  void finish() {
    json seeds = json::object();
    for (const auto& [key, value] : config_.values().items()) {
      if (key.find("seed") != std::string::npos) seeds[key] = value;
    }
    json manifest;
    manifest["tool"] = "srcid";
    manifest["version"] = kVersion;
    manifest["subcommand"] = subcommand_;
    manifest["run_id"] = run_id(subcommand_, config_.values());
    manifest["config"] = config_.values();
    manifest["seeds"] = seeds;
    manifest["inputs"] = inputs_;
    manifest["outputs"] = outputs_;
    manifest["timestamps"] = {{"started", started_}, {"finished", utc_now()}};
    write_text(out_ / "manifest.json", manifest.dump(2) + "\n");
  }

private:
  std::string subcommand_;
  const Config& config_;
  fs::path out_;
  std::string started_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

const std::vector<OptSpec> kSplitOptions = {
    {"split-seed", Kind::uint, 0, "base seed of the per-document splits"},
    {"split-len", Kind::uint, 512, "tokens per document covered by the split"},
    {"split-train", Kind::uint, 180, "train positions per document"},
    {"split-test-in", Kind::uint, 76, "test-in positions per document"},
    {"split-test-out", Kind::uint, 256, "test-out positions per document"},
};

const std::vector<OptSpec> kOptimizerOptions = {
    {"lr", Kind::real, 1e-3, "AdamW learning rate"},
    {"beta1", Kind::real, 0.9, "AdamW beta1"},
    {"beta2", Kind::real, 0.999, "AdamW beta2"},
    {"epsilon", Kind::real, 1e-8, "AdamW epsilon"},
    {"weight-decay", Kind::real, 0.01, "AdamW decoupled weight decay"},
};

std::vector<OptSpec> concat(std::vector<OptSpec> a, const std::vector<OptSpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

SplitSpec split_from(const Config& c) {
  SplitSpec s;
  s.total_len = c.u32("split-len");
  s.train_count = c.u32("split-train");
  s.test_in_count = c.u32("split-test-in");
  s.test_out_count = c.u32("split-test-out");
  s.seed = c.u64("split-seed");
  s.validate();
  return s;
}

OptimizerConfig optimizer_from(const Config& c) {
  OptimizerConfig o;
  o.learning_rate = c.real("lr");
  o.beta1 = c.real("beta1");
  o.beta2 = c.real("beta2");
  o.epsilon = c.real("epsilon");
  o.weight_decay = c.real("weight-decay");
  o.validate();
  return o;
}

template <typename Fn>
auto parse_choice(const std::string& flag, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw UsageError("--" + flag + ": " + e.what());
  }
}

ToyLmConfig read_toy_lm_config(const fs::path& corpus_dir) {
  const auto path = corpus_dir / "toy_lm.json";
  require_file(path, "toy LM description");
  json j;
  try {
    j = json::parse(read_text(path));
    ToyLmConfig c;
    c.vocab_size = j.at("vocab_size").get<std::uint32_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::uint32_t>();
    c.num_layers = j.at("num_layers").get<std::uint32_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mixing_halflife = j.at("mixing_halflife").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError("malformed " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// gen-corpus

int cmd_gen_corpus(const Config& c, std::ostream& out, std::ostream&) {
  ToyLmConfig lm_cfg;
  lm_cfg.vocab_size = c.u32("vocab");
  lm_cfg.hidden_dim = c.u32("hidden");
  lm_cfg.num_layers = c.u32("layers");
  lm_cfg.seed = c.u64("seed");
  lm_cfg.mixing_halflife = c.real("halflife");
  CorpusSpec spec;
  spec.num_docs = c.u32("docs");
  spec.tokens_per_doc = c.u32("tokens");
  spec.skew = c.real("skew");
  spec.private_vocab = c.u32("private-vocab");
  spec.seed = c.u64("seed");
  try {
    lm_cfg.validate();
    spec.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }

  const ToyLm lm(lm_cfg);
  const auto tags = c.texts("tags");
  const auto known = lm.layer_tags();
  for (const auto& t : tags) {
    if (std::find(known.begin(), known.end(), t) == known.end()) {
      throw UsageError("--tags: unknown layer tag '" + t + "'");
    }
  }
  const auto corpus = generate_corpus(spec, lm);

  Run run("gen-corpus", c, c.text("out"));
  for (const auto& path : write_toy_corpus(run.dir(), corpus, lm, tags)) run.record_output(path);
  json lm_json;
  lm_json["model_id"] = lm.model_id();
  lm_json["vocab_size"] = lm_cfg.vocab_size;
  lm_json["hidden_dim"] = lm_cfg.hidden_dim;
  lm_json["num_layers"] = lm_cfg.num_layers;
  lm_json["seed"] = lm_cfg.seed;
  lm_json["mixing_halflife"] = lm_cfg.mixing_halflife;
  run.output("toy_lm.json", lm_json.dump(2) + "\n");
  json docs = json::array();
  for (const auto& d : corpus.documents) docs.push_back(d);
  run.output("tokens.json", json{{"documents", docs}}.dump() + "\n");

  // Pairwise TV is quadratic in the corpus size; report it over a prefix.
  constexpr std::size_t kTvDocs = 200;
  const std::size_t checked = std::min(kTvDocs, corpus.documents.size());
  std::size_t pairs = 0;
  std::size_t separated = 0;
  for (std::size_t a = 0; a < checked; ++a) {
    for (std::size_t b = a + 1; b < checked; ++b) {
      ++pairs;
      if (token_tv_distance(corpus.documents[a], corpus.documents[b]) >= 0.3) ++separated;
    }
  }
  run.finish();
  out << "wrote " << spec.num_docs << " documents x " << spec.tokens_per_doc << " tokens to "
      << run.dir().string() << "\n";
  if (pairs > 0) {
    out << "document pairs with token TV >= 0.3: " << separated << "/" << pairs;
    if (checked < corpus.documents.size()) out << " (first " << checked << " documents)";
    out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const Config& c, std::ostream& out, std::ostream&) {
  const fs::path shards = c.text("shards");
  require_dir(shards, "shards");
  check_out_dir(c.text("out"), {shards});
  const auto split = split_from(c);
  const auto opt = optimizer_from(c);
  const auto n = c.u32("ngram");
  if (n == 0) throw UsageError("--ngram must be at least 1");
  const auto size = parse_choice("size", [&] { return parse_size_class(c.text("size")); });
  const auto layer = c.text("layer");

  TrainConfig tc;
  tc.epochs = c.u32("epochs");
  tc.batch_size = c.u32("batch-size");
  tc.shuffle_seed = c.u64("seed");
  tc.mode = parse_choice("mode", [&] { return parse_train_mode(c.text("mode")); });
  tc.batch_policy = parse_choice("batch-policy", [&] { return parse_batch_policy(c.text("batch-policy")); });
  if (c.u64("max-steps") > 0) tc.max_steps = c.u64("max-steps");
  if (c.u64("eval-every") > 0) tc.eval_every = c.u64("eval-every");
  tc.prefetch = c.flag("prefetch");
  try {
    tc.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }

  const auto catalog = load_catalog(catalog_path(shards));
  ProberConfig pc;
  pc.size_class = size;
  pc.init_seed = c.u64("seed");
  pc.num_docs = catalog.size();
  OptimizerState state;
  std::optional<Prober> prober;
  TrainResult result;
  std::uint32_t hidden_dim = 0;
  std::vector<fs::path> inputs;

  if (tc.mode == TrainMode::streaming) {
    inputs = find_shards(shards, layer);
    if (inputs.empty()) throw ValidationError("no shards for layer tag '" + layer + "' in " + shards.string());
    BatchStream stream(inputs, split, n, tc.batch_size, tc.shuffle_seed, tc.batch_policy, tc.prefetch);
    hidden_dim = stream.hidden_dim();
    pc.input_dim = stream.input_dim();
    pc.num_docs = std::max(pc.num_docs, stream.num_docs());
    prober.emplace(pc);
    result = train_streaming(*prober, state, stream, tc, opt);
  } else {
    const auto corpus = load_corpus(shards, {layer});
    inputs = find_shards(shards, layer);
    const auto features = build_feature_set(corpus.layer(layer), split, n, corpus.num_docs());
    hidden_dim = features.meta().hidden_dim;
    pc.input_dim = features.meta().input_dim();
    pc.num_docs = std::max(pc.num_docs, features.meta().num_docs);
    prober.emplace(pc);
    result = train(*prober, state, features, tc, opt);
  }

  Run run("train", c, c.text("out"));
  run.input(catalog_path(shards));
  for (const auto& p : inputs) run.input(p);
  const auto ckpt = run.dir() / "prober.sidp";
  save_checkpoint(ckpt, *prober, FeatureBinding{n, layer, hidden_dim}, &state);
  run.record_output(ckpt);
  run.output("history.csv", result.history.to_csv());
  run.finish();

  out << "trained " << to_string(size) << " " << ngram_name(n) << " prober on " << layer << ": "
      << result.stats.steps << " steps, " << result.stats.examples << " examples\n";
  if (!result.history.points.empty()) {
    const auto& last = result.history.points.back();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "final train_loss %.6f train_acc %.4f", last.train_loss,
                  last.train_accuracy);
    out << buf;
    if (last.test_in_accuracy) {
      std::snprintf(buf, sizeof(buf), " test_in_acc %.4f", *last.test_in_accuracy);
      out << buf;
    }
    out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

std::string report_line(const EvalReport& r) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-9s accuracy %.4f (%llu/%llu)  precision@%.2f %.4f  recall %.4f",
                to_string(r.split), r.accuracy, static_cast<unsigned long long>(r.correct),
                static_cast<unsigned long long>(r.total), r.threshold_metrics.threshold,
                r.threshold_metrics.precision(), r.threshold_metrics.recall());
  return buf;
}

int cmd_eval(const Config& c, std::ostream& out, std::ostream&) {
  const fs::path shards = c.text("shards");
  const fs::path ckpt_path = c.text("checkpoint");
  require_dir(shards, "shards");
  require_file(ckpt_path, "checkpoint");
  check_out_dir(c.text("out"), {shards});
  const auto split = split_from(c);
  EvalOptions eo;
  eo.threshold = c.real("threshold");
  eo.top_confusions = c.u32("top-confusions");
  if (!(eo.threshold > 0.0 && eo.threshold < 1.0)) throw UsageError("--threshold must lie in (0, 1)");

  const auto ckpt = load_checkpoint(ckpt_path);
  const auto& binding = ckpt.features;
  const auto corpus = load_corpus(shards, {binding.layer_tag});
  const auto features =
      build_feature_set(corpus.layer(binding.layer_tag), split, binding.ngram, corpus.num_docs());
  if (features.meta().input_dim() != ckpt.prober.input_dim()) {
    throw ValidationError("checkpoint expects input width " + std::to_string(ckpt.prober.input_dim()) +
                          ", shards give " + std::to_string(features.meta().input_dim()));
  }
  if (features.meta().num_docs > ckpt.prober.num_docs()) {
    throw ValidationError("corpus has more documents than the checkpoint's label space");
  }

  std::vector<EvalReport> reports;
  json j;
  for (auto label : kAllSplits) {
    reports.push_back(evaluate(ckpt.prober, features, label, eo));
    j[to_string(label)] = json::parse(reports.back().to_json());
  }

  Run run("eval", c, c.text("out"));
  run.input(ckpt_path);
  run.input(catalog_path(shards));
  for (const auto& p : find_shards(shards, binding.layer_tag)) run.input(p);
  run.output("eval.json", j.dump(2) + "\n");
  run.output("eval.csv", reports_to_csv(reports));
  run.finish();
  for (const auto& r : reports) out << report_line(r) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

int cmd_sweep(const Config& c, std::ostream& out, std::ostream&) {
  const fs::path shards = c.text("shards");
  require_dir(shards, "shards");
  check_out_dir(c.text("out"), {shards});
  SweepGrid grid;
  grid.layer_tags = c.texts("layers");
  grid.ngrams = c.u32s("ngrams");
  grid.seeds = c.u64s("seeds");
  grid.sizes.clear();
  for (const auto& s : c.texts("sizes")) {
    grid.sizes.push_back(parse_choice("sizes", [&] { return parse_size_class(s); }));
  }
  if (grid.layer_tags.empty() || grid.ngrams.empty() || grid.sizes.empty() || grid.seeds.empty()) {
    throw UsageError("every sweep axis needs at least one value");
  }
  for (auto n : grid.ngrams) {
    if (n == 0) throw UsageError("--ngrams: n-gram size must be at least 1");
  }
  const auto pair = c.texts("pair");
  if (!pair.empty() && pair.size() != 2) throw UsageError("--pair takes exactly two layer tags");

  SweepSettings settings;
  settings.split = split_from(c);
  settings.optimizer = optimizer_from(c);
  settings.train.epochs = c.u32("epochs");
  settings.train.batch_size = c.u32("batch-size");
  settings.train.batch_policy =
      parse_choice("batch-policy", [&] { return parse_batch_policy(c.text("batch-policy")); });
  try {
    settings.train.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  settings.jobs = std::max(1u, c.u32("jobs"));

  const auto corpus = load_corpus(shards, grid.layer_tags);
  const auto table = sweep(grid, corpus, settings);

  Run run("sweep", c, c.text("out"));
  run.input(catalog_path(shards));
  for (const auto& tag : grid.layer_tags) {
    for (const auto& p : find_shards(shards, tag)) run.input(p);
  }
  const auto text = table.render_text();
  run.output("table.txt", text);
  run.output("sweep.csv", table.to_csv());
  run.output("sweep.json", table.to_json() + "\n");
  for (const auto& cell : table.cells) {
    std::string tag = cell.layer_tag;
    std::replace(tag.begin(), tag.end(), ':', '-');
    run.output("history/" + tag + "_n" + std::to_string(cell.ngram) + "_" + to_string(cell.size) +
                   "_s" + std::to_string(cell.seed) + ".csv",
               cell.history.to_csv());
  }
  out << text;
  if (!pair.empty()) {
    const auto pair_text = table.render_layer_pair(pair[0], pair[1]);
    run.output("pair.txt", pair_text);
    out << "\n" << pair_text;
  }
  run.finish();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// tag

int cmd_tag(const Config& c, std::ostream& out, std::ostream&) {
  const fs::path ckpt_path = c.text("checkpoint");
  require_file(ckpt_path, "checkpoint");
  const int sources = (c.text("text").empty() ? 0 : 1) + (c.text("text-file").empty() ? 0 : 1) +
                      (c.has("doc") ? 1 : 0) + (c.text("shard").empty() ? 0 : 1);
  if (sources != 1) throw UsageError("give exactly one of --text, --text-file, --doc, --shard");
  const double threshold = c.real("threshold");
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("--threshold must lie in (0, 1)");

  const auto ckpt = load_checkpoint(ckpt_path);
  const auto n = ckpt.features.ngram;
  const auto& tag = ckpt.features.layer_tag;

  std::optional<fs::path> corpus_dir;
  if (!c.text("corpus").empty()) {
    corpus_dir = c.text("corpus");
    require_dir(*corpus_dir, "corpus");
    check_out_dir(c.text("out"), {*corpus_dir});
  }
  std::optional<DocumentCatalog> catalog;
  std::optional<ToyLm> lm;
  if (corpus_dir) {
    if (fs::exists(catalog_path(*corpus_dir))) catalog = load_catalog(catalog_path(*corpus_dir));
    if (fs::exists(*corpus_dir / "toy_lm.json")) lm.emplace(read_toy_lm_config(*corpus_dir));
  }

  std::vector<std::string> texts;
  std::vector<TokenRecord> records;
  std::vector<fs::path> inputs{ckpt_path};
  if (!c.text("shard").empty()) {
    const fs::path shard_path = c.text("shard");
    require_file(shard_path, "shard");
    inputs.push_back(shard_path);
    auto shard = read_shard_file(shard_path);
    if (shard.header.layer_tag != tag) {
      throw ValidationError("shard layer tag '" + shard.header.layer_tag +
                            "' does not match the checkpoint's '" + tag + "'");
    }
    const auto lo = std::min<std::size_t>(c.u64("start"), shard.records.size());
    const auto hi = std::min<std::size_t>(lo + c.u64("length"), shard.records.size());
    for (std::size_t i = lo; i < hi; ++i) {
      const auto id = shard.records[i].token_id;
      texts.push_back(lm && id < lm->config().vocab_size ? lm->token_text(id) : " <" + std::to_string(id) + ">");
      records.push_back(std::move(shard.records[i]));
    }
  } else {
    if (!lm) throw UsageError("--corpus must point at a generated toy corpus to tag text");
    std::vector<std::uint32_t> ids;
    if (c.has("doc")) {
      const auto tokens_path = *corpus_dir / "tokens.json";
      require_file(tokens_path, "token file");
      inputs.push_back(tokens_path);
      const auto docs = json::parse(read_text(tokens_path)).at("documents");
      const auto d = c.u64("doc");
      if (d >= docs.size()) throw ValidationError("--doc " + std::to_string(d) + " is not in the corpus");
      const auto all = docs[d].get<std::vector<std::uint32_t>>();
      const auto lo = std::min<std::size_t>(c.u64("start"), all.size());
      const auto hi = std::min<std::size_t>(lo + c.u64("length"), all.size());
      ids.assign(all.begin() + static_cast<std::ptrdiff_t>(lo), all.begin() + static_cast<std::ptrdiff_t>(hi));
      for (auto id : ids) texts.push_back(lm->token_text(id));
    } else {
      std::string text = c.text("text");
      if (!c.text("text-file").empty()) {
        inputs.push_back(c.text("text-file"));
        text = read_text(c.text("text-file"));
      }
      for (auto& piece : lm->tokenize(text)) {
        ids.push_back(piece.id);
        texts.push_back(std::move(piece.text));
      }
    }
    if (!ids.empty()) {
      const auto acts = lm->embed(ids);
      records = lm->make_shard(0, ids, acts, tag).records;
    }
  }
  if (!records.empty() && records.front().vector.size() != ckpt.features.hidden_dim) {
    throw ValidationError("activations have width " + std::to_string(records.front().vector.size()) +
                          ", checkpoint expects " + std::to_string(ckpt.features.hidden_dim));
  }

  Matrix probs(0, ckpt.prober.num_docs());
  if (records.size() >= n) probs = ckpt.prober.predict_proba(window_matrix(records, n));
  const auto report = tag_probabilities(probs, texts, n, threshold, catalog ? &*catalog : nullptr);

  const auto ansi = render(report, RenderFormat::terminal);
  if (!c.text("out").empty()) {
    Run run("tag", c, c.text("out"));
    for (const auto& p : inputs) run.input(p);
    if (catalog) run.input(catalog_path(*corpus_dir));
    run.output("tagged.ansi", ansi);
    run.output("tagged.html", render(report, RenderFormat::html));
    run.output("tags.json", tag_report_to_json(report) + "\n");
    run.finish();
  }
  out << ansi;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inspect-shard

int inspect_directory(const Config& c, const fs::path& dir, std::ostream& out) {
  const auto catalog = load_catalog(catalog_path(dir));
  const auto headers = scan_shard_headers(dir);
  const auto report = validate_catalog(catalog, headers);
  out << "catalog: " << catalog.size() << " documents, " << catalog.layer_tags.size()
      << " layer tags, model " << catalog.model_id << "\n";
  out << "shards: " << headers.size() << "\n";
  json j;
  j["documents"] = catalog.size();
  j["shards"] = headers.size();
  j["violations"] = json::array();
  for (const auto& v : report) {
    out << "violation " << to_string(v.kind) << ": " << v.message << "\n";
    j["violations"].push_back({{"kind", to_string(v.kind)}, {"message", v.message}});
  }
  if (report.empty()) out << "no violations\n";
  if (!c.text("out").empty()) {
    Run run("inspect-shard", c, c.text("out"));
    run.input(catalog_path(dir));
    run.output("inspect.json", j.dump(2) + "\n");
    run.finish();
  }
  return report.empty() ? kExitOk : kExitData;
}

int cmd_inspect(const Config& c, std::ostream& out, std::ostream&) {
  const fs::path path = c.text("path");
  if (fs::is_directory(path)) return inspect_directory(c, path, out);
  require_file(path, "shard");
  const auto shard = read_shard_file(path);
  const auto& h = shard.header;
  json j;
  j["path"] = path.string();
  j["format_version"] = h.format_version;
  j["doc_id"] = h.doc_id;
  j["layer_tag"] = h.layer_tag;
  j["hidden_dim"] = h.hidden_dim;
  j["dtype"] = "f32";
  j["token_count"] = h.token_count;
  j["model_id"] = h.model_id;
  j["header_bytes"] = header_byte_size(h);
  j["record_bytes"] = record_byte_size(h.hidden_dim);
  j["file_bytes"] = fs::file_size(path);
  const auto shown = std::min<std::size_t>(c.u64("records"), shard.records.size());
  j["records"] = json::array();
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& r = shard.records[i];
    double norm = 0.0;
    for (float v : r.vector) norm += static_cast<double>(v) * v;
    json head = json::array();
    for (std::size_t k = 0; k < std::min<std::size_t>(4, r.vector.size()); ++k) head.push_back(r.vector[k]);
    j["records"].push_back({{"position", r.position}, {"token_id", r.token_id},
                            {"l2_norm", std::sqrt(norm)}, {"head", head}});
  }

  if (c.flag("json")) {
    out << j.dump(2) << "\n";
  } else {
    out << "shard " << path.string() << "\n"
        << "  format_version " << h.format_version << "\n"
        << "  doc_id         " << h.doc_id << "\n"
        << "  layer_tag      " << h.layer_tag << "\n"
        << "  hidden_dim     " << h.hidden_dim << "\n"
        << "  dtype          f32\n"
        << "  token_count    " << h.token_count << "\n"
        << "  model_id       " << h.model_id << "\n"
        << "  bytes          " << j["file_bytes"].get<std::uint64_t>() << " (header "
        << header_byte_size(h) << ", " << record_byte_size(h.hidden_dim) << " per record)\n";
    for (const auto& r : j["records"]) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  record %u: token %u, |h| = %.6g\n",
                    r["position"].get<std::uint32_t>(), r["token_id"].get<std::uint32_t>(),
                    r["l2_norm"].get<double>());
      out << buf;
    }
  }
  if (!c.text("out").empty()) {
    Run run("inspect-shard", c, c.text("out"));
    run.input(path);
    run.output("inspect.json", j.dump(2) + "\n");
    run.finish();
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// split

int cmd_split(const Config& c, std::ostream& out, std::ostream&) {
  SplitSpec spec;
  spec.total_len = c.u32("len");
  spec.train_count = c.u32("train");
  spec.test_in_count = c.u32("test-in");
  spec.test_out_count = c.u32("test-out");
  spec.seed = c.u64("seed");
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  const auto assignment = c.has("doc") ? split_for_document(spec, c.u32("doc"), spec.total_len)
                                       : make_split(spec);
  const auto text = assignment_to_json(assignment);
  if (!c.text("out").empty()) {
    Run run("split", c, c.text("out"));
    run.output("split.json", text + "\n");
    run.finish();
  }
  out << text << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<Subcommand> subcommands() {
  std::vector<Subcommand> subs;
  subs.push_back({"gen-corpus",
                  "Generate a synthetic corpus with the toy LM and write its shards and catalog",
                  {
                      {"docs", Kind::uint, 100, "number of documents"},
                      {"tokens", Kind::uint, 512, "tokens per document"},
                      {"seed", Kind::uint, 0, "seed for the toy LM and the corpus"},
                      {"out", Kind::text, nullptr, "output directory", true},
                      {"vocab", Kind::uint, 1024, "toy LM vocabulary size"},
                      {"hidden", Kind::uint, 64, "toy LM hidden width"},
                      {"layers", Kind::uint, 4, "toy LM layer count"},
                      {"halflife", Kind::real, 4.0, "context mixing half-life in tokens"},
                      {"skew", Kind::real, 0.6, "probability of a document-private token"},
                      {"private-vocab", Kind::uint, 32, "private vocabulary size per document"},
                      {"tags", Kind::text_list, json::array(), "layer tags to write (default: all)"},
                  },
                  "",
                  cmd_gen_corpus});
  subs.push_back({"train", "Train a prober on one layer of a corpus",
                  concat(concat(
                             {
                                 {"shards", Kind::text, nullptr, "corpus directory (catalog.json + shards/)", true},
                                 {"layer", Kind::text, "last_hidden", "layer tag to probe"},
                                 {"ngram", Kind::uint, 2, "window length n"},
                                 {"size", Kind::text, "medium", "prober size: linear|tiny|small|medium|large"},
                                 {"epochs", Kind::uint, 50, "passes over the training windows"},
                                 {"seed", Kind::uint, 0, "initialization and shuffling seed"},
                                 {"out", Kind::text, nullptr, "run directory", true},
                                 {"batch-size", Kind::uint, 64, "windows per update"},
                                 {"mode", Kind::text, "in_memory", "in_memory|streaming"},
                                 {"batch-policy", Kind::text, "per_document", "per_document|packed|mixed"},
                                 {"max-steps", Kind::uint, 0, "stop after this many updates (0: no limit)"},
                                 {"eval-every", Kind::uint, 0, "history cadence in steps (0: default)"},
                                 {"prefetch", Kind::flag, false, "streaming: read ahead on a worker thread"},
                             },
                             kSplitOptions),
                         kOptimizerOptions),
                  "",
                  cmd_train});
  subs.push_back({"eval", "Evaluate a checkpoint on the Train, Test-In and Test-Out splits",
                  concat(
                      {
                          {"shards", Kind::text, nullptr, "corpus directory", true},
                          {"checkpoint", Kind::text, nullptr, "prober checkpoint (.sidp)", true},
                          {"out", Kind::text, nullptr, "run directory", true},
                          {"threshold", Kind::real, 0.99, "threshold for precision/recall"},
                          {"top-confusions", Kind::uint, 10, "confusion pairs to report"},
                      },
                      kSplitOptions),
                  "",
                  cmd_eval});
  subs.push_back({"sweep", "Train and evaluate a grid of layer x n-gram x size x seed",
                  concat(concat(
                             {
                                 {"shards", Kind::text, nullptr, "corpus directory", true},
                                 {"layers", Kind::text_list, json::array({"last_hidden"}), "layer tags"},
                                 {"ngrams", Kind::uint_list, json::array({1, 2, 3}), "window lengths"},
                                 {"sizes", Kind::text_list, json::array({"medium"}), "prober sizes"},
                                 {"seeds", Kind::uint_list, json::array({0}), "seeds"},
                                 {"epochs", Kind::uint, 50, "epochs per cell"},
                                 {"batch-size", Kind::uint, 64, "windows per update"},
                                 {"batch-policy", Kind::text, "per_document", "per_document|packed|mixed"},
                                 {"jobs", Kind::uint, 1, "cells trained concurrently"},
                                 {"pair", Kind::text_list, json::array(), "two layer tags to compare"},
                                 {"out", Kind::text, nullptr, "run directory", true},
                             },
                             kSplitOptions),
                         kOptimizerOptions),
                  "",
                  cmd_sweep});
  subs.push_back({"tag", "Colour each token of a passage by its attributed source document",
                  {
                      {"checkpoint", Kind::text, nullptr, "prober checkpoint (.sidp)", true},
                      {"corpus", Kind::text, "", "corpus directory for titles and the toy LM"},
                      {"text", Kind::text, "", "passage to tag"},
                      {"text-file", Kind::text, "", "file holding the passage to tag"},
                      {"doc", Kind::uint, nullptr, "tag a span of this corpus document"},
                      {"shard", Kind::text, "", "tag a span of this shard"},
                      {"start", Kind::uint, 0, "first token of the span (--doc/--shard)"},
                      {"length", Kind::uint, 64, "tokens in the span (--doc/--shard)"},
                      {"threshold", Kind::real, kDefaultTagThreshold, "tag when probability > threshold"},
                      {"out", Kind::text, "", "run directory (optional)"},
                  },
                  "",
                  cmd_tag});
  subs.push_back({"inspect-shard", "Print a shard header and records, or validate a corpus directory",
                  {
                      {"path", Kind::text, nullptr, "shard file or corpus directory", true},
                      {"records", Kind::uint, 3, "records to show"},
                      {"json", Kind::flag, false, "print JSON"},
                      {"out", Kind::text, "", "run directory (optional)"},
                  },
                  "path",
                  cmd_inspect});
  subs.push_back({"split", "Print the Train/Test-In/Test-Out assignment as 0/1/2 codes",
                  {
                      {"len", Kind::uint, 512, "document length"},
                      {"train", Kind::uint, 180, "train positions"},
                      {"test-in", Kind::uint, 76, "test-in positions"},
                      {"test-out", Kind::uint, 256, "test-out positions"},
                      {"seed", Kind::uint, 0, "split seed"},
                      {"doc", Kind::uint, nullptr, "document id (seed becomes seed ^ doc)"},
                      {"out", Kind::text, "", "run directory (optional)"},
                  },
                  "",
                  cmd_split});
  return subs;
}

json resolve(const Subcommand& sub, const CLI::App& app, const std::map<std::string, std::string>& raw,
             const std::string& config_path) {
  json values = json::object();
  for (const auto& spec : sub.options) values[spec.name] = spec.fallback;
  if (!config_path.empty()) {
    const auto file = load_config_file(config_path);
    for (const auto& [key, value] : file.items()) {
      const auto it = std::find_if(sub.options.begin(), sub.options.end(),
                                   [&](const OptSpec& s) { return s.name == key; });
      if (it == sub.options.end()) throw UsageError("config key '" + key + "' is not an option of " + sub.name);
      values[key] = check_file_value(*it, value);
    }
  }
  for (const auto& spec : sub.options) {
    const bool given = app.count("--" + spec.name) > 0 ||
                       (spec.name == sub.positional && app.count(spec.name + "_pos") > 0);
    if (given) values[spec.name] = parse_flag_value(spec, raw.at(spec.name));
  }
  for (const auto& spec : sub.options) {
    if (spec.required && values[spec.name].is_null()) {
      throw UsageError("--" + spec.name + " is required");
    }
  }
  return values;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Token-level source identification with probers on LM hidden states", "srcid"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  const auto subs = subcommands();
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, std::string> config_paths;
  for (const auto& sub : subs) {
    auto* cmd = app.add_subcommand(sub.name, sub.description);
    auto& store = raw[sub.name];
    cmd->add_option("--config", config_paths[sub.name],
                    "JSON config file or run manifest; flags take precedence");
    for (const auto& spec : sub.options) {
      auto& slot = store[spec.name];
      if (spec.kind == Kind::flag) {
        cmd->add_flag("--" + spec.name, spec.help);
        slot = "true";
      } else {
        std::string help = spec.help;
        if (!spec.fallback.is_null()) {
          help += " [default: " + (spec.fallback.is_string() ? spec.fallback.get<std::string>()
                                                             : spec.fallback.dump()) + "]";
        }
        cmd->add_option("--" + spec.name, slot, help);
        if (spec.name == sub.positional) cmd->add_option(spec.name + "_pos", slot, spec.help);
      }
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  const auto& chosen = *app.get_subcommands().front();
  const auto it = std::find_if(subs.begin(), subs.end(),
                               [&](const Subcommand& s) { return s.name == chosen.get_name(); });
  try {
    const Config config(resolve(*it, chosen, raw[it->name], config_paths[it->name]));
    return it->handler(config, out, err);
  } catch (const UsageError& e) {
    err << "srcid " << it->name << ": usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "srcid " << it->name << ": format error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValidationError& e) {
    err << "srcid " << it->name << ": validation error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    err << "srcid " << it->name << ": dimension error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    err << "srcid " << it->name << ": malformed JSON input: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "srcid " << it->name << ": error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace srcid::cli
