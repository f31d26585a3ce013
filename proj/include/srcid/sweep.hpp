// SPDX-License-Identifier: Apache-2.0
//
// Grid sweeps over layer tag x n-gram size x prober size x seed. Each cell is
// an independent train + evaluate run:
//   init_seed = shuffle_seed = seed
//   split seed = mix_seed(settings.split.seed, seed)
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srcid/corpus.hpp"
#include "srcid/evaluator.hpp"
#include "srcid/prober.hpp"
#include "srcid/trainer.hpp"

namespace srcid {

struct SweepGrid {
  std::vector<std::string> layer_tags;
  std::vector<std::uint32_t> ngrams{1, 2, 3};
  std::vector<SizeClass> sizes{SizeClass::medium};
  std::vector<std::uint64_t> seeds{0};
};

struct SweepSettings {
  SplitSpec split;
  TrainConfig train;
  OptimizerConfig optimizer;
  EvalOptions eval;
  unsigned jobs = 1;
};

struct SweepCell {
  std::string layer_tag;
  std::uint32_t ngram = 1;
  SizeClass size = SizeClass::medium;
  std::uint64_t seed = 0;
  EvalReport train;
  EvalReport test_in;
  EvalReport test_out;
  TrainingHistory history;
};

struct SweepTable {
  std::vector<SweepCell> cells;

  /// Test-in / test-out accuracy per n-gram, one row per (layer, size), mean
  /// over seeds, with the test-out drop in parentheses.
  std::string render_text() const;
  /// Test-in accuracy of two layer tags side by side (e.g. last_hidden vs logits).
  std::string render_layer_pair(const std::string& first, const std::string& second) const;
  std::string to_csv() const;
  std::string to_json() const;
};

/// Name used in tables: unigram, bigram, trigram, or "<n>-gram".
std::string ngram_name(std::uint32_t n);

SweepCell run_cell(const Corpus& corpus, const std::string& layer_tag, std::uint32_t ngram,
                   SizeClass size, std::uint64_t seed, const SweepSettings& settings);

/// Cells come back in grid order (layer, n, size, seed) regardless of `jobs`.
SweepTable sweep(const SweepGrid& grid, const Corpus& corpus, const SweepSettings& settings);

}  // namespace srcid
