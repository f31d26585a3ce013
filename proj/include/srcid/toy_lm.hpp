// SPDX-License-Identifier: Apache-2.0
//
// A fixed-random-weight stand-in for a causal language model. It tokenizes
// text over a synthetic vocabulary and emits per-layer hidden states and
// vocabulary logits, so the whole pipeline runs without a real LLM.
//
//   layer:0      token embedding
//   layer:l      relu(A_l x + B_l ctx(x) + c_l) applied to layer l-1
//   last_hidden  one more block on layer:L-1, RMS-normalized
//   logits       P * last_hidden (vocab_size wide)
//
// ctx(x)_p is the exponentially decayed mean of the same layer's vectors at
// positions <= p, with weight 2^(-age / halflife).
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srcid/activation_store.hpp"

namespace srcid {

struct ToyLmConfig {
  std::uint32_t vocab_size = 1024;
  std::uint32_t hidden_dim = 64;
  std::uint32_t num_layers = 4;
  std::uint64_t seed = 0;
  double mixing_halflife = 4.0;

  void validate() const;
};

struct CorpusSpec {
  std::uint32_t num_docs = 100;
  std::uint32_t tokens_per_doc = 512;
  /// Probability that a token comes from the document's private vocabulary
  /// instead of the shared common pool.
  double skew = 0.6;
  /// Size of each document's private vocabulary (drawn from the rare pool).
  std::uint32_t private_vocab = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ToyCorpus {
  std::vector<std::vector<std::uint32_t>> documents;
  DocumentCatalog catalog;
};

struct TokenPiece {
  std::uint32_t id = 0;
  std::string text;
};

class ToyLm {
public:
  explicit ToyLm(const ToyLmConfig& config);

  const ToyLmConfig& config() const { return config_; }
  std::string model_id() const;

  /// "layer:0".."layer:L-1", "last_hidden", "logits".
  std::vector<std::string> layer_tags() const;

  /// Surface form of a token, including its leading space.
  std::string token_text(std::uint32_t id) const;
  std::string detokenize(std::span<const std::uint32_t> ids) const;

  /// Splits text into pieces of (leading whitespace + word). Known words map
  /// to their id, unknown ones hash into the vocabulary. Concatenating the
  /// piece texts reproduces `text` exactly.
  std::vector<TokenPiece> tokenize(std::string_view text) const;

  struct Activations {
    /// layers[l][p] is the layer:l vector at position p.
    std::vector<std::vector<std::vector<float>>> layers;
    std::vector<std::vector<float>> last_hidden;
    std::vector<std::vector<float>> logits;
  };

  /// Throws ValidationError for token ids >= vocab_size.
  Activations embed(std::span<const std::uint32_t> ids) const;

  /// Shard for one document and layer tag.
  Shard make_shard(std::uint32_t doc_id, std::span<const std::uint32_t> ids,
                   const Activations& acts, const std::string& layer_tag) const;

private:
  struct Block {
    std::vector<float> self;     // dim x dim
    std::vector<float> context;  // dim x dim
    std::vector<float> bias;
  };

  std::vector<std::vector<float>> run_block(const Block& block,
                                            const std::vector<std::vector<float>>& in) const;

  ToyLmConfig config_;
  std::vector<float> embedding_;  // vocab x dim
  std::vector<Block> blocks_;     // num_layers blocks: layers 1..L-1, then last_hidden
  std::vector<float> unembed_;    // vocab x dim
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t> word_index_;
};

ToyCorpus generate_corpus(const CorpusSpec& spec, const ToyLm& lm);

/// Total-variation distance between the empirical token distributions of two
/// documents.
double token_tv_distance(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

}  // namespace srcid
