// SPDX-License-Identifier: Apache-2.0
#include "srcid/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "srcid/errors.hpp"
#include "srcid/rng.hpp"

namespace srcid {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string make_word(std::uint32_t id, std::uint32_t vocab_size) {
  const std::uint32_t base = static_cast<std::uint32_t>(kConsonants.size() * kVowels.size());
  std::uint32_t syllables = 2;
  for (std::uint64_t cap = std::uint64_t{base} * base; cap < vocab_size; cap *= base) ++syllables;
  std::string w;
  std::uint32_t rest = id;
  for (std::uint32_t s = 0; s < syllables; ++s) {
    const auto syl = rest % base;
    rest /= base;
    w.push_back(kConsonants[syl / kVowels.size()]);
    w.push_back(kVowels[syl % kVowels.size()]);
  }
  return w;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

void fill_uniform(std::vector<float>& w, std::size_t n, double bound, Rng& rng) {
  w.resize(n);
  for (auto& x : w) x = static_cast<float>(uniform_real(rng, -bound, bound));
}

/// Inverse-CDF draw from unnormalized weights.
std::size_t draw(const std::vector<double>& cumulative, Rng& rng) {
  const double u = uniform_unit(rng) * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                               cumulative.size() - 1);
}

std::vector<double> zipf_cumulative(std::size_t n) {
  std::vector<double> c(n);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    acc += 1.0 / static_cast<double>(r + 1);
    c[r] = acc;
  }
  return c;
}

}  // namespace

void ToyLmConfig::validate() const {
  if (vocab_size < 2) throw ValidationError("toy LM vocab_size must be at least 2");
  if (hidden_dim < 1) throw ValidationError("toy LM hidden_dim must be at least 1");
  if (num_layers < 1) throw ValidationError("toy LM num_layers must be at least 1");
  if (!(mixing_halflife > 0)) throw ValidationError("toy LM mixing_halflife must be positive");
}

void CorpusSpec::validate() const {
  if (num_docs < 1) throw ValidationError("corpus needs at least one document");
  if (tokens_per_doc < 1) throw ValidationError("tokens_per_doc must be at least 1");
  if (!(skew >= 0 && skew <= 1)) throw ValidationError("skew must be in [0, 1]");
  if (private_vocab < 1) throw ValidationError("private_vocab must be at least 1");
}

ToyLm::ToyLm(const ToyLmConfig& config) : config_(config) {
  config_.validate();
  const std::size_t dim = config_.hidden_dim;
  const std::size_t vocab = config_.vocab_size;
  Rng rng(mix_seed(config_.seed, 0x746f796c6dULL));
  fill_uniform(embedding_, vocab * dim, std::sqrt(3.0), rng);
  const double block_bound = std::sqrt(6.0 / (2.0 * static_cast<double>(dim)));
  blocks_.resize(config_.num_layers);
  for (auto& b : blocks_) {
    fill_uniform(b.self, dim * dim, block_bound, rng);
    fill_uniform(b.context, dim * dim, block_bound, rng);
    fill_uniform(b.bias, dim, 0.1, rng);
  }
  fill_uniform(unembed_, vocab * dim, std::sqrt(3.0 / static_cast<double>(dim)), rng);
  words_.reserve(vocab);
  for (std::uint32_t id = 0; id < vocab; ++id) {
    words_.push_back(make_word(id, config_.vocab_size));
    word_index_.emplace(words_.back(), id);
  }
}

std::string ToyLm::model_id() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "toy-lm/v1 vocab=%u dim=%u layers=%u seed=%llu halflife=%g",
                config_.vocab_size, config_.hidden_dim, config_.num_layers,
                static_cast<unsigned long long>(config_.seed), config_.mixing_halflife);
  return buf;
}

std::vector<std::string> ToyLm::layer_tags() const {
  std::vector<std::string> tags;
  for (std::uint32_t l = 0; l < config_.num_layers; ++l) tags.push_back("layer:" + std::to_string(l));
  tags.emplace_back("last_hidden");
  tags.emplace_back("logits");
  return tags;
}

std::string ToyLm::token_text(std::uint32_t id) const {
  if (id >= words_.size()) throw ValidationError("token id " + std::to_string(id) + " out of range");
  return " " + words_[id];
}

std::string ToyLm::detokenize(std::span<const std::uint32_t> ids) const {
  std::string out;
  for (auto id : ids) out += token_text(id);
  return out;
}

std::vector<TokenPiece> ToyLm::tokenize(std::string_view text) const {
  std::vector<TokenPiece> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t word_start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    const std::string word(text.substr(word_start, i - word_start));
    TokenPiece piece;
    piece.text = std::string(text.substr(start, i - start));
    const auto it = word_index_.find(word);
    piece.id = it != word_index_.end() ? it->second
                                 : static_cast<std::uint32_t>(fnv1a(word) % config_.vocab_size);
    pieces.push_back(std::move(piece));
  }
  return pieces;
}

std::vector<std::vector<float>> ToyLm::run_block(const Block& block,
                                                 const std::vector<std::vector<float>>& in) const {
  const std::size_t dim = config_.hidden_dim;
  const double keep = std::exp2(-1.0 / config_.mixing_halflife);
  std::vector<double> sum(dim, 0.0);
  double norm = 0.0;
  std::vector<double> ctx(dim);
  std::vector<std::vector<float>> out(in.size(), std::vector<float>(dim));
  for (std::size_t p = 0; p < in.size(); ++p) {
    norm = keep * norm + 1.0;
    for (std::size_t k = 0; k < dim; ++k) {
      sum[k] = keep * sum[k] + in[p][k];
      ctx[k] = sum[k] / norm;
    }
    for (std::size_t r = 0; r < dim; ++r) {
      double acc = block.bias[r];
      const float* ws = block.self.data() + r * dim;
      const float* wc = block.context.data() + r * dim;
      for (std::size_t k = 0; k < dim; ++k) acc += ws[k] * static_cast<double>(in[p][k]) + wc[k] * ctx[k];
      out[p][r] = static_cast<float>(std::max(acc, 0.0));
    }
  }
  return out;
}

ToyLm::Activations ToyLm::embed(std::span<const std::uint32_t> ids) const {
  const std::size_t dim = config_.hidden_dim;
  for (auto id : ids) {
    if (id >= config_.vocab_size) {
      throw ValidationError("token id " + std::to_string(id) + " >= vocab_size " +
                            std::to_string(config_.vocab_size));
    }
  }
  Activations acts;
  std::vector<std::vector<float>> cur(ids.size());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const float* e = embedding_.data() + static_cast<std::size_t>(ids[p]) * dim;
    cur[p].assign(e, e + dim);
  }
  acts.layers.push_back(cur);
  for (std::uint32_t l = 1; l < config_.num_layers; ++l) {
    cur = run_block(blocks_[l - 1], cur);
    acts.layers.push_back(cur);
  }
  acts.last_hidden = run_block(blocks_.back(), cur);
  for (auto& v : acts.last_hidden) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    const double scale = 1.0 / std::sqrt(ss / static_cast<double>(dim) + 1e-6);
    for (auto& x : v) x = static_cast<float>(x * scale);
  }
  acts.logits.resize(ids.size());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    auto& out = acts.logits[p];
    out.resize(config_.vocab_size);
    for (std::size_t t = 0; t < config_.vocab_size; ++t) {
      const float* u = unembed_.data() + t * dim;
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) acc += u[k] * static_cast<double>(acts.last_hidden[p][k]);
      out[t] = static_cast<float>(acc);
    }
  }
  return acts;
}

Shard ToyLm::make_shard(std::uint32_t doc_id, std::span<const std::uint32_t> ids,
                        const Activations& acts, const std::string& layer_tag) const {
  const std::vector<std::vector<float>>* source = nullptr;
  if (layer_tag == "last_hidden") {
    source = &acts.last_hidden;
  } else if (layer_tag == "logits") {
    source = &acts.logits;
  } else if (layer_tag.rfind("layer:", 0) == 0) {
    const auto l = static_cast<std::size_t>(std::stoul(layer_tag.substr(6)));
    if (l < acts.layers.size()) source = &acts.layers[l];
  }
  if (source == nullptr) throw ValidationError("toy LM has no layer tag '" + layer_tag + "'");
  Shard shard;
  shard.header.doc_id = doc_id;
  shard.header.layer_tag = layer_tag;
  shard.header.hidden_dim = static_cast<std::uint32_t>(source->front().size());
  shard.header.token_count = static_cast<std::uint32_t>(ids.size());
  shard.header.model_id = model_id();
  shard.records.resize(ids.size());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    shard.records[p].position = static_cast<std::uint32_t>(p);
    shard.records[p].token_id = ids[p];
    shard.records[p].vector = (*source)[p];
  }
  return shard;
}

ToyCorpus generate_corpus(const CorpusSpec& spec, const ToyLm& lm) {
  spec.validate();
  const std::uint32_t vocab = lm.config().vocab_size;
  const std::uint32_t common = std::max<std::uint32_t>(1, vocab / 4);
  const std::uint32_t rare = vocab - common;
  if (rare < spec.private_vocab) {
    throw ValidationError("vocabulary too small for a private vocabulary of " +
                          std::to_string(spec.private_vocab));
  }
  const auto common_cdf = zipf_cumulative(common);
  const auto private_cdf = zipf_cumulative(spec.private_vocab);

  ToyCorpus corpus;
  corpus.catalog.model_id = lm.model_id();
  corpus.catalog.layer_tags = lm.layer_tags();
  for (std::uint32_t d = 0; d < spec.num_docs; ++d) {
    Rng rng(mix_seed(spec.seed, 0x636f72707573ULL, d));
    // Private vocabulary: partial shuffle of the rare pool.
    std::vector<std::uint32_t> pool(rare);
    std::iota(pool.begin(), pool.end(), common);
    for (std::uint32_t i = 0; i < spec.private_vocab; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, rare - i)]);
    }
    std::vector<std::uint32_t> own(pool.begin(), pool.begin() + spec.private_vocab);

    std::vector<std::uint32_t> tokens(spec.tokens_per_doc);
    for (auto& t : tokens) {
      if (uniform_unit(rng) < spec.skew) {
        t = own[draw(private_cdf, rng)];
      } else {
        t = static_cast<std::uint32_t>(draw(common_cdf, rng));
      }
    }
    std::string title = "Document " + std::to_string(d) + ":";
    for (std::size_t k = 0; k < 2 && k < own.size(); ++k) {
      auto w = lm.token_text(own[k]);
      w[1] = static_cast<char>(w[1] - 'a' + 'A');
      title += w;
    }
    corpus.catalog.documents.push_back({d, title, spec.tokens_per_doc});
    corpus.documents.push_back(std::move(tokens));
  }
  return corpus;
}

double token_tv_distance(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.empty() || b.empty()) throw ValidationError("TV distance needs non-empty documents");
  std::unordered_map<std::uint32_t, double> diff;
  for (auto t : a) diff[t] += 1.0 / static_cast<double>(a.size());
  for (auto t : b) diff[t] -= 1.0 / static_cast<double>(b.size());
  double total = 0.0;
  for (const auto& [t, v] : diff) total += std::fabs(v);
  return 0.5 * total;
}

}  // namespace srcid
