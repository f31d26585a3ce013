// SPDX-License-Identifier: Apache-2.0
//
// Corpus directories: <dir>/catalog.json plus <dir>/shards/*.sida, one shard
// per (document, layer tag).
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "srcid/activation_store.hpp"
#include "srcid/toy_lm.hpp"

namespace srcid {

struct Corpus {
  DocumentCatalog catalog;
  /// Shards per layer tag, sorted by doc_id.
  std::map<std::string, std::vector<Shard>> layers;

  /// Throws ValidationError when the tag is absent.
  const std::vector<Shard>& layer(const std::string& tag) const;
  std::uint32_t num_docs() const { return static_cast<std::uint32_t>(catalog.size()); }
};

std::filesystem::path catalog_path(const std::filesystem::path& dir);
std::filesystem::path shard_dir(const std::filesystem::path& dir);

/// Shard files of one layer tag, ordered by doc_id (reads headers only).
std::vector<std::filesystem::path> find_shards(const std::filesystem::path& dir,
                                               const std::string& layer_tag);

/// Headers of every shard under the directory.
std::vector<ShardHeader> scan_shard_headers(const std::filesystem::path& dir);

/// Loads the catalog and the requested layers (all catalog tags if empty).
Corpus load_corpus(const std::filesystem::path& dir, const std::vector<std::string>& tags = {});

/// Runs the toy LM over a generated corpus, keeping the requested layer tags
/// (all tags if empty) in memory.
Corpus make_toy_corpus(const ToyCorpus& tokens, const ToyLm& lm,
                       const std::vector<std::string>& tags = {});

/// Writes catalog.json and one shard per (document, tag). Returns the files
/// written.
std::vector<std::filesystem::path> write_toy_corpus(const std::filesystem::path& dir,
                                                    const ToyCorpus& tokens, const ToyLm& lm,
                                                    const std::vector<std::string>& tags = {});

}  // namespace srcid
