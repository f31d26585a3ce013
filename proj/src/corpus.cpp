// SPDX-License-Identifier: Apache-2.0
#include "srcid/corpus.hpp"

#include <algorithm>

#include "srcid/errors.hpp"

namespace fs = std::filesystem;

namespace srcid {

const std::vector<Shard>& Corpus::layer(const std::string& tag) const {
  const auto it = layers.find(tag);
  if (it == layers.end()) throw ValidationError("corpus has no shards for layer tag '" + tag + "'");
  return it->second;
}

fs::path catalog_path(const fs::path& dir) { return dir / "catalog.json"; }
fs::path shard_dir(const fs::path& dir) { return dir / "shards"; }

namespace {

std::vector<fs::path> shard_files(const fs::path& dir) {
  const auto root = shard_dir(dir);
  if (!fs::is_directory(root)) throw IoError("no shard directory at " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".sida") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<std::string> resolve_tags(const std::vector<std::string>& requested,
                                      const std::vector<std::string>& available) {
  return requested.empty() ? available : requested;
}

}  // namespace

std::vector<fs::path> find_shards(const fs::path& dir, const std::string& layer_tag) {
  std::vector<std::pair<std::uint32_t, fs::path>> hits;
  for (auto& path : shard_files(dir)) {
    const auto h = read_shard_header_file(path);
    if (h.layer_tag == layer_tag) hits.emplace_back(h.doc_id, std::move(path));
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<fs::path> out;
  for (auto& [doc, path] : hits) out.push_back(std::move(path));
  return out;
}

std::vector<ShardHeader> scan_shard_headers(const fs::path& dir) {
  std::vector<ShardHeader> out;
  for (const auto& path : shard_files(dir)) out.push_back(read_shard_header_file(path));
  return out;
}

Corpus load_corpus(const fs::path& dir, const std::vector<std::string>& tags) {
  Corpus corpus;
  corpus.catalog = load_catalog(catalog_path(dir));
  for (const auto& tag : resolve_tags(tags, corpus.catalog.layer_tags)) {
    const auto paths = find_shards(dir, tag);
    if (paths.empty()) throw ValidationError("no shards for layer tag '" + tag + "' in " + dir.string());
    auto& shards = corpus.layers[tag];
    for (const auto& p : paths) shards.push_back(read_shard_file(p));
  }
  return corpus;
}

Corpus make_toy_corpus(const ToyCorpus& tokens, const ToyLm& lm,
                       const std::vector<std::string>& tags) {
  Corpus corpus;
  corpus.catalog = tokens.catalog;
  const auto wanted = resolve_tags(tags, lm.layer_tags());
  corpus.catalog.layer_tags = wanted;
  for (std::uint32_t d = 0; d < tokens.documents.size(); ++d) {
    const auto acts = lm.embed(tokens.documents[d]);
    for (const auto& tag : wanted) {
      corpus.layers[tag].push_back(lm.make_shard(d, tokens.documents[d], acts, tag));
    }
  }
  return corpus;
}

std::vector<fs::path> write_toy_corpus(const fs::path& dir, const ToyCorpus& tokens,
                                       const ToyLm& lm, const std::vector<std::string>& tags) {
  const auto wanted = resolve_tags(tags, lm.layer_tags());
  fs::create_directories(shard_dir(dir));
  std::vector<fs::path> written;
  auto catalog = tokens.catalog;
  catalog.layer_tags = wanted;
  save_catalog(catalog_path(dir), catalog);
  written.push_back(catalog_path(dir));
  for (std::uint32_t d = 0; d < tokens.documents.size(); ++d) {
    const auto acts = lm.embed(tokens.documents[d]);
    for (const auto& tag : wanted) {
      const auto shard = lm.make_shard(d, tokens.documents[d], acts, tag);
      const auto path = shard_dir(dir) / shard_file_name(d, tag);
      write_shard_file(path, shard.header, shard.records);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace srcid
