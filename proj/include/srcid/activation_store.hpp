// SPDX-License-Identifier: Apache-2.0
//
// Activation shards: one file per (document, layer tag) holding the per-token
// hidden vectors a frozen model produced for that document.
//
// Layout (little-endian):
//   "SIDA" | u32 version=1 | u32 doc_id | u16 len + layer_tag | u32 hidden_dim
//   | u8 dtype (0 = f32) | u32 token_count | u16 len + model_id
//   | token_count x ( u32 position | u32 token_id | hidden_dim x f32 )
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace srcid {

inline constexpr std::array<char, 4> kShardMagic{'S', 'I', 'D', 'A'};
inline constexpr std::uint32_t kShardFormatVersion = 1;

enum class DType : std::uint8_t { f32 = 0 };

struct ShardHeader {
  std::uint32_t format_version = kShardFormatVersion;
  std::uint32_t doc_id = 0;
  std::string layer_tag;
  std::uint32_t hidden_dim = 0;
  DType dtype = DType::f32;
  std::uint32_t token_count = 0;
  std::string model_id;

  bool operator==(const ShardHeader&) const = default;
};

struct TokenRecord {
  std::uint32_t position = 0;
  std::uint32_t token_id = 0;
  std::vector<float> vector;

  bool operator==(const TokenRecord&) const = default;
};

struct Shard {
  ShardHeader header;
  std::vector<TokenRecord> records;
};

/// Size in bytes of the encoded header (everything before the first record).
std::size_t header_byte_size(const ShardHeader& header);

/// Size in bytes of one encoded record.
std::size_t record_byte_size(std::uint32_t hidden_dim);

/// Checks header and record invariants; throws ValidationError on the first
/// violation.
void check_shard(const ShardHeader& header, std::span<const TokenRecord> records);

std::string encode_shard(const ShardHeader& header, std::span<const TokenRecord> records);

/// Serializes a shard to `sink`. Returns the number of bytes written.
std::size_t write_shard(const ShardHeader& header, std::span<const TokenRecord> records,
                        std::ostream& sink);

/// Decodes a full shard. Throws FormatError (with byte offset) on bad magic,
/// unsupported version, truncation or trailing bytes, and ValidationError on
/// invariant violations.
Shard decode_shard(std::string_view bytes);
Shard read_shard(std::istream& source);

/// Reads only the header; records are not touched.
ShardHeader read_shard_header(std::istream& source);

std::size_t write_shard_file(const std::filesystem::path& path, const ShardHeader& header,
                             std::span<const TokenRecord> records);
Shard read_shard_file(const std::filesystem::path& path);
ShardHeader read_shard_header_file(const std::filesystem::path& path);

/// Canonical file name for a (doc, layer tag) pair, e.g. "doc000012.layer-3.sida".
std::string shard_file_name(std::uint32_t doc_id, const std::string& layer_tag);

// ---------------------------------------------------------------------------
// Catalog

struct CatalogEntry {
  std::uint32_t id = 0;
  std::string title;
  std::uint32_t token_count = 0;

  bool operator==(const CatalogEntry&) const = default;
};

struct DocumentCatalog {
  std::string model_id;
  std::vector<std::string> layer_tags;
  std::vector<CatalogEntry> documents;

  std::size_t size() const { return documents.size(); }
  /// Title of `doc_id`, or "Document <id>" when unknown.
  std::string title_of(std::uint32_t doc_id) const;

  bool operator==(const DocumentCatalog&) const = default;
};

std::string catalog_to_json(const DocumentCatalog& catalog);
DocumentCatalog catalog_from_json(std::string_view text);
void save_catalog(const std::filesystem::path& path, const DocumentCatalog& catalog);
DocumentCatalog load_catalog(const std::filesystem::path& path);

enum class ViolationKind {
  non_dense_ids,
  duplicate_catalog_id,
  unknown_doc_id,
  missing_shard,
  count_mismatch,
  mixed_hidden_dim,
  duplicate_shard,
  unknown_layer_tag,
  model_mismatch,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string message;
};

using ValidationReport = std::vector<Violation>;

/// Lists every inconsistency between a catalog and a set of shard headers.
/// An empty report means the pair is consistent.
ValidationReport validate_catalog(const DocumentCatalog& catalog,
                                  std::span<const ShardHeader> shards);

}  // namespace srcid
