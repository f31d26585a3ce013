// SPDX-License-Identifier: Apache-2.0
#include "srcid/activation_store.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "srcid/errors.hpp"
#include "srcid/matrix.hpp"

namespace srcid {

namespace {

constexpr std::size_t kMaxHeaderBytes = 4 + 4 + 4 + 2 + 0xFFFF + 4 + 1 + 4 + 2 + 0xFFFF;

ShardHeader decode_header(detail::ByteReader& in) {
  const auto magic_offset = in.offset();
  const auto magic = in.raw(4);
  if (magic != std::string_view(kShardMagic.data(), kShardMagic.size())) {
    throw FormatError("bad shard magic", magic_offset);
  }
  ShardHeader h;
  const auto version_offset = in.offset();
  h.format_version = in.u32();
  if (h.format_version != kShardFormatVersion) {
    throw FormatError("unsupported shard format version " + std::to_string(h.format_version),
                      version_offset);
  }
  h.doc_id = in.u32();
  h.layer_tag = in.short_string();
  const auto dim_offset = in.offset();
  h.hidden_dim = in.u32();
  if (h.hidden_dim == 0) throw FormatError("hidden_dim must be positive", dim_offset);
  const auto dtype_offset = in.offset();
  const auto dtype = in.u8();
  if (dtype != static_cast<std::uint8_t>(DType::f32)) {
    throw FormatError("unsupported dtype code " + std::to_string(dtype), dtype_offset);
  }
  h.dtype = DType::f32;
  const auto count_offset = in.offset();
  h.token_count = in.u32();
  if (h.token_count == 0) throw FormatError("token_count must be at least 1", count_offset);
  h.model_id = in.short_string();
  return h;
}

std::string slurp(std::istream& source) {
  std::string bytes{std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>()};
  if (source.bad()) throw IoError("failed reading shard stream");
  return bytes;
}

}  // namespace

std::size_t header_byte_size(const ShardHeader& header) {
  return 4 + 4 + 4 + 2 + header.layer_tag.size() + 4 + 1 + 4 + 2 + header.model_id.size();
}

std::size_t record_byte_size(std::uint32_t hidden_dim) {
  return 4 + 4 + static_cast<std::size_t>(hidden_dim) * 4;
}

void check_shard(const ShardHeader& header, std::span<const TokenRecord> records) {
  if (header.format_version != kShardFormatVersion) {
    throw ValidationError("unsupported format_version " + std::to_string(header.format_version));
  }
  if (header.hidden_dim == 0) throw ValidationError("hidden_dim must be positive");
  if (header.token_count == 0) throw ValidationError("token_count must be at least 1");
  if (records.size() != header.token_count) {
    throw ValidationError("record count " + std::to_string(records.size()) +
                          " does not match token_count " + std::to_string(header.token_count));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.position != i) {
      throw ValidationError("record " + std::to_string(i) + " has position " +
                            std::to_string(r.position) + "; positions must be contiguous from 0");
    }
    if (r.vector.size() != header.hidden_dim) {
      throw ValidationError("record " + std::to_string(i) + " has " +
                            std::to_string(r.vector.size()) + " components, expected " +
                            std::to_string(header.hidden_dim));
    }
    for (float v : r.vector) {
      if (!std::isfinite(v)) {
        throw ValidationError("non-finite component in record " + std::to_string(i));
      }
    }
  }
}

std::string encode_shard(const ShardHeader& header, std::span<const TokenRecord> records) {
  check_shard(header, records);
  detail::ByteWriter out;
  out.raw(std::string_view(kShardMagic.data(), kShardMagic.size()));
  out.u32(header.format_version);
  out.u32(header.doc_id);
  out.short_string(header.layer_tag, "layer_tag");
  out.u32(header.hidden_dim);
  out.u8(static_cast<std::uint8_t>(header.dtype));
  out.u32(header.token_count);
  out.short_string(header.model_id, "model_id");
  for (const auto& r : records) {
    out.u32(r.position);
    out.u32(r.token_id);
    out.f32_array(r.vector);
  }
  return out.take();
}

std::size_t write_shard(const ShardHeader& header, std::span<const TokenRecord> records,
                        std::ostream& sink) {
  const auto bytes = encode_shard(header, records);
  sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw IoError("shard sink write failed");
  return bytes.size();
}

Shard decode_shard(std::string_view bytes) {
  detail::ByteReader in(bytes, "shard");
  Shard shard;
  shard.header = decode_header(in);
  const auto& h = shard.header;
  shard.records.resize(h.token_count);
  for (std::uint32_t i = 0; i < h.token_count; ++i) {
    auto& r = shard.records[i];
    const auto record_offset = in.offset();
    r.position = in.u32();
    if (r.position != i) {
      throw FormatError("record " + std::to_string(i) + " has position " +
                            std::to_string(r.position) + ", expected " + std::to_string(i),
                        record_offset);
    }
    r.token_id = in.u32();
    const auto vector_offset = in.offset();
    r.vector.resize(h.hidden_dim);
    in.f32_array(r.vector);
    if (!all_finite(r.vector)) {
      throw FormatError("non-finite component in record " + std::to_string(i), vector_offset);
    }
  }
  if (!in.at_end()) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after last record",
                      in.offset());
  }
  return shard;
}

Shard read_shard(std::istream& source) { return decode_shard(slurp(source)); }

ShardHeader read_shard_header(std::istream& source) {
  const auto start = source.tellg();
  std::string prefix(kMaxHeaderBytes, '\0');
  source.read(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  if (source.bad()) throw IoError("failed reading shard stream");
  prefix.resize(static_cast<std::size_t>(source.gcount()));
  detail::ByteReader in(prefix, "shard header");
  auto header = decode_header(in);
  if (start != std::streampos(-1)) {
    // leave the stream at the first record
    source.clear();
    source.seekg(start + static_cast<std::streamoff>(header_byte_size(header)));
  }
  return header;
}

std::size_t write_shard_file(const std::filesystem::path& path, const ShardHeader& header,
                             std::span<const TokenRecord> records) {
  const auto bytes = encode_shard(header, records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
  return bytes.size();
}

Shard read_shard_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_shard(in);
}

ShardHeader read_shard_header_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_shard_header(in);
}

std::string shard_file_name(std::uint32_t doc_id, const std::string& layer_tag) {
  std::string tag;
  tag.reserve(layer_tag.size());
  for (char c : layer_tag) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '_' || c == '-';
    tag.push_back(keep ? c : '-');
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "doc%06u.", doc_id);
  return std::string(buf) + tag + ".sida";
}

// ---------------------------------------------------------------------------

std::string DocumentCatalog::title_of(std::uint32_t doc_id) const {
  if (doc_id < documents.size() && documents[doc_id].id == doc_id) return documents[doc_id].title;
  for (const auto& e : documents) {
    if (e.id == doc_id) return e.title;
  }
  return "Document " + std::to_string(doc_id);
}

std::string catalog_to_json(const DocumentCatalog& catalog) {
  nlohmann::ordered_json j;
  j["model_id"] = catalog.model_id;
  j["layer_tags"] = catalog.layer_tags;
  auto docs = nlohmann::ordered_json::array();
  for (const auto& e : catalog.documents) {
    docs.push_back({{"id", e.id}, {"title", e.title}, {"token_count", e.token_count}});
  }
  j["documents"] = std::move(docs);
  return j.dump(2) + "\n";
}

DocumentCatalog catalog_from_json(std::string_view text) {
  DocumentCatalog c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.model_id = j.at("model_id").get<std::string>();
    c.layer_tags = j.at("layer_tags").get<std::vector<std::string>>();
    for (const auto& d : j.at("documents")) {
      c.documents.push_back({d.at("id").get<std::uint32_t>(), d.at("title").get<std::string>(),
                             d.at("token_count").get<std::uint32_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed catalog: ") + e.what());
  }
  return c;
}

void save_catalog(const std::filesystem::path& path, const DocumentCatalog& catalog) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << catalog_to_json(catalog);
  if (!out) throw IoError("write failed: " + path.string());
}

DocumentCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return catalog_from_json(ss.str());
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::non_dense_ids: return "non-dense doc ids";
    case ViolationKind::duplicate_catalog_id: return "duplicate catalog id";
    case ViolationKind::unknown_doc_id: return "unknown doc_id";
    case ViolationKind::missing_shard: return "missing shard";
    case ViolationKind::count_mismatch: return "count mismatch";
    case ViolationKind::mixed_hidden_dim: return "mixed hidden_dim";
    case ViolationKind::duplicate_shard: return "duplicate shard";
    case ViolationKind::unknown_layer_tag: return "unknown layer tag";
    case ViolationKind::model_mismatch: return "model mismatch";
  }
  return "unknown";
}

ValidationReport validate_catalog(const DocumentCatalog& catalog,
                                  std::span<const ShardHeader> shards) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, std::string message) {
    report.push_back({kind, std::string(to_string(kind)) + ": " + std::move(message)});
  };

  std::map<std::uint32_t, std::uint32_t> counts;
  for (std::size_t i = 0; i < catalog.documents.size(); ++i) {
    const auto& e = catalog.documents[i];
    if (!counts.emplace(e.id, e.token_count).second) {
      add(ViolationKind::duplicate_catalog_id, "doc_id " + std::to_string(e.id));
    }
    if (e.id != i) {
      add(ViolationKind::non_dense_ids, "entry " + std::to_string(i) + " has id " +
                                            std::to_string(e.id) + ", expected " +
                                            std::to_string(i));
    }
  }

  const std::set<std::string> known_tags(catalog.layer_tags.begin(), catalog.layer_tags.end());
  std::set<std::pair<std::uint32_t, std::string>> seen;
  std::map<std::string, std::uint32_t> dim_by_tag;
  for (const auto& h : shards) {
    const std::string where = "doc " + std::to_string(h.doc_id) + " / " + h.layer_tag;
    if (!seen.emplace(h.doc_id, h.layer_tag).second) {
      add(ViolationKind::duplicate_shard, where);
    }
    if (!known_tags.contains(h.layer_tag)) {
      add(ViolationKind::unknown_layer_tag, where);
    }
    if (!catalog.model_id.empty() && h.model_id != catalog.model_id) {
      add(ViolationKind::model_mismatch,
          where + " has model_id '" + h.model_id + "', catalog says '" + catalog.model_id + "'");
    }
    const auto it = counts.find(h.doc_id);
    if (it == counts.end()) {
      add(ViolationKind::unknown_doc_id, where);
    } else if (it->second != h.token_count) {
      add(ViolationKind::count_mismatch, where + " has " + std::to_string(h.token_count) +
                                             " tokens, catalog says " +
                                             std::to_string(it->second));
    }
    const auto [dim_it, inserted] = dim_by_tag.emplace(h.layer_tag, h.hidden_dim);
    if (!inserted && dim_it->second != h.hidden_dim) {
      add(ViolationKind::mixed_hidden_dim, where + " has hidden_dim " +
                                               std::to_string(h.hidden_dim) + ", expected " +
                                               std::to_string(dim_it->second));
    }
  }

  for (const auto& tag : catalog.layer_tags) {
    for (const auto& e : catalog.documents) {
      if (!seen.contains({e.id, tag})) {
        add(ViolationKind::missing_shard, "doc " + std::to_string(e.id) + " / " + tag);
      }
    }
  }
  return report;
}

}  // namespace srcid
