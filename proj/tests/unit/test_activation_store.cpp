// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "srcid/activation_store.hpp"
#include "srcid/errors.hpp"

using namespace srcid;

namespace {

Shard small_shard(std::uint32_t doc, std::uint32_t dim, std::uint32_t tokens,
                  const std::string& tag = "last_hidden") {
  Shard s;
  s.header.doc_id = doc;
  s.header.layer_tag = tag;
  s.header.hidden_dim = dim;
  s.header.token_count = tokens;
  s.header.model_id = "unit";
  for (std::uint32_t p = 0; p < tokens; ++p) {
    TokenRecord r{p, 100 + p, std::vector<float>(dim)};
    for (std::uint32_t k = 0; k < dim; ++k) r.vector[k] = static_cast<float>(p) + 0.25f * k;
    s.records.push_back(r);
  }
  return s;
}

bool bit_equal(const Shard& a, const Shard& b) {
  if (!(a.header == b.header) || a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.position != y.position || x.token_id != y.token_id || x.vector.size() != y.vector.size()) {
      return false;
    }
    if (std::memcmp(x.vector.data(), y.vector.data(), x.vector.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

std::uint32_t u32_at(const std::string& bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

}  // namespace

TEST_SUITE("activation_store") {

TEST_CASE("file size follows the byte layout") {
  const auto s = small_shard(0, 4, 2);
  // magic 4 + version 4 + doc 4 + (2 + tag) + dim 4 + dtype 1 + count 4 + (2 + model)
  const std::size_t header = 4 + 4 + 4 + 2 + s.header.layer_tag.size() + 4 + 1 + 4 + 2 +
                             s.header.model_id.size();
  const auto bytes = encode_shard(s.header, s.records);
  CHECK(bytes.size() == header + 2 * (4 + 4 + 4 * 4));
  CHECK(header_byte_size(s.header) == header);
  CHECK(record_byte_size(4) == 24);
}

TEST_CASE("encoded fields sit at their documented offsets, little-endian") {
  const auto s = small_shard(7, 3, 2, "layer:2");
  const auto bytes = encode_shard(s.header, s.records);
  CHECK(bytes.substr(0, 4) == "SIDA");
  CHECK(u32_at(bytes, 4) == 1);
  CHECK(u32_at(bytes, 8) == 7);
  CHECK(static_cast<unsigned char>(bytes[12]) == 7);  // tag length, low byte
  CHECK(bytes[13] == 0);
  CHECK(bytes.substr(14, 7) == "layer:2");
  CHECK(u32_at(bytes, 21) == 3);
  CHECK(bytes[25] == 0);  // dtype f32
  CHECK(u32_at(bytes, 26) == 2);
  const std::size_t first_record = header_byte_size(s.header);
  CHECK(u32_at(bytes, first_record) == 0);
  CHECK(u32_at(bytes, first_record + 4) == 100);
  float v;
  std::memcpy(&v, bytes.data() + first_record + 8 + 4, 4);
  CHECK(v == 0.25f);
}

TEST_CASE("write_shard reports the bytes it wrote") {
  const auto s = small_shard(1, 5, 3);
  std::ostringstream out;
  const auto n = write_shard(s.header, s.records, out);
  CHECK(n == out.str().size());
  CHECK(out.str() == encode_shard(s.header, s.records));
}

TEST_CASE("round trip through stream and file") {
  const auto s = small_shard(3, 6, 5);
  std::stringstream io;
  write_shard(s.header, s.records, io);
  CHECK(bit_equal(read_shard(io), s));

  oracle::TempDir dir;
  const auto path = dir / shard_file_name(3, "last_hidden");
  write_shard_file(path, s.header, s.records);
  CHECK(bit_equal(read_shard_file(path), s));
  CHECK(read_shard_header_file(path) == s.header);
}

TEST_CASE("randomized shards round-trip bit-exactly") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 200; ++i) {
    const auto s = oracle::random_shard(rng);
    const auto bytes = encode_shard(s.header, s.records);
    const auto back = decode_shard(bytes);
    REQUIRE(bit_equal(back, s));
    CHECK(encode_shard(back.header, back.records) == bytes);
  }
}

TEST_CASE("negative zero and extreme floats keep their bits") {
  auto s = small_shard(0, 4, 1);
  s.records[0].vector = {-0.0f, std::numeric_limits<float>::denorm_min(),
                         std::numeric_limits<float>::max(), -std::numeric_limits<float>::min()};
  const auto back = decode_shard(encode_shard(s.header, s.records));
  CHECK(bit_equal(back, s));
  CHECK(std::signbit(back.records[0].vector[0]));
}

TEST_CASE("writer rejects invalid shards") {
  SUBCASE("token_count 0 with no records") {
    auto s = small_shard(0, 4, 1);
    s.header.token_count = 0;
    s.records.clear();
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
  SUBCASE("NaN component") {
    auto s = small_shard(0, 4, 2);
    s.records[1].vector[2] = std::nanf("");
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
  SUBCASE("infinite component") {
    auto s = small_shard(0, 4, 2);
    s.records[0].vector[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
  SUBCASE("record count mismatch") {
    auto s = small_shard(0, 4, 2);
    s.header.token_count = 3;
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
  SUBCASE("non-contiguous positions") {
    auto s = small_shard(0, 4, 3);
    s.records[2].position = 5;
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
  SUBCASE("vector length differs from hidden_dim") {
    auto s = small_shard(0, 4, 2);
    s.records[1].vector.pop_back();
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
  SUBCASE("hidden_dim 0") {
    auto s = small_shard(0, 4, 1);
    s.header.hidden_dim = 0;
    s.records[0].vector.clear();
    CHECK_THROWS_AS(encode_shard(s.header, s.records), ValidationError);
  }
}

TEST_CASE("reader diagnoses corruption with byte offsets") {
  const auto s = small_shard(2, 4, 3);
  const auto good = encode_shard(s.header, s.records);
  const auto header = header_byte_size(s.header);
  const auto rec = record_byte_size(4);

  auto offset_of = [](const std::string& bytes) -> std::size_t {
    try {
      decode_shard(bytes);
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
      return e.offset();
    }
    FAIL("expected a FormatError");
    return 0;
  };

  SUBCASE("altered magic") {
    auto bad = good;
    bad[1] = 'X';
    CHECK(offset_of(bad) == 0);
  }
  SUBCASE("unsupported version") {
    auto bad = good;
    bad[4] = 2;
    CHECK(offset_of(bad) == 4);
  }
  SUBCASE("unknown dtype") {
    auto bad = good;
    bad[4 + 4 + 4 + 2 + s.header.layer_tag.size() + 4] = 1;
    CHECK(offset_of(bad) == 4 + 4 + 4 + 2 + s.header.layer_tag.size() + 4);
  }
  SUBCASE("truncated mid-record") {
    const std::size_t cut = header + rec + 10;
    // the second record starts at header + rec; its payload is cut short
    CHECK(offset_of(good.substr(0, cut)) == header + rec + 8);
  }
  SUBCASE("truncated inside the header") {
    CHECK(offset_of(good.substr(0, 6)) == 4);
  }
  SUBCASE("trailing bytes") {
    CHECK(offset_of(good + "x") == good.size());
  }
  SUBCASE("wrong record position") {
    auto bad = good;
    bad[header + rec] = 9;
    CHECK(offset_of(bad) == header + rec);
  }
  SUBCASE("non-finite payload") {
    auto bad = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bad.data() + header + 8 + 4, &nan, 4);
    CHECK(offset_of(bad) >= header + 8);
  }
}

TEST_CASE("every truncation of a valid file is rejected") {
  const auto s = small_shard(0, 2, 2);
  const auto good = encode_shard(s.header, s.records);
  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    CHECK_THROWS_AS(decode_shard(good.substr(0, cut)), FormatError);
  }
}

TEST_CASE("header-only read leaves records untouched") {
  const auto s = small_shard(4, 8, 6);
  std::stringstream io(encode_shard(s.header, s.records));
  CHECK(read_shard_header(io) == s.header);
  CHECK(static_cast<std::size_t>(io.tellg()) == header_byte_size(s.header));
}

TEST_CASE("shard file names") {
  CHECK(shard_file_name(12, "layer:3") == "doc000012.layer-3.sida");
  CHECK(shard_file_name(0, "last_hidden") == "doc000000.last_hidden.sida");
}

TEST_CASE("catalog JSON round trip") {
  DocumentCatalog c;
  c.model_id = "m";
  c.layer_tags = {"layer:0", "logits"};
  c.documents = {{0, "Alpha \xc3\xa9", 512}, {1, "Beta", 500}};
  CHECK(catalog_from_json(catalog_to_json(c)) == c);
  CHECK(c.title_of(1) == "Beta");
  CHECK(c.title_of(9) == "Document 9");

  oracle::TempDir dir;
  save_catalog(dir / "catalog.json", c);
  CHECK(load_catalog(dir / "catalog.json") == c);
}

TEST_CASE("malformed catalog JSON is a validation error") {
  CHECK_THROWS_AS(catalog_from_json("{"), ValidationError);
  CHECK_THROWS_AS(catalog_from_json("[]"), ValidationError);
  CHECK_THROWS_AS(catalog_from_json(R"({"model_id":"m","layer_tags":[],"documents":[{"id":-1}]})"),
                  ValidationError);
}

TEST_CASE("validate_catalog") {
  DocumentCatalog c;
  c.model_id = "unit";
  c.layer_tags = {"last_hidden"};
  for (std::uint32_t d = 0; d < 3; ++d) c.documents.push_back({d, "doc", 4});
  std::vector<ShardHeader> shards;
  for (std::uint32_t d = 0; d < 3; ++d) shards.push_back(small_shard(d, 2, 4).header);

  auto kinds = [](const ValidationReport& r) {
    std::vector<ViolationKind> k;
    for (const auto& v : r) k.push_back(v.kind);
    return k;
  };
  auto has = [&](const ValidationReport& r, ViolationKind kind) {
    const auto k = kinds(r);
    return std::find(k.begin(), k.end(), kind) != k.end();
  };

  CHECK(validate_catalog(c, shards).empty());

  SUBCASE("unknown doc id") {
    auto s = shards;
    s.push_back(small_shard(5, 2, 4).header);
    CHECK(has(validate_catalog(c, s), ViolationKind::unknown_doc_id));
  }
  SUBCASE("count mismatch") {
    auto s = shards;
    s[1].token_count = 3;
    CHECK(has(validate_catalog(c, s), ViolationKind::count_mismatch));
  }
  SUBCASE("missing shard") {
    auto s = shards;
    s.pop_back();
    CHECK(has(validate_catalog(c, s), ViolationKind::missing_shard));
  }
  SUBCASE("duplicate shard") {
    auto s = shards;
    s.push_back(shards[0]);
    CHECK(has(validate_catalog(c, s), ViolationKind::duplicate_shard));
  }
  SUBCASE("mixed hidden dim within a layer tag") {
    auto s = shards;
    s[2].hidden_dim = 3;
    CHECK(has(validate_catalog(c, s), ViolationKind::mixed_hidden_dim));
  }
  SUBCASE("non-dense and duplicate catalog ids") {
    auto cc = c;
    cc.documents[2].id = 4;
    CHECK(has(validate_catalog(cc, shards), ViolationKind::non_dense_ids));
    cc.documents[2].id = 1;
    CHECK(has(validate_catalog(cc, shards), ViolationKind::duplicate_catalog_id));
  }
  SUBCASE("unknown layer tag and model mismatch") {
    auto s = shards;
    s[0].layer_tag = "logits";
    s[1].model_id = "other";
    const auto r = validate_catalog(c, s);
    CHECK(has(r, ViolationKind::unknown_layer_tag));
    CHECK(has(r, ViolationKind::model_mismatch));
  }
  for (auto k : {ViolationKind::non_dense_ids, ViolationKind::count_mismatch}) {
    CHECK(std::string(to_string(k)).size() > 0);
  }
}

}  // TEST_SUITE
