// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "srcid/activation_store.hpp"
#include "srcid/checkpoint.hpp"
#include "srcid/corpus.hpp"
#include "srcid/errors.hpp"
#include "srcid/features.hpp"
#include "srcid/splitter.hpp"
#include "srcid/tagger.hpp"
#include "srcid/toy_lm.hpp"
#include "srcid/version.hpp"

namespace py = pybind11;
using namespace srcid;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IdArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

std::vector<TokenRecord> records_from(const IdArray& token_ids, const FloatArray& vectors) {
  if (vectors.ndim() != 2) throw DimensionError("vectors must be a 2-D array (tokens x hidden_dim)");
  if (token_ids.ndim() != 1 || token_ids.shape(0) != vectors.shape(0)) {
    throw DimensionError("token_ids must be 1-D with one id per vector row");
  }
  const auto rows = static_cast<std::size_t>(vectors.shape(0));
  const auto dim = static_cast<std::size_t>(vectors.shape(1));
  std::vector<TokenRecord> records(rows);
  const float* src = vectors.data();
  for (std::size_t p = 0; p < rows; ++p) {
    records[p].position = static_cast<std::uint32_t>(p);
    records[p].token_id = token_ids.data()[p];
    records[p].vector.assign(src + p * dim, src + (p + 1) * dim);
  }
  return records;
}

py::array_t<float> to_array(const Matrix& m) {
  py::array_t<float> out({m.rows, m.cols});
  std::memcpy(out.mutable_data(), m.data.data(), m.data.size() * sizeof(float));
  return out;
}

Matrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::memcpy(m.data.data(), a.data(), m.data.size() * sizeof(float));
  return m;
}

py::dict header_dict(const ShardHeader& h) {
  py::dict d;
  d["format_version"] = h.format_version;
  d["doc_id"] = h.doc_id;
  d["layer_tag"] = h.layer_tag;
  d["hidden_dim"] = h.hidden_dim;
  d["dtype"] = "f32";
  d["token_count"] = h.token_count;
  d["model_id"] = h.model_id;
  return d;
}

py::tuple shard_tuple(const Shard& s) {
  IdArray ids(static_cast<py::ssize_t>(s.records.size()));
  py::array_t<float> vecs({s.records.size(), static_cast<std::size_t>(s.header.hidden_dim)});
  float* dst = vecs.mutable_data();
  for (std::size_t p = 0; p < s.records.size(); ++p) {
    ids.mutable_data()[p] = s.records[p].token_id;
    std::memcpy(dst + p * s.header.hidden_dim, s.records[p].vector.data(),
                s.header.hidden_dim * sizeof(float));
  }
  return py::make_tuple(header_dict(s.header), ids, vecs);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the srcid toolkit: activation shards, catalogs, splits, probers, tagging";
  m.attr("__version__") = kVersion;

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  // -- shards ---------------------------------------------------------------
  m.def(
      "write_shard",
      [](const std::filesystem::path& path, std::uint32_t doc_id, const std::string& layer_tag,
         const std::string& model_id, const IdArray& token_ids, const FloatArray& vectors) {
        ShardHeader h;
        h.doc_id = doc_id;
        h.layer_tag = layer_tag;
        h.model_id = model_id;
        h.hidden_dim = vectors.ndim() == 2 ? static_cast<std::uint32_t>(vectors.shape(1)) : 0;
        h.token_count = static_cast<std::uint32_t>(token_ids.shape(0));
        const auto records = records_from(token_ids, vectors);
        return write_shard_file(path, h, records);
      },
      py::arg("path"), py::arg("doc_id"), py::arg("layer_tag"), py::arg("model_id"),
      py::arg("token_ids"), py::arg("vectors"),
      "Writes one shard; positions are 0..len-1. Returns the bytes written.");
  m.def(
      "read_shard", [](const std::filesystem::path& path) { return shard_tuple(read_shard_file(path)); },
      py::arg("path"), "Returns (header dict, token_ids uint32[N], vectors float32[N, dim]).");
  m.def(
      "read_shard_header",
      [](const std::filesystem::path& path) { return header_dict(read_shard_header_file(path)); },
      py::arg("path"));
  m.def("shard_file_name", &shard_file_name, py::arg("doc_id"), py::arg("layer_tag"));

  // -- catalog --------------------------------------------------------------
  m.def(
      "save_catalog",
      [](const std::filesystem::path& path, const std::string& model_id,
         const std::vector<std::string>& layer_tags, const py::list& documents) {
        DocumentCatalog c;
        c.model_id = model_id;
        c.layer_tags = layer_tags;
        for (const auto& item : documents) {
          const auto d = item.cast<py::dict>();
          c.documents.push_back({d["id"].cast<std::uint32_t>(), d["title"].cast<std::string>(),
                                 d["token_count"].cast<std::uint32_t>()});
        }
        save_catalog(path, c);
      },
      py::arg("path"), py::arg("model_id"), py::arg("layer_tags"), py::arg("documents"),
      "documents: list of {'id', 'title', 'token_count'} dicts.");
  m.def(
      "validate_corpus",
      [](const std::filesystem::path& dir) {
        const auto report = validate_catalog(load_catalog(catalog_path(dir)), scan_shard_headers(dir));
        py::list out;
        for (const auto& v : report) out.append(py::make_tuple(to_string(v.kind), v.message));
        return out;
      },
      py::arg("corpus_dir"), "List of (kind, message) violations; empty when consistent.");

  // -- splits ---------------------------------------------------------------
  m.def(
      "split_for_document",
      [](std::uint32_t doc_id, std::uint32_t doc_len, std::uint32_t total_len, std::uint32_t train,
         std::uint32_t test_in, std::uint32_t test_out, std::uint64_t seed) {
        const auto a = split_for_document({total_len, train, test_in, test_out, seed}, doc_id, doc_len);
        py::array_t<std::uint8_t> codes(static_cast<py::ssize_t>(a.size()));
        for (std::size_t i = 0; i < a.size(); ++i) codes.mutable_data()[i] = static_cast<std::uint8_t>(a.labels[i]);
        return codes;
      },
      py::arg("doc_id"), py::arg("doc_len"), py::arg("total_len") = 512, py::arg("train") = 180,
      py::arg("test_in") = 76, py::arg("test_out") = 256, py::arg("seed") = 0,
      "Codes 0/1/2 for train/test-in/test-out.");

  // -- toy LM ---------------------------------------------------------------
  py::class_<ToyLm>(m, "ToyLm")
      .def(py::init([](std::uint32_t vocab, std::uint32_t hidden, std::uint32_t layers, std::uint64_t seed,
                       double halflife) { return ToyLm({vocab, hidden, layers, seed, halflife}); }),
           py::arg("vocab_size") = 1024, py::arg("hidden_dim") = 64, py::arg("num_layers") = 4,
           py::arg("seed") = 0, py::arg("halflife") = 4.0)
      .def_property_readonly("model_id", &ToyLm::model_id)
      .def_property_readonly("layer_tags", &ToyLm::layer_tags)
      .def("tokenize",
           [](const ToyLm& lm, const std::string& text) {
             py::list out;
             for (const auto& p : lm.tokenize(text)) out.append(py::make_tuple(p.id, p.text));
             return out;
           })
      .def("detokenize", [](const ToyLm& lm, const std::vector<std::uint32_t>& ids) { return lm.detokenize(ids); })
      .def(
          "activations",
          [](const ToyLm& lm, const std::vector<std::uint32_t>& ids, const std::string& layer_tag) {
            const auto acts = lm.embed(ids);
            return py::object(shard_tuple(lm.make_shard(0, ids, acts, layer_tag))[2]);
          },
          py::arg("token_ids"), py::arg("layer_tag"), "float32[N, dim] for one layer tag.");

  // -- probers --------------------------------------------------------------
  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("ngram", [](const Checkpoint& c) { return c.features.ngram; })
      .def_property_readonly("layer_tag", [](const Checkpoint& c) { return c.features.layer_tag; })
      .def_property_readonly("hidden_dim", [](const Checkpoint& c) { return c.features.hidden_dim; })
      .def_property_readonly("num_docs", [](const Checkpoint& c) { return c.prober.num_docs(); })
      .def_property_readonly("size_class", [](const Checkpoint& c) { return std::string(to_string(c.prober.config().size_class)); })
      .def_property_readonly("parameter_count", [](const Checkpoint& c) { return c.prober.parameter_count(); })
      .def("logits", [](const Checkpoint& c, const FloatArray& x) { return to_array(c.prober.forward(to_matrix(x))); },
           py::arg("windows"))
      .def("predict_proba",
           [](const Checkpoint& c, const FloatArray& x) { return to_array(c.prober.predict_proba(to_matrix(x))); },
           py::arg("windows"))
      .def(
          "windows",
          [](const Checkpoint& c, const FloatArray& vectors) {
            const IdArray ids(static_cast<py::ssize_t>(vectors.ndim() == 2 ? vectors.shape(0) : 0));
            const auto records = records_from(ids, vectors);
            return to_array(window_matrix(records, c.features.ngram));
          },
          py::arg("vectors"), "n-gram windows (rows for positions n-1..N-1) of per-token vectors.")
      .def(
          "tag",
          [](const Checkpoint& c, const FloatArray& vectors, const std::vector<std::string>& tokens,
             double threshold) {
            const IdArray ids(static_cast<py::ssize_t>(vectors.ndim() == 2 ? vectors.shape(0) : 0));
            const auto records = records_from(ids, vectors);
            const auto report = tag(c.prober, window_matrix(records, c.features.ngram), tokens,
                                    c.features.ngram, threshold);
            py::list out;
            for (const auto& t : report.tokens) {
              out.append(py::make_tuple(t.token_text, t.attribution ? py::cast(*t.attribution) : py::none(),
                                        t.confidence ? py::cast(*t.confidence) : py::none()));
            }
            return out;
          },
          py::arg("vectors"), py::arg("tokens"), py::arg("threshold") = kDefaultTagThreshold,
          "List of (token, doc_id or None, confidence or None).");
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
}
