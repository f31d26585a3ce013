// SPDX-License-Identifier: Apache-2.0
#include "srcid/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "byte_io.hpp"
#include "srcid/errors.hpp"

namespace srcid {

namespace {

constexpr std::string_view kProberMagic = "SIDP";
constexpr std::string_view kOptimizerMagic = "SIDO";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

namespace {

void check_binding(const ProberConfig& cfg, const FeatureBinding& features) {
  if (static_cast<std::uint64_t>(features.ngram) * features.hidden_dim != cfg.input_dim) {
    throw DimensionError("feature binding " + std::to_string(features.ngram) + " x " +
                         std::to_string(features.hidden_dim) + " does not match input_dim " +
                         std::to_string(cfg.input_dim));
  }
}

}  // namespace

std::string encode_checkpoint(const Prober& prober, const FeatureBinding& features,
                              const OptimizerState* optimizer) {
  detail::ByteWriter out;
  const auto& cfg = prober.config();
  check_binding(cfg, features);
  out.raw(kProberMagic);
  out.u32(kCheckpointVersion);
  out.u8(static_cast<std::uint8_t>(cfg.size_class));
  out.u32(cfg.input_dim);
  out.u32(cfg.num_docs);
  out.u64(cfg.init_seed);
  out.u32(features.ngram);
  out.short_string(features.layer_tag, "layer_tag");
  out.u32(features.hidden_dim);
  out.u32(static_cast<std::uint32_t>(prober.layers().size()));
  for (const auto& l : prober.layers()) {
    out.u32(l.out);
    out.u32(l.in);
    out.f32_array(l.weight);
    out.f32_array(l.bias);
  }
  if (optimizer != nullptr) {
    out.raw(kOptimizerMagic);
    out.u64(optimizer->step_count);
    out.u32(static_cast<std::uint32_t>(optimizer->first_moment.size()));
    for (std::size_t i = 0; i < optimizer->first_moment.size(); ++i) {
      out.u64(optimizer->first_moment[i].size());
      out.f32_array(optimizer->first_moment[i]);
      out.f32_array(optimizer->second_moment[i]);
    }
  }
  return out.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes, "checkpoint");
  if (in.raw(4) != kProberMagic) throw FormatError("bad checkpoint magic", 0);
  const auto version_offset = in.offset();
  if (in.u32() != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version", version_offset);
  }
  ProberConfig cfg;
  const auto size_offset = in.offset();
  const auto size_code = in.u8();
  if (size_code > static_cast<std::uint8_t>(SizeClass::large)) {
    throw FormatError("unknown size class code " + std::to_string(size_code), size_offset);
  }
  cfg.size_class = static_cast<SizeClass>(size_code);
  cfg.input_dim = in.u32();
  cfg.num_docs = in.u32();
  cfg.init_seed = in.u64();
  FeatureBinding features;
  features.ngram = in.u32();
  features.layer_tag = in.short_string();
  features.hidden_dim = in.u32();
  const auto layer_count = in.u32();
  if (layer_count > 16) throw FormatError("implausible layer count", in.offset() - 4);
  std::vector<DenseLayer> layers(layer_count);
  for (auto& l : layers) {
    l.out = in.u32();
    l.in = in.u32();
    const std::size_t weights = static_cast<std::size_t>(l.out) * l.in;
    in.need(weights * 4 + static_cast<std::size_t>(l.out) * 4);
    l.weight.resize(weights);
    l.bias.resize(l.out);
    in.f32_array(l.weight);
    in.f32_array(l.bias);
  }
  check_binding(cfg, features);
  Checkpoint ck{Prober(cfg, std::move(layers)), features, std::nullopt};
  if (!in.at_end()) {
    const auto block_offset = in.offset();
    if (in.raw(4) != kOptimizerMagic) throw FormatError("unknown checkpoint block", block_offset);
    OptimizerState st;
    st.step_count = in.u64();
    const auto tensors = in.u32();
    for (std::uint32_t i = 0; i < tensors; ++i) {
      const auto len = in.u64();
      in.need(len * 8);
      std::vector<float> m(len), v(len);
      in.f32_array(m);
      in.f32_array(v);
      st.first_moment.push_back(std::move(m));
      st.second_moment.push_back(std::move(v));
    }
    if (!in.at_end()) throw FormatError("trailing bytes after optimizer block", in.offset());
    ck.optimizer = std::move(st);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Prober& prober,
                     const FeatureBinding& features, const OptimizerState* optimizer) {
  const auto bytes = encode_checkpoint(prober, features, optimizer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace srcid
