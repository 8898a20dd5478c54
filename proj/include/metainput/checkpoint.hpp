#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "metainput/model.hpp"

// Binary container shared by model checkpoints and meta inputs:
//
//   magic     8 bytes
//   version   u32 little-endian
//   hlen      u64 little-endian
//   header    hlen bytes of JSON; "tensors" lists name and shape in order
//   buffers   float32 little-endian, concatenated in header order
//   checksum  u64 little-endian FNV-1a over every preceding byte
namespace metainput::container {

using json = nlohmann::json;

inline constexpr std::uint32_t kVersion = 1;

struct Document {
  json header;                       // everything except "tensors"
  std::vector<NamedTensor> tensors;  // in file order
};

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <class T>
T get_le(const std::vector<unsigned char>& in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[offset + i]) << (8 * i);
  return v;
}

inline void put_floats(std::vector<unsigned char>& out, std::span<const float> values) {
  for (float f : values) put_le(out, std::bit_cast<std::uint32_t>(f));
}

}  // namespace detail

inline std::vector<unsigned char> encode(std::string_view magic, const Document& doc) {
  json header = doc.header;
  header["tensors"] = json::array();
  for (const auto& t : doc.tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  const std::string text = header.dump();

  std::vector<unsigned char> out(8, 0);
  std::memcpy(out.data(), magic.data(), std::min<std::size_t>(magic.size(), 8));
  detail::put_le<std::uint32_t>(out, kVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : doc.tensors) detail::put_floats(out, t.value.data());
  Fnv1a h;
  h.update(out.data(), out.size());
  detail::put_le<std::uint64_t>(out, h.digest());
  return out;
}

inline Document decode(std::string_view magic, const std::vector<unsigned char>& bytes, const std::string& what) {
  if (bytes.size() < 20) throw FormatError(what + ": file too short for a header", bytes.size());
  char expect[8] = {};
  std::memcpy(expect, magic.data(), std::min<std::size_t>(magic.size(), 8));
  if (std::memcmp(bytes.data(), expect, 8) != 0) throw FormatError(what + ": bad magic", 0);
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kVersion) {
    throw VersionError(what + ": container version " + std::to_string(version) + ", expected " +
                       std::to_string(kVersion));
  }
  const auto hlen = detail::get_le<std::uint64_t>(bytes, 12);
  if (hlen > bytes.size() - 20) throw FormatError(what + ": header length " + std::to_string(hlen) + " exceeds file", 12);
  json header;
  try {
    header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw FormatError(what + ": malformed header: " + e.what(), 20);
  }

  Document doc;
  std::size_t offset = 20 + hlen;
  try {
    for (const auto& entry : header.at("tensors")) {
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t n = shape_size(shape);
      if (shape.empty() || n == 0) throw FormatError(what + ": tensor with empty shape", offset);
      if (bytes.size() < offset + 4 * n + 8) {
        throw FormatError(what + ": truncated data for tensor '" + entry.at("name").get<std::string>() + "'",
                          bytes.size());
      }
      std::vector<float> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, offset + 4 * i));
      }
      offset += 4 * n;
      doc.tensors.push_back({entry.at("name").get<std::string>(), Tensor(shape, std::move(values))});
    }
  } catch (const json::exception& e) {
    throw FormatError(what + ": malformed tensor table: " + e.what(), 20);
  }
  if (bytes.size() != offset + 8) {
    throw FormatError(what + ": " + std::to_string(bytes.size() - offset) + " bytes after tensor data, expected 8",
                      offset);
  }
  Fnv1a h;
  h.update(bytes.data(), offset);
  if (h.digest() != detail::get_le<std::uint64_t>(bytes, offset)) {
    throw FormatError(what + ": checksum mismatch", offset);
  }
  header.erase("tensors");
  doc.header = std::move(header);
  return doc;
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  // Write beside the target and rename so readers never see a partial file.
  const auto tmp = std::filesystem::path(path.string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("short write to '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace metainput::container

namespace metainput {

inline constexpr std::string_view kModelMagic = "MIMODEL";

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.conv_blocks) {
    blocks.push_back({{"out_channels", b.out_channels},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"batchnorm", b.batchnorm},
                      {"maxpool", b.maxpool}});
  }
  return {{"input_shape", {s.input_shape.height, s.input_shape.width, s.input_shape.channels}},
          {"conv_blocks", blocks},
          {"dense_dims", s.dense_dims},
          {"num_classes", s.num_classes}};
}

/// Missing fields keep the defaults of ModelSpec::default_digits().
inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s = ModelSpec::default_digits();
  try {
    if (j.contains("input_shape")) {
      const auto dims = j.at("input_shape").get<std::vector<std::size_t>>();
      if (dims.size() != 3) throw ValidationError("model spec: input_shape needs [H, W, C]");
      s.input_shape = {dims[0], dims[1], dims[2]};
    }
    if (j.contains("conv_blocks")) {
      s.conv_blocks.clear();
      for (const auto& b : j.at("conv_blocks")) {
        ConvBlockSpec c;
        c.out_channels = b.value("out_channels", c.out_channels);
        c.kernel = b.value("kernel", c.kernel);
        c.stride = b.value("stride", c.stride);
        c.batchnorm = b.value("batchnorm", c.batchnorm);
        c.maxpool = b.value("maxpool", c.maxpool);
        s.conv_blocks.push_back(c);
      }
    }
    if (j.contains("dense_dims")) s.dense_dims = j.at("dense_dims").get<std::vector<std::size_t>>();
    if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model spec: ") + e.what());
  }
  return s;
}

inline std::vector<unsigned char> encode_model(const Model& m) {
  container::Document doc;
  doc.header = {{"kind", "model"}, {"spec", spec_to_json(m.spec)}, {"frozen", m.frozen}};
  doc.tensors = m.params;
  for (std::size_t k = 0; k < m.bn_stats.size(); ++k) {
    doc.tensors.push_back({"bn_stats" + std::to_string(k) + ".mean", m.bn_stats[k].mean});
    doc.tensors.push_back({"bn_stats" + std::to_string(k) + ".var", m.bn_stats[k].var});
  }
  for (auto& t : doc.tensors) {
    t.value.clear_grad();
    t.value.set_requires_grad(false);
  }
  return container::encode(kModelMagic, doc);
}

inline Model decode_model(const std::vector<unsigned char>& bytes, const std::string& what = "model") {
  const container::Document doc = container::decode(kModelMagic, bytes, what);
  Model m;
  try {
    m.spec = spec_from_json(doc.header.at("spec"));
    m.frozen = doc.header.at("frozen").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": header lacks spec/frozen: " + e.what(), 20);
  }
  m.spec.validate();
  // The tensor table must match what the spec builds, name for name.
  const Model shape_ref = build_model(m.spec, 0);
  std::size_t i = 0;
  for (const auto& p : shape_ref.params) {
    if (i >= doc.tensors.size() || doc.tensors[i].name != p.name || doc.tensors[i].value.shape() != p.value.shape()) {
      throw FormatError(what + ": tensor table does not match spec at '" + p.name + "'", 20);
    }
    m.params.push_back(doc.tensors[i++]);
  }
  for (std::size_t k = 0; k < shape_ref.bn_stats.size(); ++k) {
    if (i + 1 >= doc.tensors.size()) throw FormatError(what + ": missing batchnorm statistics", 20);
    m.bn_stats.push_back({doc.tensors[i].value, doc.tensors[i + 1].value});
    i += 2;
  }
  if (i != doc.tensors.size()) throw FormatError(what + ": unexpected extra tensors", 20);
  return m;
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
  container::write_file(path, encode_model(m));
}

inline Model load_model(const std::filesystem::path& path) {
  return decode_model(container::read_file(path), "model '" + path.string() + "'");
}

/// Parameters, statistics, spec and frozen flag.
inline std::uint64_t model_checksum(const Model& m) {
  Fnv1a h;
  h.update_u64(params_checksum(m));
  h.update_u64(bn_checksum(m));
  h.update(spec_to_json(m.spec).dump());
  h.update_u64(m.frozen ? 1 : 0);
  return h.digest();
}

}  // namespace metainput
