#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "metainput/idx.hpp"

// Dataset manifests: a JSON file naming IDX files per split, with counts,
// checksums (of the decoded data) and the lineage of transforms that
// produced them. Relative paths resolve against the manifest's directory,
// then against $METAINPUT_DATA_DIR.
namespace metainput {

inline constexpr const char* kManifestFormat = "metainput.manifest";
inline constexpr int kManifestVersion = 1;

struct SplitEntry {
  std::string images;
  std::string labels;  // empty when unlabeled
  std::size_t count = 0;
  std::string checksum;  // hex64 of Dataset::checksum() after loading
};

struct Manifest {
  std::string name;
  std::map<std::string, SplitEntry> splits;
  std::vector<std::string> lineage;
  // Clean manifest this one was derived from, if any (for PSNR reporting).
  std::string reference;
  // What stands in for an unavailable benchmark dataset, if anything.
  std::string substitution;
  std::filesystem::path location;  // the manifest file itself; not serialized
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, s] : m.splits) {
    nlohmann::json e{{"images", s.images}, {"count", s.count}, {"checksum", s.checksum}};
    if (!s.labels.empty()) e["labels"] = s.labels;
    splits[name] = e;
  }
  nlohmann::json j{{"format", kManifestFormat}, {"version", kManifestVersion}, {"name", m.name},
                   {"splits", splits},          {"lineage", m.lineage}};
  if (!m.reference.empty()) j["reference"] = m.reference;
  if (!m.substitution.empty()) j["substitution"] = m.substitution;
  return j;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("manifest: cannot open '" + path.string() + "'");
  Manifest m;
  m.location = path;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != kManifestFormat) {
      throw IngestionError("manifest '" + path.string() + "': format is not " + kManifestFormat);
    }
    if (j.value("version", 0) != kManifestVersion) {
      throw VersionError("manifest '" + path.string() + "': version " + std::to_string(j.value("version", 0)) +
                         ", expected " + std::to_string(kManifestVersion));
    }
    m.name = j.value("name", path.stem().string());
    for (const auto& [name, e] : j.at("splits").items()) {
      SplitEntry s;
      s.images = e.at("images").get<std::string>();
      s.labels = e.value("labels", "");
      s.count = e.at("count").get<std::size_t>();
      s.checksum = e.value("checksum", "");
      m.splits[name] = s;
    }
    m.lineage = j.value("lineage", std::vector<std::string>{});
    m.reference = j.value("reference", "");
    m.substitution = j.value("substitution", "");
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("manifest: cannot write '" + path.string() + "'");
  out << manifest_to_json(m).dump(2) << "\n";
}

namespace detail {

inline std::filesystem::path resolve_data_path(const Manifest& m, const std::string& rel, const std::string& entry) {
  const std::filesystem::path p(rel);
  if (p.is_absolute()) {
    if (std::filesystem::exists(p)) return p;
  } else {
    const auto local = m.location.parent_path() / p;
    if (std::filesystem::exists(local)) return local;
    if (const char* dir = std::getenv("METAINPUT_DATA_DIR")) {
      const auto env = std::filesystem::path(dir) / p;
      if (std::filesystem::exists(env)) return env;
    }
  }
  throw IngestionError("manifest '" + m.location.string() + "': entry " + entry + " -> '" + rel + "' not found");
}

}  // namespace detail

inline Dataset load_split(const Manifest& m, const std::string& split) {
  const auto it = m.splits.find(split);
  if (it == m.splits.end()) {
    throw IngestionError("manifest '" + m.location.string() + "': no split '" + split + "'");
  }
  const SplitEntry& s = it->second;
  const auto images = detail::resolve_data_path(m, s.images, "splits." + split + ".images");
  const auto labels =
      s.labels.empty() ? std::filesystem::path{} : detail::resolve_data_path(m, s.labels, "splits." + split + ".labels");
  Dataset ds = idx::load_idx(images, labels);
  ds.name = m.name + ":" + split;
  ds.lineage = m.lineage;
  ds.lineage.push_back("load_split(" + split + ")");
  if (ds.size() != s.count) {
    throw ConsistencyError("manifest '" + m.location.string() + "': split " + split + " lists " +
                           std::to_string(s.count) + " samples, files hold " + std::to_string(ds.size()));
  }
  if (!s.checksum.empty() && hex64(ds.checksum()) != s.checksum) {
    throw ConsistencyError("manifest '" + m.location.string() + "': split " + split + " checksum " +
                           hex64(ds.checksum()) + " does not match recorded " + s.checksum);
  }
  return ds;
}

inline Dataset load_split(const std::filesystem::path& manifest, const std::string& split) {
  return load_split(read_manifest(manifest), split);
}

/// Writes each split as <stem>-<split>-images.idx / -labels.idx next to
/// the manifest. Pixels are quantized to bytes; recorded checksums are of
/// the data as it will load.
inline Manifest save_dataset_manifest(const std::filesystem::path& path, const std::string& name,
                                      const std::map<std::string, Dataset>& splits,
                                      std::vector<std::string> lineage = {}, std::string reference = {},
                                      std::string substitution = {}) {
  Manifest m;
  m.name = name;
  m.location = path;
  m.lineage = std::move(lineage);
  m.reference = std::move(reference);
  m.substitution = std::move(substitution);
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  std::filesystem::create_directories(dir);
  const std::string stem = path.stem().string();
  for (const auto& [split, ds] : splits) {
    SplitEntry e;
    e.images = stem + "-" + split + "-images.idx";
    if (ds.labeled()) e.labels = stem + "-" + split + "-labels.idx";
    idx::write_idx(ds, dir / e.images, ds.labeled() ? dir / e.labels : std::filesystem::path{});
    Dataset as_loaded = ds;
    as_loaded.images = idx::quantize(ds.images);
    e.count = ds.size();
    e.checksum = hex64(as_loaded.checksum());
    m.splits[split] = e;
  }
  write_manifest(m, path);
  return m;
}

}  // namespace metainput
