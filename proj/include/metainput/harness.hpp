#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metainput/adaptation.hpp"
#include "metainput/checkpoint.hpp"
#include "metainput/corruption.hpp"
#include "metainput/glyphs.hpp"
#include "metainput/manifest.hpp"
#include "metainput/sampling.hpp"
#include "metainput/training.hpp"

// End-to-end experiments: load or pretrain a frozen model, build target
// settings (shifted, corrupted), adapt at each ratio with each method and
// evaluate on the held-out target test split.
namespace metainput {

using nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;

// ---- accuracy -------------------------------------------------------------

inline double evaluate_accuracy(const Model& model, const Dataset& ds, const MetaInput* w = nullptr) {
  if (!ds.labeled()) throw ContractError("evaluate_accuracy: dataset '" + ds.name + "' has no labels");
  if (ds.size() == 0) throw RangeError("evaluate_accuracy: dataset '" + ds.name + "' is empty");
  const auto pred = argmax_rows(predict_logits(model, w ? apply_meta_input(ds, *w, w->clamp) : ds));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == (*ds.labels)[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline double evaluate_accuracy(const Model& model, const Dataset& ds, const MetaInput& w) {
  return evaluate_accuracy(model, ds, &w);
}

// ---- config ---------------------------------------------------------------

enum class Scenario { kDomainShift, kNoisy, kComprehensiveNoise, kUnsupervised };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::kDomainShift: return "domain_shift";
    case Scenario::kNoisy: return "noisy";
    case Scenario::kComprehensiveNoise: return "comprehensive_noise";
    case Scenario::kUnsupervised: return "unsupervised";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "domain_shift") return Scenario::kDomainShift;
  if (s == "noisy") return Scenario::kNoisy;
  if (s == "comprehensive_noise") return Scenario::kComprehensiveNoise;
  if (s == "unsupervised") return Scenario::kUnsupervised;
  throw ValidationError("experiment config: unknown scenario '" + s + "'");
}

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"baseline", "meta_input", "bn_adapt", "meta_unsup"};
  return m;
}

/// Either a manifest (train/test splits) or synthetic glyph digits.
struct DatasetSpec {
  std::string manifest;
  std::string train_split = "train";
  std::string test_split = "test";
  // synthetic
  GlyphStyle style = GlyphStyle::classic();
  std::size_t count = 0;
  std::size_t test_count = 0;
  std::uint64_t seed = 0;

  bool synthetic() const { return manifest.empty(); }
};

struct ModelSource {
  std::string checkpoint;  // when set, the rest is ignored
  ModelSpec spec = ModelSpec::default_digits();
  std::uint64_t init_seed = 0;
  TrainConfig train;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Scenario scenario = Scenario::kDomainShift;
  ModelSource model;
  std::optional<DatasetSpec> source;  // only needed to pretrain
  DatasetSpec target;
  std::optional<float> target_shift;  // brightness offset applied to target pool and test
  std::vector<double> ratios{0.01, 0.3, 0.7, 1.0};
  std::vector<CorruptionSpec> corruptions;
  AdaptConfig adapt;
  std::vector<std::string> methods{"meta_input"};
  std::uint64_t seed = 0;
  std::size_t repeats = 1;

  void validate() const {
    if (ratios.empty()) throw ValidationError("experiment config: ratio grid is empty");
    for (double r : ratios) {
      if (!(r > 0.0 && r <= 1.0)) {
        throw ValidationError("experiment config: ratio " + std::to_string(r) + " outside (0, 1]");
      }
    }
    for (const auto& m : methods) {
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
        throw ValidationError("experiment config: unknown method '" + m + "'");
      }
    }
    if ((scenario == Scenario::kNoisy || scenario == Scenario::kComprehensiveNoise) && corruptions.empty()) {
      throw ValidationError("experiment config: scenario " + to_string(scenario) + " needs a corruption grid");
    }
    if (scenario == Scenario::kComprehensiveNoise) {
      for (const auto& c : corruptions) {
        if (c.kind != CorruptionKind::kComprehensive) {
          throw ValidationError("experiment config: comprehensive_noise accepts only comprehensive corruptions");
        }
      }
    }
    if (model.checkpoint.empty() && !source) {
      throw ValidationError("experiment config: model needs a checkpoint or a source dataset to pretrain on");
    }
    if (target.synthetic() && (target.count == 0 || target.test_count == 0)) {
      throw ValidationError("experiment config: synthetic target needs count and test_count");
    }
    if (repeats == 0) throw ValidationError("experiment config: repeats must be positive");
    for (const auto& c : corruptions) c.validate();
    adapt.validate();
  }
};

// ---- JSON for config pieces ----------------------------------------------

inline json glyph_style_to_json(const GlyphStyle& s) {
  return {{"name", s.name},
          {"size", s.size},
          {"background", s.background},
          {"foreground", s.foreground},
          {"thickness_min", s.thickness_min},
          {"thickness_max", s.thickness_max},
          {"rotation_deg", s.rotation_deg},
          {"scale_min", s.scale_min},
          {"scale_max", s.scale_max},
          {"shear", s.shear},
          {"translate_px", s.translate_px},
          {"texture", s.texture}};
}

// "style" picks a preset (classic | mid_range); other keys override it.
inline GlyphStyle glyph_style_from_json(const json& j) {
  const std::string preset = j.value("style", "classic");
  GlyphStyle s;
  if (preset == "mid_range") s = GlyphStyle::mid_range();
  else if (preset != "classic") throw ValidationError("dataset spec: unknown glyph style '" + preset + "'");
  s.name = j.value("name", s.name);
  s.size = j.value("size", s.size);
  s.background = j.value("background", s.background);
  s.foreground = j.value("foreground", s.foreground);
  s.thickness_min = j.value("thickness_min", s.thickness_min);
  s.thickness_max = j.value("thickness_max", s.thickness_max);
  s.rotation_deg = j.value("rotation_deg", s.rotation_deg);
  s.scale_min = j.value("scale_min", s.scale_min);
  s.scale_max = j.value("scale_max", s.scale_max);
  s.shear = j.value("shear", s.shear);
  s.translate_px = j.value("translate_px", s.translate_px);
  s.texture = j.value("texture", s.texture);
  return s;
}

inline json dataset_spec_to_json(const DatasetSpec& d) {
  if (!d.synthetic()) return {{"manifest", d.manifest}, {"train_split", d.train_split}, {"test_split", d.test_split}};
  json s = glyph_style_to_json(d.style);
  s["count"] = d.count;
  s["test_count"] = d.test_count;
  s["seed"] = d.seed;
  return {{"synthetic", s}};
}

inline DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec d;
  if (j.contains("manifest")) {
    d.manifest = j.at("manifest").get<std::string>();
    d.train_split = j.value("train_split", d.train_split);
    d.test_split = j.value("test_split", d.test_split);
    return d;
  }
  if (!j.contains("synthetic")) throw ValidationError("dataset spec: needs 'manifest' or 'synthetic'");
  const json& s = j.at("synthetic");
  d.style = glyph_style_from_json(s);
  d.count = s.value("count", std::size_t{0});
  d.test_count = s.value("test_count", std::size_t{0});
  d.seed = s.value("seed", std::uint64_t{0});
  return d;
}

inline json corruption_to_json(const CorruptionSpec& c) {
  return {{"kind", to_string(c.kind)}, {"psnr_db", c.target_psnr_db}, {"sigma", c.sigma},
          {"flip_prob", c.flip_prob},  {"variance", c.variance}};
}

inline CorruptionSpec corruption_from_json(const json& j) {
  CorruptionSpec c;
  c.kind = parse_corruption_kind(j.at("kind").get<std::string>());
  c.target_psnr_db = j.value("psnr_db", c.target_psnr_db);
  c.sigma = j.value("sigma", c.sigma);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.variance = j.value("variance", c.variance);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json adapt_config_to_json(const AdaptConfig& a) {
  json j{{"lr", a.lr},       {"epochs", a.epochs}, {"batch_size", a.batch_size},
         {"alpha", a.alpha}, {"clamp", a.clamp_transformed}};
  if (a.steps) j["steps"] = *a.steps;
  return j;
}

inline AdaptConfig adapt_config_from_json(const json& j, AdaptConfig a = {}) {
  a.lr = j.value("lr", a.lr);
  a.epochs = j.value("epochs", a.epochs);
  if (j.contains("steps")) a.steps = j.at("steps").get<std::size_t>();
  a.batch_size = j.value("batch_size", a.batch_size);
  a.alpha = j.value("alpha", a.alpha);
  a.clamp_transformed = j.value("clamp", a.clamp_transformed);
  a.seed = j.value("seed", a.seed);
  return a;
}

inline json train_config_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}, {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig t = {}) {
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.seed = j.value("seed", t.seed);
  return t;
}

inline json experiment_config_to_json(const ExperimentConfig& c) {
  json model;
  if (!c.model.checkpoint.empty()) {
    model = {{"checkpoint", c.model.checkpoint}};
  } else {
    model = {{"spec", spec_to_json(c.model.spec)},
             {"init_seed", c.model.init_seed},
             {"pretrain", train_config_to_json(c.model.train)}};
  }
  json corruptions = json::array();
  for (const auto& k : c.corruptions) corruptions.push_back(corruption_to_json(k));
  json j{{"name", c.name},
         {"scenario", to_string(c.scenario)},
         {"model", model},
         {"target", dataset_spec_to_json(c.target)},
         {"ratios", c.ratios},
         {"corruptions", corruptions},
         {"adapt", adapt_config_to_json(c.adapt)},
         {"methods", c.methods},
         {"seed", c.seed},
         {"repeats", c.repeats}};
  if (c.source) j["source"] = dataset_spec_to_json(*c.source);
  if (c.target_shift) j["target_shift"] = *c.target_shift;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.scenario = parse_scenario(j.at("scenario").get<std::string>());
    if (c.scenario == Scenario::kUnsupervised) c.methods = {"meta_unsup"};
    const json& m = j.at("model");
    c.model.checkpoint = m.value("checkpoint", "");
    if (m.contains("spec")) c.model.spec = spec_from_json(m.at("spec"));
    c.model.init_seed = m.value("init_seed", c.model.init_seed);
    if (m.contains("pretrain")) c.model.train = train_config_from_json(m.at("pretrain"));
    if (j.contains("source")) c.source = dataset_spec_from_json(j.at("source"));
    c.target = dataset_spec_from_json(j.at("target"));
    if (j.contains("target_shift")) c.target_shift = j.at("target_shift").get<float>();
    if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::vector<double>>();
    if (j.contains("corruptions")) {
      for (const auto& k : j.at("corruptions")) c.corruptions.push_back(corruption_from_json(k));
    }
    if (j.contains("adapt")) c.adapt = adapt_config_from_json(j.at("adapt"));
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    c.seed = j.value("seed", c.seed);
    c.repeats = j.value("repeats", c.repeats);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("experiment config: cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("experiment config '" + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---- report ---------------------------------------------------------------

struct CellRecord {
  std::string scenario;
  std::string setting;
  double ratio = 0.0;  // 0 for the baseline row
  std::string method;
  std::size_t repeat = 0;
  double accuracy = 0.0;
  std::size_t adapt_samples = 0;
  std::size_t eval_samples = 0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> checksums;
  bool frozen_ok = true;
  std::optional<double> psnr_db;
  std::optional<double> selection_fraction;
  std::string status = "ok";
  std::string error;

  bool operator==(const CellRecord&) const = default;
};

struct ExperimentReport {
  int schema_version = kReportSchemaVersion;
  std::string name;
  std::string scenario;
  std::uint64_t seed = 0;
  json config = json::object();
  std::string substitution;
  std::map<std::string, std::string> inputs;  // dataset and model checksums
  std::vector<std::string> settings;          // column order
  std::vector<CellRecord> cells;

  bool operator==(const ExperimentReport&) const = default;
};

inline json cell_to_json(const CellRecord& c) {
  json j{{"scenario", c.scenario},
         {"setting", c.setting},
         {"ratio", c.ratio},
         {"method", c.method},
         {"repeat", c.repeat},
         {"accuracy", c.accuracy},
         {"adapt_samples", c.adapt_samples},
         {"eval_samples", c.eval_samples},
         {"wall_time_s", c.wall_time_s},
         {"seed", c.seed},
         {"checksums", c.checksums},
         {"frozen_ok", c.frozen_ok},
         {"status", c.status}};
  if (c.psnr_db) j["psnr_db"] = std::isinf(*c.psnr_db) ? json("inf") : json(*c.psnr_db);
  if (c.selection_fraction) j["selection_fraction"] = *c.selection_fraction;
  if (!c.error.empty()) j["error"] = c.error;
  return j;
}

inline CellRecord cell_from_json(const json& j) {
  CellRecord c;
  c.scenario = j.at("scenario").get<std::string>();
  c.setting = j.at("setting").get<std::string>();
  c.ratio = j.at("ratio").get<double>();
  c.method = j.at("method").get<std::string>();
  c.repeat = j.value("repeat", std::size_t{0});
  c.accuracy = j.at("accuracy").get<double>();
  c.adapt_samples = j.at("adapt_samples").get<std::size_t>();
  c.eval_samples = j.at("eval_samples").get<std::size_t>();
  c.wall_time_s = j.at("wall_time_s").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
  c.frozen_ok = j.at("frozen_ok").get<bool>();
  if (j.contains("psnr_db")) {
    const json& p = j.at("psnr_db");
    c.psnr_db = p.is_string() ? std::numeric_limits<double>::infinity() : p.get<double>();
  }
  if (j.contains("selection_fraction")) c.selection_fraction = j.at("selection_fraction").get<double>();
  c.status = j.at("status").get<std::string>();
  c.error = j.value("error", "");
  return c;
}

inline json report_to_json(const ExperimentReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) cells.push_back(cell_to_json(c));
  return {{"format", "metainput.report"},
          {"schema_version", r.schema_version},
          {"name", r.name},
          {"scenario", r.scenario},
          {"seed", r.seed},
          {"config", r.config},
          {"substitution", r.substitution},
          {"inputs", r.inputs},
          {"settings", r.settings},
          {"cells", cells}};
}

inline ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  try {
    if (j.value("format", "") != "metainput.report") throw FormatError("report: not a metainput report", 0);
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) {
      throw VersionError("report: schema version " + std::to_string(r.schema_version) + ", expected " +
                         std::to_string(kReportSchemaVersion));
    }
    r.name = j.at("name").get<std::string>();
    r.scenario = j.at("scenario").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    r.substitution = j.at("substitution").get<std::string>();
    r.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    r.settings = j.at("settings").get<std::vector<std::string>>();
    for (const auto& c : j.at("cells")) r.cells.push_back(cell_from_json(c));
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what(), 0);
  }
  return r;
}

/// Cells with wall time zeroed, for determinism comparisons.
inline json report_fingerprint(const ExperimentReport& r) {
  json j = report_to_json(r);
  for (auto& c : j["cells"]) c["wall_time_s"] = 0.0;
  return j;
}

inline std::string ratio_label(double ratio) {
  std::ostringstream os;
  os << ratio * 100.0 << "%";
  return os.str();
}

/// "table" mirrors the paper-style layout (ratios down, settings across);
/// "structured" is the lossless JSON form.
inline std::string render_report(const ExperimentReport& r, const std::string& format) {
  if (format == "structured") return report_to_json(r).dump(2) + "\n";
  if (format != "table") throw UsageError("render_report: unknown format '" + format + "' (table | structured)");

  std::vector<std::string> methods;
  std::vector<double> ratios;
  for (const auto& c : r.cells) {
    if (c.method == "baseline") continue;
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
    if (std::find(ratios.begin(), ratios.end(), c.ratio) == ratios.end()) ratios.push_back(c.ratio);
  }
  std::sort(ratios.begin(), ratios.end());

  struct Row {
    std::string label;
    std::string method;
    double ratio;
  };
  std::vector<Row> rows;
  const bool have_baseline =
      std::any_of(r.cells.begin(), r.cells.end(), [](const CellRecord& c) { return c.method == "baseline"; });
  if (have_baseline) rows.push_back({"Baseline", "baseline", 0.0});
  for (const auto& m : methods) {
    for (double ratio : ratios) {
      const std::string label = methods.size() > 1 ? ratio_label(ratio) + " " + m : ratio_label(ratio);
      rows.push_back({label, m, ratio});
    }
  }

  // Mean over repeats; any failure in a cell group shows as FAILED.
  auto cell_text = [&](const Row& row, const std::string& setting) -> std::string {
    double sum = 0.0;
    std::size_t n = 0;
    bool any = false;
    for (const auto& c : r.cells) {
      if (c.setting != setting || c.method != row.method || c.ratio != row.ratio) continue;
      any = true;
      if (c.status != "ok") return "FAILED";
      sum += c.accuracy;
      ++n;
    }
    if (!any) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << sum / static_cast<double>(n);
    return os.str();
  };

  const std::string corner = "Ratio of target data";
  std::size_t w0 = corner.size();
  for (const auto& row : rows) w0 = std::max(w0, row.label.size());
  std::vector<std::size_t> widths;
  for (const auto& s : r.settings) widths.push_back(std::max<std::size_t>(s.size(), 8));

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w0)) << corner;
  for (std::size_t k = 0; k < r.settings.size(); ++k) {
    os << " | " << std::right << std::setw(static_cast<int>(widths[k])) << r.settings[k];
  }
  os << "\n" << std::string(w0, '-');
  for (auto w : widths) os << "-+-" << std::string(w, '-');
  os << "\n";
  for (const auto& row : rows) {
    os << std::left << std::setw(static_cast<int>(w0)) << row.label;
    for (std::size_t k = 0; k < r.settings.size(); ++k) {
      os << " | " << std::right << std::setw(static_cast<int>(widths[k])) << cell_text(row, r.settings[k]);
    }
    os << "\n";
  }
  return os.str();
}

// ---- running --------------------------------------------------------------

struct Splits {
  Dataset pool;
  Dataset test;
  std::string checksum_note;
};

namespace detail {

inline Splits resolve_dataset(const DatasetSpec& d, const std::string& role) {
  Splits s;
  if (!d.synthetic()) {
    const Manifest m = read_manifest(d.manifest);
    s.pool = load_split(m, d.train_split);
    s.test = load_split(m, d.test_split);
    return s;
  }
  const Dataset all = synth_glyph_digits(d.count + d.test_count, d.style, d.seed);
  auto [pool, test] = split(all, d.count, derive_seed(d.seed, "split"));
  pool.name = d.style.name + ":" + role + "-pool";
  test.name = d.style.name + ":" + role + "-test";
  s.pool = std::move(pool);
  s.test = std::move(test);
  return s;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Setting {
  std::string name;
  Dataset pool;
  Dataset test;
  std::optional<double> psnr_db;
};

}  // namespace detail

/// Loads the checkpoint or pretrains on the source pool.
inline Model resolve_model(const ExperimentConfig& cfg) {
  if (!cfg.model.checkpoint.empty()) return load_model(cfg.model.checkpoint);
  const Splits src = detail::resolve_dataset(*cfg.source, "source");
  return pretrain(build_model(cfg.model.spec, cfg.model.init_seed), src.pool, cfg.model.train).model;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const Model& model) {
  cfg.validate();
  ExperimentReport report;
  report.name = cfg.name;
  report.scenario = to_string(cfg.scenario);
  report.seed = cfg.seed;
  report.config = experiment_config_to_json(cfg);
  report.inputs["model"] = hex64(model_checksum(model));

  const Splits target = detail::resolve_dataset(cfg.target, "target");
  report.inputs["target_pool"] = hex64(target.pool.checksum());
  report.inputs["target_test"] = hex64(target.test.checksum());
  std::string base_name = cfg.target.style.name;
  if (cfg.target.synthetic()) {
    report.substitution = "synthetic glyph digits (" + cfg.target.style.name + ") in place of a benchmark digit set";
  } else {
    const Manifest m = read_manifest(cfg.target.manifest);
    report.substitution = m.substitution;
    base_name = m.name;
  }

  std::vector<detail::Setting> settings;
  Dataset pool = target.pool;
  Dataset test = target.test;
  if (cfg.target_shift) {
    pool = synth_shift(pool, *cfg.target_shift);
    test = synth_shift(test, *cfg.target_shift);
    std::ostringstream os;
    os << "shift " << std::showpos << *cfg.target_shift;
    base_name = os.str();
    if (!report.substitution.empty()) report.substitution += "; ";
    report.substitution += "target = clamp(x + " + std::to_string(*cfg.target_shift) + ")";
  }
  if (cfg.corruptions.empty()) {
    settings.push_back({base_name, pool, test, std::nullopt});
  } else {
    for (const auto& spec : cfg.corruptions) {
      detail::Setting s;
      s.name = spec.label();
      CorruptionSpec ps = spec;
      ps.seed = derive_seed(cfg.seed, "corrupt-pool:" + s.name);
      CorruptionSpec ts = spec;
      ts.seed = derive_seed(cfg.seed, "corrupt-test:" + s.name);
      s.pool = corrupt(pool, ps);
      s.test = corrupt(test, ts);
      s.psnr_db = measure_psnr(test, s.test).mean;
      settings.push_back(std::move(s));
    }
  }
  for (const auto& s : settings) report.settings.push_back(s.name);

  const std::uint64_t params_before = params_checksum(model);
  const std::uint64_t bn_before = bn_checksum(model);

  for (const auto& setting : settings) {
    auto base_cell = [&](const std::string& method, double ratio, std::size_t repeat) {
      CellRecord c;
      c.scenario = report.scenario;
      c.setting = setting.name;
      c.ratio = ratio;
      c.method = method;
      c.repeat = repeat;
      c.eval_samples = setting.test.size();
      c.psnr_db = setting.psnr_db;
      std::ostringstream coords;
      coords << setting.name << "|" << ratio << "|" << method << "|" << repeat;
      c.seed = derive_seed(cfg.seed, coords.str());
      c.checksums["eval_set"] = hex64(setting.test.checksum());
      c.checksums["params"] = hex64(params_before);
      return c;
    };
    auto guarded = [&](CellRecord& c, const auto& body) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        body(c);
      } catch (const std::exception& e) {
        c.status = "failed";
        c.error = e.what();
      }
      c.wall_time_s = detail::seconds_since(t0);
      if (params_checksum(model) != params_before || bn_checksum(model) != bn_before) c.frozen_ok = false;
      report.cells.push_back(std::move(c));
    };

    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      CellRecord b = base_cell("baseline", 0.0, rep);
      guarded(b, [&](CellRecord& c) { c.accuracy = evaluate_accuracy(model, setting.test); });

      for (double ratio : cfg.ratios) {
        std::ostringstream sub_label;
        sub_label << "subset|" << setting.name << "|" << ratio << "|" << rep;
        const std::uint64_t subset_seed = derive_seed(cfg.seed, sub_label.str());
        std::optional<Dataset> subset;
        std::string subset_error;
        try {
          subset = subsample(setting.pool, ratio, subset_seed);
        } catch (const std::exception& e) {
          subset_error = e.what();
        }
        for (const auto& method : cfg.methods) {
          if (method == "baseline") continue;
          CellRecord cell = base_cell(method, ratio, rep);
          guarded(cell, [&](CellRecord& c) {
            if (!subset) throw RangeError(subset_error);
            c.adapt_samples = subset->size();
            c.checksums["adapt_set"] = hex64(subset->checksum());
            AdaptConfig acfg = cfg.adapt;
            acfg.seed = c.seed;
            if (method == "meta_input") {
              MetaInput mi = optimize_meta_input(model, *subset, acfg);
              mi.trained_on.ratio = ratio;
              c.checksums["meta_input"] = hex64(meta_input_checksum(mi));
              c.accuracy = evaluate_accuracy(model, setting.test, mi);
              c.frozen_ok = params_checksum(model) == params_before && bn_checksum(model) == bn_before;
            } else if (method == "meta_unsup") {
              const UnsupervisedResult r = optimize_meta_input_unsupervised(model, subset->without_labels(), acfg);
              c.selection_fraction = r.pseudo.selection_fraction();
              c.checksums["meta_input"] = hex64(meta_input_checksum(r.meta));
              c.accuracy = evaluate_accuracy(model, setting.test, r.meta);
              c.frozen_ok = params_checksum(model) == params_before && bn_checksum(model) == bn_before;
            } else if (method == "bn_adapt") {
              const Model adapted = bn_adapt(model, *subset);
              c.checksums["bn_stats"] = hex64(bn_checksum(adapted));
              c.accuracy = evaluate_accuracy(adapted, setting.test);
              // Only statistics may move, and only in the copy.
              c.frozen_ok = params_checksum(adapted) == params_before && params_checksum(model) == params_before &&
                            bn_checksum(model) == bn_before;
            }
          });
        }
      }
    }
  }
  return report;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Model model = resolve_model(cfg);
  return run_experiment(cfg, model);
}

}  // namespace metainput
