#pragma once

#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "metainput/harness.hpp"

// Command-line front end. Each subcommand is a thin wrapper over library
// calls. Exit codes: 0 ok, 1 domain error, 2 usage error.
namespace metainput::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

// Effective option values of a subcommand after config file and flags.
inline json effective_config(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      j[name] = res.size() == 1 ? json(res[0]) : json(res);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

inline std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

// "key: value" lines, or a JSON document with the effective config.
inline void emit(std::ostream& out, const std::string& format, const CLI::App& sub, json result) {
  if (format == "structured") {
    result["command"] = sub.get_name();
    result["effective_config"] = effective_config(sub);
    out << result.dump(2) << "\n";
    return;
  }
  for (const auto& [k, v] : result.items()) {
    if (v.is_number_float()) out << k << ": " << fixed2(v.get<double>()) << "\n";
    else if (v.is_string()) out << k << ": " << v.get<std::string>() << "\n";
    else out << k << ": " << v.dump() << "\n";
  }
}

inline void add_format(CLI::App* sub, std::string& format) {
  sub->add_option("--format", format, "table | structured")
      ->check(CLI::IsMember({"table", "structured"}))
      ->capture_default_str();
}

inline void add_adapt_flags(CLI::App* sub, AdaptConfig& a) {
  sub->add_option("--lr", a.lr, "Adam learning rate for W")->capture_default_str();
  sub->add_option("--epochs", a.epochs, "passes over the adaptation set")->capture_default_str();
  sub->add_option("--steps", a.steps, "exact optimizer steps (overrides --epochs)");
  sub->add_option("--batch-size", a.batch_size)->capture_default_str();
  sub->add_flag("--clamp", a.clamp_transformed, "clamp x + W to [0,1]");
  sub->add_option("--seed", a.seed)->capture_default_str();
}

struct TargetSplits {
  Dataset pool;
  std::optional<Dataset> test;
};

inline TargetSplits load_target(const std::string& manifest, const std::string& pool_split,
                                const std::string& test_split) {
  const Manifest m = read_manifest(manifest);
  TargetSplits t{load_split(m, pool_split), std::nullopt};
  if (m.splits.count(test_split)) t.test = load_split(m, test_split);
  return t;
}

inline std::filesystem::path reference_path(const Manifest& m) {
  const std::filesystem::path ref(m.reference);
  return ref.is_absolute() ? ref : m.location.parent_path() / ref;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Meta-input test-time adaptation for frozen image classifiers", "metainput"};
  app.require_subcommand(1);
  // Config files are TOML/INI with one [subcommand] section each; flags on
  // the command line win.
  app.set_config("--config", "", "flag values from a TOML/INI file");
  app.allow_config_extras(false);
  app.fallthrough();

  std::string format = "table";

  // synth
  struct {
    std::string style = "classic", out;
    std::size_t count = 5000, test_count = 1000, size = 28;
    std::uint64_t seed = 0;
    std::optional<float> shift;
  } synth;
  auto* s_synth = app.add_subcommand("synth", "write a synthetic glyph-digit dataset manifest");
  s_synth->add_option("--style", synth.style)->check(CLI::IsMember({"classic", "mid_range"}))->capture_default_str();
  s_synth->add_option("--count", synth.count, "train split size")->capture_default_str();
  s_synth->add_option("--test-count", synth.test_count)->capture_default_str();
  s_synth->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  s_synth->add_option("--seed", synth.seed)->capture_default_str();
  s_synth->add_option("--shift", synth.shift, "constant brightness offset applied to both splits");
  s_synth->add_option("--out", synth.out, "manifest path")->required();
  detail::add_format(s_synth, format);

  // pretrain
  struct {
    std::string data, split = "train", test_split = "test", spec, out;
    std::uint64_t init_seed = 0;
    TrainConfig train;
  } pre;
  auto* s_pre = app.add_subcommand("pretrain", "train a source model and save it frozen");
  s_pre->add_option("--data", pre.data, "source manifest")->required();
  s_pre->add_option("--split", pre.split)->capture_default_str();
  s_pre->add_option("--test-split", pre.test_split)->capture_default_str();
  s_pre->add_option("--spec", pre.spec, "model spec JSON (default: digit CNN)");
  s_pre->add_option("--epochs", pre.train.epochs)->capture_default_str();
  s_pre->add_option("--batch-size", pre.train.batch_size)->capture_default_str();
  s_pre->add_option("--lr", pre.train.lr)->capture_default_str();
  s_pre->add_option("--seed", pre.train.seed)->capture_default_str();
  s_pre->add_option("--init-seed", pre.init_seed)->capture_default_str();
  s_pre->add_option("--out", pre.out, "checkpoint path")->required();
  detail::add_format(s_pre, format);

  // adapt / adapt-unsup / bn-adapt share the target flags
  struct {
    std::string model, target, out, pool_split = "train", test_split = "test";
    double ratio = 1.0;
    AdaptConfig adapt;
  } ad;
  auto target_flags = [&](CLI::App* sub) {
    sub->add_option("--model", ad.model, "frozen checkpoint")->required();
    sub->add_option("--target", ad.target, "target manifest")->required();
    sub->add_option("--ratio", ad.ratio, "fraction of the adaptation split to use")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->add_option("--split", ad.pool_split, "adaptation split")->capture_default_str();
    sub->add_option("--test-split", ad.test_split, "evaluation split")->capture_default_str();
    sub->add_option("--out", ad.out)->required();
    detail::add_format(sub, format);
  };
  auto* s_adapt = app.add_subcommand("adapt", "optimize a meta input on labeled target data");
  target_flags(s_adapt);
  detail::add_adapt_flags(s_adapt, ad.adapt);
  auto* s_unsup = app.add_subcommand("adapt-unsup", "optimize a meta input on pseudo-labeled target data");
  target_flags(s_unsup);
  detail::add_adapt_flags(s_unsup, ad.adapt);
  s_unsup->add_option("--alpha", ad.adapt.alpha, "confidence threshold")->capture_default_str();
  auto* s_bn = app.add_subcommand("bn-adapt", "recompute batchnorm statistics on target data");
  target_flags(s_bn);
  s_bn->add_option("--seed", ad.adapt.seed, "subsample seed")->capture_default_str();

  // eval
  struct {
    std::string model, data, split = "test", meta;
  } ev;
  auto* s_eval = app.add_subcommand("eval", "accuracy of a model (optionally with a meta input) on a split");
  s_eval->add_option("--model", ev.model)->required();
  s_eval->add_option("--data", ev.data, "manifest")->required();
  s_eval->add_option("--split", ev.split)->capture_default_str();
  s_eval->add_option("--meta", ev.meta, "meta input file");
  detail::add_format(s_eval, format);

  // corrupt
  struct {
    std::string in, out, kind = "gn";
    CorruptionSpec spec;
  } co;
  auto* s_cor = app.add_subcommand("corrupt", "write a corrupted copy of every split");
  s_cor->add_option("--in", co.in, "clean manifest")->required();
  s_cor->add_option("--out", co.out, "output manifest")->required();
  s_cor->add_option("--kind", co.kind, "gn | gb | sp | sn | comprehensive")->capture_default_str();
  s_cor->add_option("--psnr", co.spec.target_psnr_db, "GN target PSNR (dB)")->capture_default_str();
  s_cor->add_option("--sigma", co.spec.sigma, "GB sigma")->capture_default_str();
  s_cor->add_option("--flip-prob", co.spec.flip_prob, "SP flip probability")->capture_default_str();
  s_cor->add_option("--variance", co.spec.variance, "SN variance")->capture_default_str();
  s_cor->add_option("--seed", co.spec.seed)->capture_default_str();
  detail::add_format(s_cor, format);

  // run
  struct {
    std::string experiment, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::vector<double> ratios;
    std::vector<std::string> methods;
  } rn;
  auto* s_run = app.add_subcommand("run", "execute an experiment config");
  s_run->add_option("--experiment", rn.experiment, "experiment config JSON")->required();
  s_run->add_option("--out", rn.out, "write the structured report here");
  s_run->add_option("--seed", rn.seed, "override the experiment seed");
  s_run->add_option("--epochs", rn.epochs, "override adapt epochs");
  s_run->add_option("--ratios", rn.ratios, "override the ratio grid");
  s_run->add_option("--methods", rn.methods, "override the method list");
  detail::add_format(s_run, format);

  // report
  std::string report_in;
  auto* s_rep = app.add_subcommand("report", "render a saved report");
  s_rep->add_option("--in", report_in, "structured report")->required();
  detail::add_format(s_rep, format);


  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "metainput: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string op = sub->get_name();
  try {
    if (sub == s_synth) {
      GlyphStyle style = synth.style == "mid_range" ? GlyphStyle::mid_range() : GlyphStyle::classic();
      style.size = synth.size;
      const Dataset all = synth_glyph_digits(synth.count + synth.test_count, style, synth.seed);
      auto [train, test] = split(all, synth.count, derive_seed(synth.seed, "split"));
      std::vector<std::string> lineage{"synth_glyph_digits(" + style.name + ", seed=" + std::to_string(synth.seed) +
                                       ")"};
      if (synth.shift) {
        train = synth_shift(train, *synth.shift);
        test = synth_shift(test, *synth.shift);
        lineage.push_back(train.lineage.back());
      }
      const Manifest m = save_dataset_manifest(synth.out, style.name, {{"train", train}, {"test", test}}, lineage,
                                               "", "synthetic glyph digits in place of MNIST/USPS");
      json r{{"manifest", synth.out}, {"train", train.size()}, {"test", test.size()}};
      for (const auto& [name, e] : m.splits) r["checksum_" + name] = e.checksum;
      detail::emit(out, format, *sub, r);
    } else if (sub == s_pre) {
      const Manifest m = read_manifest(pre.data);
      const Dataset train = load_split(m, pre.split);
      ModelSpec spec = ModelSpec::default_digits();
      if (!pre.spec.empty()) {
        std::ifstream in(pre.spec);
        if (!in) throw IngestionError("pretrain: cannot open spec '" + pre.spec + "'");
        spec = spec_from_json(json::parse(in));
      }
      const TrainResult tr = pretrain(build_model(spec, pre.init_seed), train, pre.train);
      save_model(tr.model, pre.out);
      json r{{"checkpoint", pre.out}, {"epoch_loss", tr.epoch_loss}, {"train_samples", train.size()},
             {"model_checksum", hex64(model_checksum(tr.model))}};
      if (m.splits.count(pre.test_split)) r["test_accuracy"] = evaluate_accuracy(tr.model, load_split(m, pre.test_split));
      detail::emit(out, format, *sub, r);
    } else if (sub == s_adapt || sub == s_unsup || sub == s_bn) {
      if (ad.ratio <= 0.0) throw UsageError(op + ": --ratio must be in (0, 1], got " + std::to_string(ad.ratio));
      const Model model = load_model(ad.model);
      const detail::TargetSplits t = detail::load_target(ad.target, ad.pool_split, ad.test_split);
      Dataset subset = subsample(t.pool, ad.ratio, derive_seed(ad.adapt.seed, "subset"));
      json r{{"adapt_samples", subset.size()}, {"out", ad.out}};
      const std::uint64_t params_before = params_checksum(model);
      if (sub == s_bn) {
        const Model adapted = bn_adapt(model, subset);
        save_model(adapted, ad.out);
        if (t.test) {
          r["baseline_accuracy"] = evaluate_accuracy(model, *t.test);
          r["adapted_accuracy"] = evaluate_accuracy(adapted, *t.test);
        }
        r["params_unchanged"] = params_checksum(adapted) == params_before;
      } else {
        MetaInput mi;
        if (sub == s_adapt) {
          mi = optimize_meta_input(model, subset, ad.adapt);
        } else {
          const UnsupervisedResult u = optimize_meta_input_unsupervised(model, subset.without_labels(), ad.adapt);
          mi = u.meta;
          r["selection_fraction"] = u.pseudo.selection_fraction();
          r["pseudo_labeled"] = u.pseudo.indices.size();
        }
        mi.trained_on.ratio = ad.ratio;
        save_meta_input(mi, ad.out);
        if (t.test) {
          r["baseline_accuracy"] = evaluate_accuracy(model, *t.test);
          r["adapted_accuracy"] = evaluate_accuracy(model, *t.test, mi);
        }
        r["steps"] = mi.steps;
        r["final_loss"] = mi.epoch_loss.empty() ? 0.0 : mi.epoch_loss.back();
        r["meta_input_checksum"] = hex64(meta_input_checksum(mi));
        r["params_unchanged"] = params_checksum(model) == params_before;
      }
      detail::emit(out, format, *sub, r);
    } else if (sub == s_eval) {
      const Model model = load_model(ev.model);
      const Manifest m = read_manifest(ev.data);
      const Dataset ds = load_split(m, ev.split);
      json r{{"split", ev.split}, {"samples", ds.size()}};
      if (ev.meta.empty()) {
        r["accuracy"] = evaluate_accuracy(model, ds);
      } else {
        const MetaInput mi = load_meta_input(ev.meta);
        r["baseline_accuracy"] = evaluate_accuracy(model, ds);
        r["accuracy"] = evaluate_accuracy(model, ds, mi);
      }
      if (!m.reference.empty()) {
        const Dataset clean = load_split(detail::reference_path(m), ev.split);
        const double db = measure_psnr(clean, ds).mean;
        r["psnr_db"] = std::isinf(db) ? json("inf") : json(db);
      }
      detail::emit(out, format, *sub, r);
    } else if (sub == s_cor) {
      co.spec.kind = parse_corruption_kind(co.kind);
      co.spec.validate();
      const Manifest in = read_manifest(co.in);
      std::map<std::string, Dataset> noisy;
      json r{{"manifest", co.out}, {"corruption", co.spec.label()}};
      for (const auto& [name, entry] : in.splits) {
        const Dataset clean = load_split(in, name);
        CorruptionSpec s = co.spec;
        s.seed = derive_seed(co.spec.seed, name);
        noisy[name] = corrupt(clean, s);
        r["psnr_db_" + name] = measure_psnr(clean, noisy[name]).mean;
      }
      std::vector<std::string> lineage = in.lineage;
      lineage.push_back("corrupt(" + co.spec.label() + ", seed=" + std::to_string(co.spec.seed) + ")");
      const auto out_dir = std::filesystem::absolute(co.out).parent_path();
      const std::string ref = std::filesystem::relative(std::filesystem::absolute(co.in), out_dir).string();
      std::string subst = in.substitution;
      if (!subst.empty()) subst += "; ";
      subst += "corrupted copy of " + in.name + " (" + co.spec.label() + ")";
      save_dataset_manifest(co.out, in.name + "+" + co.kind, noisy, lineage, ref, subst);
      detail::emit(out, format, *sub, r);
    } else if (sub == s_run) {
      std::ifstream in(rn.experiment);
      if (!in) throw IngestionError("run: cannot open experiment config '" + rn.experiment + "'");
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError("run: experiment config '" + rn.experiment + "': " + e.what());
      }
      if (rn.seed) j["seed"] = *rn.seed;
      if (rn.epochs) j["adapt"]["epochs"] = *rn.epochs;
      if (!rn.ratios.empty()) j["ratios"] = rn.ratios;
      if (!rn.methods.empty()) j["methods"] = rn.methods;
      // Relative checkpoint and manifest paths are relative to the config file.
      const auto base = std::filesystem::path(rn.experiment).parent_path();
      auto rebase = [&](json& node, const char* key) {
        if (node.contains(key)) {
          const std::filesystem::path p(node[key].get<std::string>());
          if (p.is_relative() && !base.empty()) node[key] = (base / p).string();
        }
      };
      if (j.contains("model")) rebase(j["model"], "checkpoint");
      if (j.contains("source")) rebase(j["source"], "manifest");
      if (j.contains("target")) rebase(j["target"], "manifest");
      const ExperimentConfig cfg = experiment_config_from_json(j);
      ExperimentReport report = run_experiment(cfg);
      report.config["cli"] = detail::effective_config(*sub);
      if (!rn.out.empty()) {
        std::ofstream o(rn.out, std::ios::trunc);
        if (!o) throw IngestionError("run: cannot write report '" + rn.out + "'");
        o << render_report(report, "structured");
      }
      out << render_report(report, format == "structured" ? "structured" : "table");
      std::size_t failed = 0;
      for (const auto& c : report.cells) failed += c.status != "ok";
      if (failed) err << "metainput run: " << failed << " cell(s) failed; see the report\n";
    } else if (sub == s_rep) {
      std::ifstream in(report_in);
      if (!in) throw IngestionError("report: cannot open '" + report_in + "'");
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw FormatError("report '" + report_in + "': " + e.what(), 0);
      }
      out << render_report(report_from_json(j), format == "structured" ? "structured" : "table");
    }
  } catch (const UsageError& e) {
    err << "metainput " << op << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "metainput " << op << ": " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitOk;
}

}  // namespace metainput::cli
