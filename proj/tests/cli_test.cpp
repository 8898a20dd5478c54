#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "metainput/cli.hpp"
#include "support/temp_dir.hpp"

namespace metainput {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "metainput");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// A clean mid-range source and a briefly trained frozen model, shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::filesystem::path(std::filesystem::temp_directory_path() / "metainput-cli-suite");
    if (const char* root = std::getenv("METAINPUT_TEST_TMP")) *dir_ = std::filesystem::path(root) / "cli-suite";
    std::filesystem::remove_all(*dir_);
    std::filesystem::create_directories(*dir_);
    const auto r1 = run_cli({"synth", "--style", "mid_range", "--count", "300", "--test-count", "100", "--seed", "1",
                             "--out", path("src.json")});
    ASSERT_EQ(r1.code, 0) << r1.err;
    const auto r2 = run_cli({"pretrain", "--data", path("src.json"), "--epochs", "3", "--lr", "0.003", "--batch-size", "32",
                             "--out", path("m.ckpt")});
    ASSERT_EQ(r2.code, 0) << r2.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string path(const std::string& leaf) { return (*dir_ / leaf).string(); }

  static std::filesystem::path* dir_;
};

std::filesystem::path* Cli::dir_ = nullptr;

TEST_F(Cli, PretrainedCheckpointIsFrozen) { EXPECT_TRUE(load_model(path("m.ckpt")).frozen); }

TEST_F(Cli, AdaptWritesMetaInputAndPrintsAccuracies) {
  const auto out = testing::scratch_dir() / "w.mi";
  const auto r = run_cli({"adapt", "--model", path("m.ckpt"), "--target", path("src.json"), "--ratio", "0.1",
                          "--epochs", "2", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("adapted_accuracy:"), std::string::npos);
  EXPECT_NE(r.out.find("baseline_accuracy:"), std::string::npos);
  EXPECT_TRUE(r.err.empty());
  const MetaInput mi = load_meta_input(out);
  EXPECT_EQ(mi.trained_on.ratio, 0.1);
  EXPECT_EQ(mi.w.shape(), (Shape{28, 28, 1}));
}

TEST_F(Cli, AdaptMatchesLibraryCall) {
  const auto out = testing::scratch_dir() / "w.mi";
  const auto r = run_cli({"adapt", "--model", path("m.ckpt"), "--target", path("src.json"), "--ratio", "0.2",
                          "--epochs", "2", "--seed", "5", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  AdaptConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  const Dataset pool = load_split(path("src.json"), "train");
  const MetaInput lib = optimize_meta_input(load_model(path("m.ckpt")), subsample(pool, 0.2, derive_seed(5, "subset")), cfg);
  EXPECT_TRUE(bitwise_equal(load_meta_input(out).w, lib.w));
}

TEST_F(Cli, AdaptOnUnfrozenCheckpointIsDomainError) {
  const auto dir = testing::scratch_dir();
  Model m = load_model(path("m.ckpt"));
  m.frozen = false;
  save_model(m, dir / "open.ckpt");
  const auto r = run_cli({"adapt", "--model", (dir / "open.ckpt").string(), "--target", path("src.json"), "--out",
                          (dir / "w.mi").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frozen"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("adapt"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(std::filesystem::exists(dir / "w.mi"));
}

TEST_F(Cli, CorruptThenEvalReportsPsnr) {
  const auto dir = testing::scratch_dir();
  const auto c = run_cli({"corrupt", "--kind", "gn", "--psnr", "23", "--in", path("src.json"), "--out",
                          (dir / "noisy.json").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto e = run_cli({"eval", "--model", path("m.ckpt"), "--data", (dir / "noisy.json").string(), "--format",
                          "structured"});
  ASSERT_EQ(e.code, 0) << e.err;
  const json j = json::parse(e.out);
  EXPECT_NEAR(j.at("psnr_db").get<double>(), 23.0, 0.5);
  EXPECT_EQ(j.at("command"), "eval");
  EXPECT_EQ(j.at("effective_config").at("split"), "test");
}

TEST_F(Cli, BnAdaptAndUnsupervisedRun) {
  const auto dir = testing::scratch_dir();
  const auto b = run_cli({"bn-adapt", "--model", path("m.ckpt"), "--target", path("src.json"), "--ratio", "0.5",
                          "--out", (dir / "bn.ckpt").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(b.out.find("params_unchanged: true"), std::string::npos);
  EXPECT_EQ(params_checksum(load_model(dir / "bn.ckpt")), params_checksum(load_model(path("m.ckpt"))));
  const auto u = run_cli({"adapt-unsup", "--model", path("m.ckpt"), "--target", path("src.json"), "--alpha", "0.5",
                          "--epochs", "1", "--out", (dir / "u.mi").string()});
  ASSERT_EQ(u.code, 0) << u.err;
  EXPECT_NE(u.out.find("selection_fraction"), std::string::npos);
  EXPECT_FALSE(load_meta_input(dir / "u.mi").trained_on.supervised);
}

TEST_F(Cli, UnsupervisedWithNoConfidentSamplesIsDomainError) {
  const auto dir = testing::scratch_dir();
  const auto u = run_cli({"adapt-unsup", "--model", path("m.ckpt"), "--target", path("src.json"), "--alpha",
                          "0.9999999", "--epochs", "1", "--out", (dir / "u.mi").string()});
  EXPECT_EQ(u.code, 1);
  EXPECT_NE(u.err.find("lower alpha"), std::string::npos) << u.err;
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--model", path("m.ckpt")}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--model", path("m.ckpt"), "--data", path("src.json"), "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--model", path("m.ckpt"), "--data", path("src.json"), "--format", "xml"}).code, 2);
  const auto r = run_cli({"adapt", "--model", path("m.ckpt"), "--target", path("src.json"), "--ratio", "0", "--out",
                          "x.mi"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--ratio"), std::string::npos);
}

TEST_F(Cli, DomainErrorsExitOneWithDiagnosticsOnStderr) {
  const auto r = run_cli({"eval", "--model", path("missing.ckpt"), "--data", path("src.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing.ckpt"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST_F(Cli, ConfigFileSuppliesFlagsAndCommandLineWins) {
  const auto dir = testing::scratch_dir();
  std::ofstream(dir / "c.toml") << "[adapt]\nratio = 0.2\nepochs = 1\n";
  const auto r = run_cli({"adapt", "--config", (dir / "c.toml").string(), "--model", path("m.ckpt"), "--target",
                          path("src.json"), "--epochs", "2", "--out", (dir / "w.mi").string(), "--format",
                          "structured"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("effective_config").at("ratio"), "0.2");
  EXPECT_EQ(j.at("effective_config").at("epochs"), "2");
  EXPECT_EQ(j.at("adapt_samples"), 60);
  std::ofstream(dir / "bad.toml") << "[adapt]\nnot_a_flag = 1\n";
  EXPECT_EQ(run_cli({"adapt", "--config", (dir / "bad.toml").string(), "--model", "m", "--target", "t", "--out", "o"})
                .code,
            2);
}

TEST_F(Cli, RunAndReport) {
  const auto dir = testing::scratch_dir();
  std::filesystem::copy_file(path("m.ckpt"), dir / "m.ckpt");
  std::ofstream(dir / "exp.json") << R"({
    "name": "cli-run", "scenario": "domain_shift",
    "model": {"checkpoint": "m.ckpt"},
    "target": {"synthetic": {"style": "mid_range", "count": 100, "test_count": 100, "seed": 3}},
    "target_shift": 0.2, "ratios": [0.3, 1.0], "methods": ["meta_input", "bn_adapt"],
    "adapt": {"epochs": 1}, "seed": 4})";
  const auto r = run_cli({"run", "--experiment", (dir / "exp.json").string(), "--out", (dir / "rep.json").string(),
                          "--ratios", "1.0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("Ratio of target data", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("100% bn_adapt"), std::string::npos);
  EXPECT_EQ(r.out.find("30%"), std::string::npos);
  const auto t = run_cli({"report", "--in", (dir / "rep.json").string()});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(t.out, r.out);
  const auto s = run_cli({"report", "--in", (dir / "rep.json").string(), "--format", "structured"});
  const ExperimentReport rep = report_from_json(json::parse(s.out));
  EXPECT_EQ(rep.config.at("ratios"), json({1.0}));
  EXPECT_EQ(rep.config.at("cli").at("ratios"), "1.0");
}

TEST_F(Cli, BinaryExitCodes) {
  const std::string bin = METAINPUT_CLI_PATH;
  auto status = [](const std::string& cmd) { return WEXITSTATUS(std::system((cmd + " >/dev/null 2>&1").c_str())); };
  EXPECT_EQ(status(bin + " --help"), 0);
  EXPECT_EQ(status(bin + " eval"), 2);
  EXPECT_EQ(status(bin + " eval --model /nonexistent.ckpt --data " + path("src.json")), 1);
}

}  // namespace
}  // namespace metainput
