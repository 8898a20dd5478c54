#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "metainput/glyphs.hpp"
#include "metainput/manifest.hpp"
#include "metainput/sampling.hpp"
#include "support/temp_dir.hpp"

namespace metainput {
namespace {

std::map<std::string, Dataset> two_splits() {
  const Dataset all = synth_glyph_digits(60, GlyphStyle::classic(), 5);
  auto [train, test] = split(all, 40, 1);
  return {{"train", train}, {"test", test}};
}

TEST(Manifest, WriteThenLoadMatchesQuantizedData) {
  const auto dir = testing::scratch_dir();
  const auto splits = two_splits();
  save_dataset_manifest(dir / "digits.json", "digits", splits, {"synth"}, "", "glyphs for MNIST");
  const Dataset train = load_split(dir / "digits.json", "train");
  ASSERT_EQ(train.size(), 40u);
  EXPECT_TRUE(bitwise_equal(train.images, idx::quantize(splits.at("train").images)));
  EXPECT_EQ(*train.labels, *splits.at("train").labels);
  EXPECT_EQ(train.lineage.front(), "synth");
  EXPECT_EQ(read_manifest(dir / "digits.json").substitution, "glyphs for MNIST");
}

TEST(Manifest, JsonRoundTrip) {
  const auto dir = testing::scratch_dir();
  const Manifest m = save_dataset_manifest(dir / "d.json", "d", two_splits(), {"a", "b"}, "clean.json");
  const Manifest back = read_manifest(dir / "d.json");
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.reference, "clean.json");
}

TEST(Manifest, MissingFileNamesTheEntry) {
  const auto dir = testing::scratch_dir();
  save_dataset_manifest(dir / "d.json", "d", two_splits());
  std::filesystem::remove(dir / "d-test-labels.idx");
  try {
    load_split(dir / "d.json", "test");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("splits.test.labels"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(load_split(dir / "d.json", "train"));
}

TEST(Manifest, UnknownSplitAndMissingManifest) {
  const auto dir = testing::scratch_dir();
  save_dataset_manifest(dir / "d.json", "d", two_splits());
  EXPECT_THROW(load_split(dir / "d.json", "validation"), IngestionError);
  EXPECT_THROW(read_manifest(dir / "nope.json"), IngestionError);
}

TEST(Manifest, ChecksumAndCountMismatch) {
  const auto dir = testing::scratch_dir();
  Manifest m = save_dataset_manifest(dir / "d.json", "d", two_splits());
  Manifest bad = m;
  bad.splits["train"].checksum = "0000000000000000";
  write_manifest(bad, dir / "d.json");
  EXPECT_THROW(load_split(dir / "d.json", "train"), ConsistencyError);
  bad = m;
  bad.splits["train"].count = 41;
  write_manifest(bad, dir / "d.json");
  EXPECT_THROW(load_split(dir / "d.json", "train"), ConsistencyError);
}

TEST(Manifest, DataDirFallback) {
  const auto dir = testing::scratch_dir();
  save_dataset_manifest(dir / "data" / "d.json", "d", two_splits());
  std::filesystem::create_directories(dir / "elsewhere");
  std::filesystem::rename(dir / "data" / "d.json", dir / "elsewhere" / "d.json");
  EXPECT_THROW(load_split(dir / "elsewhere" / "d.json", "train"), IngestionError);
  ::setenv("METAINPUT_DATA_DIR", (dir / "data").c_str(), 1);
  EXPECT_EQ(load_split(dir / "elsewhere" / "d.json", "train").size(), 40u);
  ::unsetenv("METAINPUT_DATA_DIR");
}

TEST(Manifest, RejectsForeignFormatAndVersion) {
  const auto dir = testing::scratch_dir();
  std::ofstream(dir / "x.json") << R"({"format":"other","version":1,"splits":{}})";
  EXPECT_THROW(read_manifest(dir / "x.json"), IngestionError);
  std::ofstream(dir / "y.json") << R"({"format":"metainput.manifest","version":7,"splits":{}})";
  EXPECT_THROW(read_manifest(dir / "y.json"), VersionError);
  std::ofstream(dir / "z.json") << "{not json";
  EXPECT_THROW(read_manifest(dir / "z.json"), IngestionError);
}

TEST(Manifest, UnlabeledSplit) {
  const auto dir = testing::scratch_dir();
  save_dataset_manifest(dir / "u.json", "u", {{"train", two_splits().at("train").without_labels()}});
  const Dataset ds = load_split(dir / "u.json", "train");
  EXPECT_FALSE(ds.labeled());
  EXPECT_FALSE(std::filesystem::exists(dir / "u-train-labels.idx"));
}

}  // namespace
}  // namespace metainput
