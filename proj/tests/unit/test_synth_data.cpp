#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

#include <gtest/gtest.h>

#include "dsink/binary_io.hpp"
#include "dsink/error.hpp"
#include "dsink/synth_data.hpp"

using namespace dsink::data;
namespace fs = std::filesystem;

namespace {

DatasetRecipe small_recipe() {
  DatasetRecipe r;
  r.num_classes = 4;
  r.base_per_class = 40;
  r.imbalance_ratio = 4.0;
  r.noise_ratio = 0.25;
  r.feature_dim = 5;
  r.seed = 17;
  r.test_per_class = 6;
  return r;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dsink_test_synth";
  fs::create_directories(dir);
  return dir / name;
}

dsink::ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const dsink::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected dsink::Error";
  return dsink::ErrorKind::kInvalidArgument;
}

}  // namespace

TEST(LongtailCounts, ThreeClassExample) {
  DatasetRecipe r;
  r.num_classes = 3;
  r.base_per_class = 500;
  r.imbalance_ratio = 100.0;
  EXPECT_EQ(sample_longtail_counts(r), (std::vector<std::size_t>{500, 50, 5}));
}

TEST(LongtailCounts, BalancedWhenIrIsOne) {
  DatasetRecipe r;
  r.imbalance_ratio = 1.0;
  for (std::size_t c : sample_longtail_counts(r)) EXPECT_EQ(c, 500u);
}

TEST(LongtailCounts, TenClassRatioAndMonotone) {
  DatasetRecipe r;
  const auto counts = sample_longtail_counts(r);
  ASSERT_EQ(counts.size(), 10u);
  for (std::size_t c = 1; c < counts.size(); ++c) EXPECT_LE(counts[c], counts[c - 1]);
  // Independent recomputation of the interpolation endpoints.
  EXPECT_EQ(counts.front(), 500u);
  EXPECT_EQ(counts.back(), static_cast<std::size_t>(std::lround(500.0 / 10.0)));
  const double ratio = static_cast<double>(counts.front()) / static_cast<double>(counts.back());
  EXPECT_NEAR(ratio, 10.0, 10.0 * 0.5 / static_cast<double>(counts.back()));
}

TEST(Recipe, ValidationRejectsInfeasible) {
  DatasetRecipe r;
  r.noise_ratio = 1.0;
  EXPECT_EQ(kind_of([&] { r.validate(); }), dsink::ErrorKind::kConfig);
  r = DatasetRecipe{};
  r.imbalance_ratio = 0.5;
  EXPECT_EQ(kind_of([&] { r.validate(); }), dsink::ErrorKind::kConfig);
  r = DatasetRecipe{};
  r.base_per_class = 5;
  r.imbalance_ratio = 10.0;
  EXPECT_EQ(kind_of([&] { r.validate(); }), dsink::ErrorKind::kConfig);
  r = DatasetRecipe{};
  r.class_separation = 0.0;
  EXPECT_EQ(kind_of([&] { r.validate(); }), dsink::ErrorKind::kConfig);
}

TEST(Recipe, EchoRoundTrip) {
  DatasetRecipe r = small_recipe();
  r.class_separation = 0.1 + 0.2;
  EXPECT_EQ(DatasetRecipe::from_echo(r.echo()), r);
}

TEST(InjectNoise, ZeroRatioIsIdentity) {
  std::vector<std::uint32_t> labels(100);
  for (std::uint32_t i = 0; i < 100; ++i) labels[i] = i % 7;
  EXPECT_EQ(inject_noise(labels, NoiseMode::kSymmetric, 0.0, 7, 3), labels);
}

TEST(InjectNoise, AsymmetricPartner) {
  const std::vector<std::uint32_t> labels(50, 3);
  const auto out = inject_noise(labels, NoiseMode::kAsymmetric, 0.5, 4, 9);
  std::size_t flipped = 0;
  for (std::uint32_t y : out) {
    EXPECT_TRUE(y == 3 || y == 0);
    flipped += (y == 0);
  }
  EXPECT_EQ(flipped, 25u);
}

TEST(InjectNoise, SymmetricFlipFractionAndNeverSelf) {
  std::vector<std::uint32_t> labels(10000);
  for (std::uint32_t i = 0; i < labels.size(); ++i) labels[i] = i % 10;
  const auto out = inject_noise(labels, NoiseMode::kSymmetric, 0.6, 10, 5);
  std::size_t flipped = 0;
  std::vector<std::size_t> hit(10, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ASSERT_LT(out[i], 10u);
    if (out[i] != labels[i]) {
      ++flipped;
      ++hit[out[i]];
    }
  }
  const double frac = static_cast<double>(flipped) / 10000.0;
  EXPECT_GE(frac, 0.58);
  EXPECT_LE(frac, 0.62);
  // Every target class is reachable.
  for (std::size_t c : hit) EXPECT_GT(c, 0u);
}

TEST(Generate, NoNoiseMeansCleanLabels) {
  DatasetRecipe r = small_recipe();
  r.noise_mode = NoiseMode::kNone;
  r.noise_ratio = 0.0;
  const Dataset ds = generate(r);
  EXPECT_EQ(ds.observed_labels, ds.true_labels);
  EXPECT_EQ(measure_nr(ds), 0.0);
}

TEST(Generate, DeterministicUnderSeed) {
  const DatasetRecipe r = small_recipe();
  EXPECT_TRUE(generate(r) == generate(r));
  EXPECT_EQ(serialize(generate(r)), serialize(generate(r)));
  DatasetRecipe other = r;
  other.seed = 18;
  EXPECT_FALSE(generate(r) == generate(other));
}

TEST(Generate, ShapesAndCounts) {
  const DatasetRecipe r = small_recipe();
  const Dataset ds = generate(r);
  const auto counts = sample_longtail_counts(r);
  EXPECT_EQ(ds.class_counts, counts);
  EXPECT_EQ(ds.size(), std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  EXPECT_EQ(ds.features.rows(), 5);
  EXPECT_EQ(static_cast<std::size_t>(ds.features.cols()), ds.size());
  std::vector<std::size_t> recount(4, 0);
  for (std::uint32_t y : ds.true_labels) ++recount[y];
  EXPECT_EQ(recount, counts);
}

TEST(Generate, TestSplitBalancedAndClean) {
  const Dataset ds = generate(small_recipe(), Split::kTest);
  EXPECT_EQ(ds.split, Split::kTest);
  for (std::size_t c : ds.class_counts) EXPECT_EQ(c, 6u);
  EXPECT_EQ(measure_nr(ds), 0.0);
  EXPECT_DOUBLE_EQ(measure_ir(ds), 1.0);
}

TEST(Generate, AcceptanceRecipeStatistics) {
  DatasetRecipe r;
  r.seed = 1;
  const Dataset ds = generate(r);
  ASSERT_GE(ds.size(), 2000u);
  EXPECT_NEAR(measure_nr(ds), 0.4, 0.01);
  EXPECT_NEAR(measure_ir(ds), 10.0, 0.2);
}

TEST(Measure, DirectCounts) {
  Dataset ds;
  ds.true_labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  ds.observed_labels = {1, 1, 1, 1, 0, 1, 1, 1, 1, 1};
  ds.class_counts = {5, 5};
  EXPECT_DOUBLE_EQ(measure_nr(ds), 0.4);
  EXPECT_DOUBLE_EQ(measure_ir(ds), 1.0);

  Dataset lt;
  lt.true_labels.assign(500, 0);
  lt.true_labels.insert(lt.true_labels.end(), 50, 1);
  lt.true_labels.insert(lt.true_labels.end(), 5, 2);
  lt.observed_labels = lt.true_labels;
  lt.class_counts = {500, 50, 5};
  EXPECT_DOUBLE_EQ(measure_ir(lt), 100.0);
  EXPECT_DOUBLE_EQ(measure_nr(lt), 0.0);
}

TEST(Persist, RoundTrip) {
  const Dataset ds = generate(small_recipe());
  const fs::path p = temp_file("rt.dsnk");
  save(ds, p);
  EXPECT_TRUE(load(p) == ds);
}

TEST(Persist, TruncatedAndCorruptFilesRejected) {
  const auto bytes = serialize(generate(small_recipe()));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    const dsink::ErrorKind k = kind_of([&] { deserialize(part); });
    EXPECT_TRUE(k == dsink::ErrorKind::kIo || k == dsink::ErrorKind::kChecksum) << cut;
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_EQ(kind_of([&] { deserialize(flipped); }), dsink::ErrorKind::kChecksum);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { deserialize(magic); }), dsink::ErrorKind::kIo);
}

TEST(Persist, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { load(temp_file("does_not_exist.dsnk")); }), dsink::ErrorKind::kIo);
}

// The golden file was written by an earlier build. Set DSINK_REGEN_GOLDEN=1 to rewrite it
// after an intentional format or generator change.
TEST(Persist, GoldenFileLoadsAndMatchesGenerator) {
  const fs::path golden = fs::path(DSINK_TEST_DATA_DIR) / "golden_small.dsnk";
  const Dataset fresh = generate(small_recipe());
  if (const char* regen = std::getenv("DSINK_REGEN_GOLDEN"); regen && std::string(regen) == "1") {
    save(fresh, golden);
    GTEST_SKIP() << "regenerated " << golden;
  }
  ASSERT_TRUE(fs::exists(golden)) << golden;
  const Dataset old = load(golden);
  EXPECT_TRUE(old == fresh);
  EXPECT_EQ(old.recipe, small_recipe());
  EXPECT_EQ(dsink::io::read_file(golden), serialize(fresh));
}
