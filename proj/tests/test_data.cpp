#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "iil/data.hpp"

using namespace iil;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("iil_test_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// One 2x3 image with pixels 0, 51, 102, 153, 204, 255 and label 7.
std::vector<unsigned char> fixture_images() {
  return {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 51, 102, 153, 204, 255};
}
std::vector<unsigned char> fixture_labels() { return {0, 0, 8, 1, 0, 0, 0, 1, 7}; }

}  // namespace

TEST(Idx, HandcraftedFixtureRoundTrips) {
  const auto dir = temp_dir("fixture");
  write_bytes(dir / "img", fixture_images());
  write_bytes(dir / "lab", fixture_labels());
  const Dataset ds = load_idx((dir / "img").string(), (dir / "lab").string());
  ASSERT_EQ(ds.images.shape(), (Shape{1, 2, 3, 1}));
  EXPECT_EQ(ds.labels, std::vector<int>{7});
  EXPECT_EQ(ds.num_classes, 8);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(ds.images[i], 51.0 * static_cast<double>(i) / 255.0);
}

TEST(Idx, BadMagicReportsOffset) {
  const auto dir = temp_dir("magic");
  auto img = fixture_images();
  img[3] = 0x02;
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", fixture_labels());
  try {
    load_idx((dir / "img").string(), (dir / "lab").string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos);
  }
}

TEST(Idx, TruncatedPixelsReportOffset) {
  const auto dir = temp_dir("trunc");
  auto img = fixture_images();
  img.resize(img.size() - 2);
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", fixture_labels());
  try {
    load_idx((dir / "img").string(), (dir / "lab").string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 20"), std::string::npos);
  }
  write_bytes(dir / "short", {0, 0, 8, 3, 0, 0});
  EXPECT_THROW(load_idx((dir / "short").string(), (dir / "lab").string()), FormatError);
}

TEST(Idx, CountMismatchIsAnError) {
  const auto dir = temp_dir("count");
  write_bytes(dir / "img", fixture_images());
  write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 2, 7, 1});
  EXPECT_THROW(load_idx((dir / "img").string(), (dir / "lab").string()), FormatError);
  EXPECT_THROW(load_idx((dir / "missing").string(), (dir / "lab").string()), FormatError);
}

TEST(Idx, RandomFixtureWriteReadIsIdentity) {
  const auto dir = temp_dir("roundtrip");
  std::mt19937_64 rng(3);
  Dataset ds{Tensor({5, 4, 6, 1}), {}, 10};
  for (double& v : ds.images.data()) v = static_cast<double>(rng() % 256) / 255.0;
  for (int i = 0; i < 5; ++i) ds.labels.push_back(static_cast<int>(rng() % 10));
  write_idx(ds, (dir / "img").string(), (dir / "lab").string());
  const Dataset back = load_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(back.images.values(), ds.images.values());
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(Synthetic, SameSeedSameData) {
  const SyntheticSpec spec{SyntheticKind::Glyphs, 30, 15, 0.15, 9};
  const Dataset a = make_synthetic(spec), b = make_synthetic(spec);
  EXPECT_EQ(a.images.values(), b.images.values());
  EXPECT_EQ(a.labels, b.labels);
  SyntheticSpec other = spec;
  other.seed = 10;
  EXPECT_NE(make_synthetic(other).images.values(), a.images.values());
}

TEST(Synthetic, ClassesAreBalancedWithinOne) {
  for (const auto kind : {SyntheticKind::Glyphs, SyntheticKind::Planted}) {
    const Dataset ds = make_synthetic({kind, 103, 12, 0.1, 2});
    std::vector<int> counts(static_cast<std::size_t>(ds.num_classes), 0);
    for (int l : ds.labels) ++counts[static_cast<std::size_t>(l)];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    EXPECT_LE(*hi - *lo, 1);
    for (double v : ds.images.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, RejectsDegenerateSettings) {
  EXPECT_THROW(make_synthetic({SyntheticKind::Glyphs, 0, 15, 0.1, 1}), ShapeError);
  EXPECT_THROW(make_synthetic({SyntheticKind::Glyphs, 4, 2, 0.1, 1}), ShapeError);
}

TEST(Subset, SizeIsCeilingAndStratified) {
  const Dataset ds = make_synthetic({SyntheticKind::Glyphs, 101, 9, 0.1, 4});
  for (const double f : {0.05, 0.2, 0.33, 0.5, 1.0}) {
    const Dataset sub = stratified_subset(ds, f, 17);
    const auto expect = static_cast<std::size_t>(std::ceil(f * 101.0 - 1e-9));
    EXPECT_EQ(sub.size(), expect);
    std::vector<double> counts(4, 0.0);
    for (int l : sub.labels) counts[static_cast<std::size_t>(l)] += 1.0;
    std::vector<double> share(4, 0.0);
    for (int l : ds.labels) share[static_cast<std::size_t>(l)] += static_cast<double>(expect) / 101.0;
    for (std::size_t c = 0; c < 4; ++c) EXPECT_LE(std::abs(counts[c] - share[c]), 1.0 + 1e-9);
  }
}

TEST(Subset, DeterministicAndValidated) {
  const Dataset ds = make_synthetic({SyntheticKind::Glyphs, 60, 9, 0.1, 4});
  EXPECT_EQ(stratified_subset(ds, 0.3, 5).images.values(), stratified_subset(ds, 0.3, 5).images.values());
  EXPECT_THROW(stratified_subset(ds, 0.0, 5), ConfigError);
  EXPECT_THROW(stratified_subset(ds, 1.5, 5), ConfigError);
}

TEST(Augmentation, RandomRotationPreservesShapeAndIsSeeded) {
  const Dataset ds = make_synthetic({SyntheticKind::Glyphs, 6, 11, 0.1, 4});
  std::mt19937_64 a(1), b(1);
  const Tensor ra = random_rotation(ds.images, a), rb = random_rotation(ds.images, b);
  EXPECT_EQ(ra.shape(), ds.images.shape());
  EXPECT_EQ(ra.values(), rb.values());
  EXPECT_NE(ra.values(), ds.images.values());
}
