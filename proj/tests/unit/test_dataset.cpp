#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "scratch_dir.hpp"
#include "toap/dataset.hpp"
#include "toap/image_io.hpp"

namespace {

void write_identity(const std::filesystem::path& dir, int count, float shade) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    toap::write_png(dir / ("img" + std::to_string(i) + ".png"), torch::full({3, 32, 32}, shade + 0.05f * i));
  }
}

TEST(LoadDataset, EnumeratesIdentitiesInSortedOrder) {
  oracle::ScratchDir dir("load");
  write_identity(dir.path() / "bob", 3, 0.6f);
  write_identity(dir.path() / "alice", 3, 0.2f);
  const auto samples = toap::load_dataset(dir.path(), 64);
  ASSERT_EQ(samples.size(), 6u);
  EXPECT_EQ(toap::labels_of(samples), (std::vector<int>{0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(samples[0].pixels.sizes(), (std::vector<int64_t>{3, 64, 64}));
  EXPECT_NEAR(samples[0].pixels.mean().item<double>(), 0.2, 0.01);

  const auto again = toap::load_dataset(dir.path(), 64);
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_TRUE(torch::equal(samples[i].pixels, again[i].pixels));
}

TEST(LoadDataset, EmptyIdentityDirectoryIsNamed) {
  oracle::ScratchDir dir("empty");
  write_identity(dir.path() / "a", 2, 0.3f);
  std::filesystem::create_directories(dir.path() / "hollow");
  try {
    toap::load_dataset(dir.path(), 32);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("hollow"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, MinImagesSkipsSmallIdentities) {
  oracle::ScratchDir dir("min");
  write_identity(dir.path() / "a", 1, 0.3f);
  write_identity(dir.path() / "b", 3, 0.5f);
  const auto samples = toap::load_dataset(dir.path(), 32, 2);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(toap::count_identities(samples), 1);
}

TEST(MakeSplits, DatabaseReceivesTheRemainder) {
  const auto samples = toap::generate_synthetic(3, 10, 32, 1);
  const auto s = toap::make_splits(samples, 4, 2, 7);
  EXPECT_EQ(s.train.size(), 12u);
  EXPECT_EQ(s.test.size(), 6u);
  EXPECT_EQ(s.database.size(), 12u);
  for (int p = 0; p < 3; ++p) {
    const auto db = toap::labels_of(s.database);
    EXPECT_EQ(std::count(db.begin(), db.end(), p), 4);
  }
}

std::set<const void*> storage_of(const std::vector<toap::ImageSample>& v) {
  std::set<const void*> out;
  for (const auto& s : v) out.insert(s.pixels.data_ptr());
  return out;
}

TEST(MakeSplits, DisjointAndCompleteForEverySeed) {
  const auto samples = toap::generate_synthetic(4, 9, 16, 3);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto s = toap::make_splits(samples, 3, 2, seed);
    const auto a = storage_of(s.train), b = storage_of(s.test), c = storage_of(s.database);
    std::set<const void*> all(a);
    all.insert(b.begin(), b.end());
    all.insert(c.begin(), c.end());
    EXPECT_EQ(all.size(), samples.size()) << "seed " << seed;
    for (const auto* split : {&s.train, &s.test, &s.database}) {
      const auto labels = toap::labels_of(*split);
      EXPECT_EQ(std::set<int>(labels.begin(), labels.end()).size(), 4u);
    }
    EXPECT_EQ(s.train.size(), 12u);
    EXPECT_EQ(s.test.size(), 8u);
  }
}

TEST(MakeSplits, SeededDeterminism) {
  const auto samples = toap::generate_synthetic(3, 12, 16, 5);
  const auto a = toap::make_splits(samples, 4, 2, 9), b = toap::make_splits(samples, 4, 2, 9),
             c = toap::make_splits(samples, 4, 2, 10);
  EXPECT_TRUE(torch::equal(toap::stack_pixels(a.train), toap::stack_pixels(b.train)));
  EXPECT_TRUE(torch::equal(toap::stack_pixels(a.database), toap::stack_pixels(b.database)));
  EXPECT_FALSE(torch::equal(toap::stack_pixels(a.train), toap::stack_pixels(c.train)));
}

TEST(MakeSplits, RejectsIdentityWithTooFewImages) {
  const auto samples = toap::generate_synthetic(2, 5, 16, 1);
  EXPECT_THROW(toap::make_splits(samples, 3, 2, 0), std::invalid_argument);
}

TEST(Synthetic, ShapesLabelsAndDistinctIdentities) {
  const auto samples = toap::generate_synthetic(4, 10, 64, 2);
  ASSERT_EQ(samples.size(), 40u);
  const auto images = toap::stack_pixels(samples);
  EXPECT_EQ(images.sizes(), (std::vector<int64_t>{40, 3, 64, 64}));
  EXPECT_GE(images.min().item<float>(), 0.0f);
  EXPECT_LE(images.max().item<float>(), 1.0f);
  const auto labels = toap::labels_of(samples);
  std::vector<torch::Tensor> means;
  for (int p = 0; p < 4; ++p) {
    std::vector<int64_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == p) idx.push_back(static_cast<int64_t>(i));
    }
    ASSERT_EQ(idx.size(), 10u);
    means.push_back(images.index_select(0, torch::tensor(idx)).mean(0));
  }
  for (int p = 0; p < 4; ++p) {
    for (int q = p + 1; q < 4; ++q) EXPECT_GT((means[p] - means[q]).abs().max().item<double>(), 0.1);
  }
}

TEST(Synthetic, NearestCentroidSeparatesIdentities) {
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto samples = toap::generate_synthetic(10, 20, 64, seed);
    EXPECT_DOUBLE_EQ(oracle::nearest_centroid_accuracy(toap::stack_pixels(samples), toap::labels_of(samples)), 1.0);
  }
}

TEST(Synthetic, SameSeedSamePixels) {
  const auto a = toap::generate_synthetic(3, 4, 32, 42), b = toap::generate_synthetic(3, 4, 32, 42),
             c = toap::generate_synthetic(3, 4, 32, 43);
  EXPECT_TRUE(torch::equal(toap::stack_pixels(a), toap::stack_pixels(b)));
  EXPECT_FALSE(torch::equal(toap::stack_pixels(a), toap::stack_pixels(c)));
}

}  // namespace
