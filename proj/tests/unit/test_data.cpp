#include <gtest/gtest.h>

#include <fstream>

#include "scratch.hpp"
#include "sfde/dataset.hpp"
#include "sfde/error.hpp"
#include "sfde/image.hpp"

using namespace sfde;
namespace fs = std::filesystem;

namespace {

image::Image gradient_image(std::size_t w, std::size_t h, std::size_t channels) {
  image::Image img{w, h, channels, std::vector<float>(w * h * channels)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) = float((x * 7 + y * 13 + c * 50) % 256) / 255.f;
  return img;
}

void put(const fs::path& path, const image::Image& img) {
  fs::create_directories(path.parent_path());
  image::write_pnm(path, img);
}

void build_tree(const fs::path& root) {
  for (int cls : {3, 1}) {
    for (int i = 0; i < 2; ++i)
      put(root / "train" / std::to_string(cls) / "drone" / ("d" + std::to_string(i) + ".ppm"), gradient_image(6, 5, 3));
    put(root / "train" / std::to_string(cls) / "satellite" / "s.pgm", gradient_image(4, 4, 1));
  }
  put(root / "test" / "9" / "drone" / "q.ppm", gradient_image(3, 3, 3));
}

FormatErrorCode format_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatErrorCode::InvalidField;
}

}  // namespace

TEST(Pnm, EncodeDecodeRoundTrip) {
  for (std::size_t channels : {1u, 3u}) {
    const auto img = gradient_image(7, 4, channels);
    const auto back = image::decode_pnm(image::encode_pnm(img), "mem");
    EXPECT_EQ(back.width, 7u);
    EXPECT_EQ(back.height, 4u);
    EXPECT_EQ(back.channels, channels);
    EXPECT_EQ(back.pixels, img.pixels);
  }
}

TEST(Pnm, HeaderCommentsAreSkipped) {
  const std::string bytes = std::string("P5\n# made by hand\n2 1\n255\n") + char(0) + char(255);
  const auto img = image::decode_pnm(bytes, "mem");
  EXPECT_EQ(img.pixels, (std::vector<float>{0.f, 1.f}));
}

TEST(Pnm, TruncationNamesTheSource) {
  const auto bytes = image::encode_pnm(gradient_image(4, 4, 3));
  try {
    image::decode_pnm(bytes.substr(0, bytes.size() - 5), "view.ppm");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrorCode::Truncated);
    EXPECT_NE(std::string(e.what()).find("view.ppm"), std::string::npos);
  }
  EXPECT_EQ(format_code([] { image::decode_pnm("P3\n1 1\n255\n0 0 0", "x"); }), FormatErrorCode::MagicMismatch);
  EXPECT_EQ(format_code([] { image::decode_pnm("P6\n0 1\n255\n", "x"); }), FormatErrorCode::InvalidField);
}

TEST(Image, ResizeAndFlip) {
  const auto img = gradient_image(4, 2, 3);
  const auto same = image::resize_bilinear(img, 4, 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(same.pixels[i], img.pixels[i], 1e-6);
  const auto big = image::resize_bilinear(img, 8, 8);
  EXPECT_EQ(big.pixels.size(), 8u * 8u * 3u);
  const auto flipped = image::flip_horizontal(img);
  EXPECT_EQ(flipped.at(1, 0, 2), img.at(1, 3, 2));
  EXPECT_EQ(image::flip_horizontal(flipped).pixels, img.pixels);
  const auto gray = image::to_planar_rgb(gradient_image(2, 2, 1));
  ASSERT_EQ(gray.size(), 12u);
  EXPECT_EQ(gray[0], gray[4]);
  EXPECT_EQ(gray[3], gray[11]);
}

TEST(Ingest, CountsViewsPerSplit) {
  testutil::ScratchDir dir;
  build_tree(dir.path());
  const auto m = data::ingest(dir.path());
  const auto train = m.counts("train");
  EXPECT_EQ(train.drone, 4u);
  EXPECT_EQ(train.satellite, 2u);
  EXPECT_EQ(train.classes, 2u);
  EXPECT_EQ(m.counts("test").drone, 1u);
  EXPECT_EQ(m.counts().drone, 5u);
  EXPECT_EQ(m.select("train", std::nullopt).front().class_id, 1u);
  EXPECT_EQ(m.select("train", retrieval::View::Satellite).size(), 2u);
}

TEST(Ingest, SyntheticDatasetCounts) {
  testutil::ScratchDir dir;
  data::generate_synthetic(dir.path(), {.image_size = 32});
  const auto c = data::ingest(dir.path()).counts("train");
  EXPECT_EQ(c.drone, 16u);
  EXPECT_EQ(c.satellite, 8u);
  EXPECT_EQ(c.classes, 8u);
}

TEST(Ingest, ReportsEveryProblem) {
  testutil::ScratchDir empty;
  EXPECT_THROW(data::ingest(empty.path()), ValidationError);
  EXPECT_THROW(data::ingest(empty / "absent"), IoError);

  testutil::ScratchDir missing;
  build_tree(missing.path());
  fs::remove_all(missing / "train/3/satellite");
  try {
    data::ingest(missing.path());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }

  testutil::ScratchDir broken;
  build_tree(broken.path());
  std::ofstream(broken / "train/1/drone/d0.ppm", std::ios::binary) << "P6\n4 4\n255\nxx";
  std::ofstream(broken / "train/3/drone/d1.ppm", std::ios::binary) << "garbage";
  try {
    data::ingest(broken.path());
    FAIL();
  } catch (const FormatError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("d0.ppm"), std::string::npos) << what;
    EXPECT_NE(what.find("d1.ppm"), std::string::npos) << what;
  }
}

TEST(Manifest, RoundTripAndDuplicates) {
  testutil::ScratchDir dir;
  build_tree(dir.path());
  const auto m = data::ingest(dir.path());
  data::write_manifest(m, dir / "manifest.csv");
  EXPECT_EQ(data::read_manifest(dir / "manifest.csv").entries, m.entries);

  std::ofstream(dir / "dup.csv") << "id,path,view,class_id,split\na,x.ppm,drone,1,train\na,y.ppm,drone,1,train\n";
  EXPECT_THROW(data::read_manifest(dir / "dup.csv"), ValidationError);
  std::ofstream(dir / "header.csv") << "id,path\n";
  EXPECT_EQ(format_code([&] { data::read_manifest(dir / "header.csv"); }), FormatErrorCode::InvalidField);
}

TEST(ImageBank, BatchAppliesNormalizationAndFlips) {
  testutil::ScratchDir dir;
  build_tree(dir.path());
  const auto m = data::ingest(dir.path());
  const auto bank = data::load_images(m.select("train", std::nullopt), 8);
  ASSERT_EQ(bank.pixels.size(), 6u);
  EXPECT_EQ(bank.pixels[0].size(), 3u * 8u * 8u);
  const auto norm = data::compute_normalization(bank);
  const auto batch = data::make_batch<double>(bank, {0, 1}, norm, {false, true});
  EXPECT_EQ(batch.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_NEAR(batch.at(0, 1, 2, 3), (bank.pixels[0][64 + 2 * 8 + 3] - norm.mean[1]) / norm.std[1], 1e-6);
  EXPECT_NEAR(batch.at(1, 0, 4, 0), (bank.pixels[1][4 * 8 + 7] - norm.mean[0]) / norm.std[0], 1e-6);
  EXPECT_GE(norm.std[2], 1e-3f);
}

TEST(Synthetic, DeterministicPerSeed) {
  testutil::ScratchDir a, b, c;
  data::generate_synthetic(a.path(), {.classes = 2, .image_size = 16, .seed = 4});
  data::generate_synthetic(b.path(), {.classes = 2, .image_size = 16, .seed = 4});
  data::generate_synthetic(c.path(), {.classes = 2, .image_size = 16, .seed = 5});
  const auto rel = fs::path("train/0/drone/d0.ppm");
  EXPECT_EQ(retrieval::read_file(a / rel.string()), retrieval::read_file(b / rel.string()));
  EXPECT_NE(retrieval::read_file(a / rel.string()), retrieval::read_file(c / rel.string()));
}
