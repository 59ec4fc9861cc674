#include <gtest/gtest.h>

#include <fstream>
#include <vector>

#include "sfmk/image_io.hpp"
#include "sfmk/random.hpp"
#include "test_support.hpp"

namespace {

using sfmk::IoError;
using sfmk::real;
using sfmk::Rng;
using sfmk::Shape;
using sfmk::Tensor;
using sfmk_test::TempDir;

// Values on the k/255 grid survive the 8-bit quantizer exactly.
Tensor grid255(Shape s, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.data()) v = static_cast<real>(rng.index(256)) / 255;
  return t;
}

TEST(Png, RgbRoundTrip) {
  TempDir dir;
  Tensor img = grid255({3, 11, 7}, 41);
  sfmk::write_png(dir.file("a.png"), img);
  Tensor back = sfmk::read_png(dir.file("a.png"));
  ASSERT_EQ(back.shape(), img.shape());
  for (size_t i = 0; i < img.data().size(); ++i)
    ASSERT_NEAR(back.data()[i], img.data()[i], 1e-12) << "pixel " << i;
}

TEST(Png, GrayRoundTrip) {
  TempDir dir;
  Tensor img = grid255({1, 5, 9}, 42);
  sfmk::write_png(dir.file("g.png"), img);
  Tensor back = sfmk::read_png(dir.file("g.png"));
  ASSERT_EQ(back.shape(), img.shape());
  for (size_t i = 0; i < img.data().size(); ++i)
    ASSERT_NEAR(back.data()[i], img.data()[i], 1e-12);
}

TEST(Png, WriteClampsOutOfRange) {
  TempDir dir;
  Tensor img = Tensor::zeros({1, 1, 2});
  img.data()[0] = real(-0.5);
  img.data()[1] = real(1.5);
  sfmk::write_png(dir.file("c.png"), img);
  Tensor back = sfmk::read_png(dir.file("c.png"));
  EXPECT_DOUBLE_EQ(back.data()[0], 0);
  EXPECT_DOUBLE_EQ(back.data()[1], 1);
}

TEST(Png, SixteenBitReadScalesBy65535) {
  TempDir dir;
  // Hand-build a 2x2 16-bit grayscale file through the chunk writer.
  std::vector<unsigned char> px;
  const uint16_t samples[4] = {0, 1, 256, 65535};
  for (uint16_t s : samples) {
    px.push_back(static_cast<unsigned char>(s >> 8));
    px.push_back(static_cast<unsigned char>(s & 0xff));
  }
  sfmk::detail::write_png_bytes(dir.file("d.png"), 2, 2, 1, 16, px);
  Tensor back = sfmk::read_png(dir.file("d.png"));
  ASSERT_EQ(back.shape(), (Shape{1, 2, 2}));
  for (int i = 0; i < 4; ++i)
    EXPECT_NEAR(back.data()[i], samples[i] / real(65535), 1e-12);
}

TEST(DepthPng, RoundTripQuarterMillimeterGrid) {
  TempDir dir;
  // Stored value is round(depth * 256): depths on the k/256 grid are exact.
  Rng rng(7);
  Tensor depth = Tensor::zeros({6, 5});
  for (auto& v : depth.data()) v = static_cast<real>(rng.index(30000)) / 256;
  sfmk::write_depth_png(dir.file("d.png"), depth);
  Tensor back = sfmk::read_depth_png(dir.file("d.png"));
  ASSERT_EQ(back.shape(), depth.shape());
  for (size_t i = 0; i < depth.data().size(); ++i)
    ASSERT_NEAR(back.data()[i], depth.data()[i], 1e-12);
}

TEST(DepthPng, ZeroMeansNoMeasurementAndNegativesClampToZero) {
  TempDir dir;
  Tensor depth = Tensor::zeros({1, 3});
  depth.data()[0] = 0;
  depth.data()[1] = real(-2);
  depth.data()[2] = real(1e6);  // saturates the 16-bit store
  sfmk::write_depth_png(dir.file("d.png"), depth);
  Tensor back = sfmk::read_depth_png(dir.file("d.png"));
  EXPECT_DOUBLE_EQ(back.data()[0], 0);
  EXPECT_DOUBLE_EQ(back.data()[1], 0);
  EXPECT_DOUBLE_EQ(back.data()[2], real(65535) / 256);
}

TEST(DepthPng, RejectsEightBitFile) {
  TempDir dir;
  sfmk::write_png(dir.file("rgb.png"), grid255({3, 4, 4}, 9));
  EXPECT_THROW(sfmk::read_depth_png(dir.file("rgb.png")), IoError);
}

TEST(Ppm, RoundTrip) {
  TempDir dir;
  Tensor img = grid255({3, 6, 8}, 43);
  sfmk::write_ppm(dir.file("a.ppm"), img);
  Tensor back = sfmk::read_ppm(dir.file("a.ppm"));
  ASSERT_EQ(back.shape(), img.shape());
  for (size_t i = 0; i < img.data().size(); ++i)
    ASSERT_NEAR(back.data()[i], img.data()[i], 1e-12);
}

TEST(Ppm, HeaderCommentsSkipped) {
  TempDir dir;
  std::ofstream os(dir.file("c.ppm"), std::ios::binary);
  os << "P6\n# width height\n2 1\n# maxval\n255\n";
  const unsigned char px[6] = {255, 0, 0, 0, 255, 0};
  os.write(reinterpret_cast<const char*>(px), 6);
  os.close();
  Tensor img = sfmk::read_ppm(dir.file("c.ppm"));
  ASSERT_EQ(img.shape(), (Shape{3, 1, 2}));
  EXPECT_DOUBLE_EQ(img.data()[0], 1);  // R of pixel 0
  EXPECT_DOUBLE_EQ(img.data()[1], 0);  // R of pixel 1
  EXPECT_DOUBLE_EQ(img.data()[3], 1);  // G of pixel 1
}

TEST(Ppm, RejectsWrongMagic) {
  TempDir dir;
  std::ofstream os(dir.file("bad.ppm"), std::ios::binary);
  os << "P3\n2 2\n255\n0 0 0";
  os.close();
  EXPECT_THROW(sfmk::read_ppm(dir.file("bad.ppm")), IoError);
}

TEST(Ppm, RejectsTruncatedPixels) {
  TempDir dir;
  std::ofstream os(dir.file("t.ppm"), std::ios::binary);
  os << "P6\n4 4\n255\nxyz";
  os.close();
  EXPECT_THROW(sfmk::read_ppm(dir.file("t.ppm")), IoError);
}

TEST(Png, RejectsGarbageAndTruncation) {
  TempDir dir;
  {
    std::ofstream os(dir.file("junk.png"), std::ios::binary);
    os << "definitely not a png";
  }
  EXPECT_THROW(sfmk::read_png(dir.file("junk.png")), IoError);

  sfmk::write_png(dir.file("ok.png"), grid255({3, 8, 8}, 3));
  std::ifstream is(dir.file("ok.png"), std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
  is.close();
  {
    std::ofstream os(dir.file("cut.png"), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(sfmk::read_png(dir.file("cut.png")), IoError);
}

TEST(Png, MissingFileThrows) {
  EXPECT_THROW(sfmk::read_png("/nonexistent/nowhere.png"), IoError);
}

}  // namespace
