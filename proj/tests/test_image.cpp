#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dermnet/image.hpp"
#include "dermnet/image_io.hpp"
#include "dermnet/rng.hpp"

using namespace dermnet;

namespace {

ImageTensor gray(int h, int w, float v, PixelForm form = PixelForm::Integer) {
  ImageTensor img = ImageTensor::make(h, w, form, v);
  return img;
}

}  // namespace

TEST(Resize, SameSizeIsIdentity) {
  ImageTensor img = ImageTensor::make(5, 7, PixelForm::Integer);
  Rng rng(11);
  for (auto& v : img.data) v = static_cast<float>(rng.below(256));
  const ImageTensor out = resize(img, 5, 7);
  EXPECT_EQ(out.data, img.data);
}

TEST(Resize, ConstantStaysConstant) {
  const ImageTensor img = gray(2, 2, 77.0f);
  for (const auto [h, w] : {std::pair{1, 1}, {3, 5}, {10, 4}, {2, 2}}) {
    const ImageTensor out = resize(img, h, w);
    EXPECT_EQ(out.height, h);
    EXPECT_EQ(out.width, w);
    for (const float v : out.data) EXPECT_EQ(v, 77.0f);
  }
}

TEST(Resize, HandEvaluatedBilinear) {
  // 1x2 image [0, 255] -> 1x3. Source x for output i is (i+0.5)*(2/3)-0.5:
  //   i=0: -1/6 -> clamps to 0          -> 0
  //   i=1:  1/2 -> lerp(0,255,0.5)=127.5 -> rounds half away to 128
  //   i=2:  7/6 -> clamps to 1          -> 255
  ImageTensor img = ImageTensor::make(1, 2, PixelForm::Integer);
  for (int c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0.0f;
    img.at(0, 1, c) = 255.0f;
  }
  const ImageTensor out = resize(img, 1, 3);
  EXPECT_EQ(out.at(0, 0, 0), 0.0f);
  EXPECT_EQ(out.at(0, 1, 0), 128.0f);
  EXPECT_EQ(out.at(0, 2, 0), 255.0f);
}

TEST(Resize, OutputShapeProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int ih = 1 + static_cast<int>(rng.below(8));
    const int iw = 1 + static_cast<int>(rng.below(8));
    const int oh = 1 + static_cast<int>(rng.below(12));
    const int ow = 1 + static_cast<int>(rng.below(12));
    ImageTensor img = ImageTensor::make(ih, iw, PixelForm::Integer);
    for (auto& v : img.data) v = static_cast<float>(rng.below(256));
    const ImageTensor out = resize(img, oh, ow);
    EXPECT_EQ(out.height, oh);
    EXPECT_EQ(out.width, ow);
    EXPECT_EQ(out.data.size(), static_cast<std::size_t>(oh) * ow * 3);
  }
}

TEST(Resize, EmptyImageRaises) {
  ImageTensor img;
  try {
    resize(img, 2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::EmptyImage);
  }
}

TEST(Normalize, RangeEndpointsAndSample) {
  ImageTensor img = ImageTensor::make(1, 3, PixelForm::Integer);
  for (int c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0.0f;
    img.at(0, 1, c) = 255.0f;
    img.at(0, 2, c) = 51.0f;
  }
  const ImageTensor out = normalize(img);
  EXPECT_EQ(out.form, PixelForm::Normalized);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(out.at(0, 1, 0), 1.0f);
  EXPECT_FLOAT_EQ(out.at(0, 2, 0), 0.2f);
}

TEST(Normalize, AllZeroImage) {
  const ImageTensor out = normalize(gray(3, 3, 0.0f));
  for (const float v : out.data) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, AlreadyNormalizedRaises) {
  const ImageTensor img = gray(2, 2, 0.5f, PixelForm::Normalized);
  try {
    normalize(img);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::AlreadyNormalized);
  }
}

TEST(Normalize, RoundTripOnExactMultiples) {
  // Values that are exact multiples of 1/255: normalize then re-scale+round
  // reproduces the original bytes.
  ImageTensor img = ImageTensor::make(4, 4, PixelForm::Integer);
  Rng rng(3);
  for (auto& v : img.data) v = static_cast<float>(rng.below(256));
  const ImageTensor norm = normalize(img);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float back = std::round(norm.data[i] * 255.0f);
    EXPECT_EQ(back, img.data[i]);
  }
}

TEST(LoadImage, PngRoundTripExactBytes) {
  const auto dir = std::filesystem::temp_directory_path() / "dermnet_img_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "tiny.png").string();

  ImageTensor img = ImageTensor::make(2, 2, PixelForm::Integer);
  const float px[2][2][3] = {{{10, 20, 30}, {40, 50, 60}},
                             {{70, 80, 90}, {100, 110, 255}}};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = px[y][x][c];

  save_png(img, path);
  const ImageTensor back = load_image(path);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.width, 2);
  EXPECT_EQ(back.form, PixelForm::Integer);
  EXPECT_EQ(back.data, img.data);
  std::filesystem::remove(path);
}

TEST(LoadImage, MissingFile) {
  try {
    load_image("/nonexistent/nowhere.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::MissingFile);
  }
}

TEST(LoadImage, TruncatedFileIsDecodeError) {
  const auto dir = std::filesystem::temp_directory_path() / "dermnet_img_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "broken.png").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "\x89PNG\r\n this is not a real png";
  }
  try {
    load_image(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::DecodeError);
  }
  std::filesystem::remove(path);
}
