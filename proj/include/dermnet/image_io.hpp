#pragma once

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dermnet/error.hpp"
#include "dermnet/image.hpp"

namespace dermnet {

/// Decodes an 8-bit RGB raster (JPEG or PNG) into integer form.
inline ImageTensor load_image(const std::string& path) {
  if (!std::filesystem::exists(path))
    raise(Err::MissingFile, "no such image: " + path, path);
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty() || bgr.channels() != 3)
    raise(Err::DecodeError, "cannot decode " + path, path);

  ImageTensor img = ImageTensor::make(bgr.rows, bgr.cols, PixelForm::Integer);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2];  // BGR -> RGB
      img.at(y, x, 1) = row[x][1];
      img.at(y, x, 2) = row[x][0];
    }
  }
  return img;
}

/// Writes an integer-form image as PNG (lossless).
inline void save_png(const ImageTensor& img, const std::string& path) {
  if (img.empty()) raise(Err::EmptyImage, "save of empty image");
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      auto to_byte = [&](int c) {
        float v = img.at(y, x, c);
        if (img.form == PixelForm::Normalized) v *= 255.0f;
        return static_cast<unsigned char>(
            std::clamp(static_cast<int>(std::lround(v)), 0, 255));
      };
      row[x] = cv::Vec3b(to_byte(2), to_byte(1), to_byte(0));
    }
  }
  if (!cv::imwrite(path, bgr))
    raise(Err::IoError, "cannot write image " + path, path);
}

}  // namespace dermnet
