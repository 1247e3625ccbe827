#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dermnet/error.hpp"

namespace dermnet {

enum class PixelForm { Integer, Normalized };

/// H x W x 3 raster, row-major, RGB. Integer form holds whole values in
/// [0,255]; normalized form holds reals in [0,1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  PixelForm form = PixelForm::Integer;
  std::vector<float> data;  // height * width * 3

  static ImageTensor make(int h, int w, PixelForm f = PixelForm::Integer,
                          float fill = 0.0f) {
    ImageTensor img;
    img.height = h;
    img.width = w;
    img.form = f;
    img.data.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3,
                    fill);
    return img;
  }

  bool empty() const { return height <= 0 || width <= 0 || data.empty(); }

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }
};

namespace detail {

inline float round_half_away(double v) {
  return static_cast<float>(v >= 0.0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
}

/// Bilinear sample at real coordinates, clamping to the nearest edge pixel.
/// Two-stage lerp, so constant inputs reproduce exactly.
inline double bilinear_at(const ImageTensor& img, double sx, double sy, int c) {
  const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = std::clamp(sx - x0, 0.0, 1.0);
  const double fy = std::clamp(sy - y0, 0.0, 1.0);

  const double v00 = img.at(y0, x0, c);
  const double v01 = img.at(y0, x1, c);
  const double v10 = img.at(y1, x0, c);
  const double v11 = img.at(y1, x1, c);
  const double top = v00 + fx * (v01 - v00);
  const double bot = v10 + fx * (v11 - v10);
  return top + fy * (bot - top);
}

}  // namespace detail

/// Bilinear resize with pixel-center alignment:
/// source coordinate = (i + 0.5) * scale - 0.5, clamped to the valid range.
/// Integer-form outputs are rounded half away from zero.
inline ImageTensor resize(const ImageTensor& img, int out_h, int out_w) {
  if (img.empty()) raise(Err::EmptyImage, "resize of empty image");
  if (out_h < 1 || out_w < 1) raise(Err::BadConfig, "resize target must be >= 1x1");

  ImageTensor out = ImageTensor::make(out_h, out_w, img.form);
  const double scale_y = static_cast<double>(img.height) / out_h;
  const double scale_x = static_cast<double>(img.width) / out_w;
  const bool integer = img.form == PixelForm::Integer;

  for (int y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * scale_y - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * scale_x - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      for (int c = 0; c < 3; ++c) {
        const double v = detail::bilinear_at(img, sx, sy, c);
        out.at(y, x, c) = integer ? detail::round_half_away(v)
                                  : static_cast<float>(v);
      }
    }
  }
  return out;
}

/// Integer form -> normalized form, dividing every value by 255.
inline ImageTensor normalize(const ImageTensor& img) {
  if (img.form == PixelForm::Normalized)
    raise(Err::AlreadyNormalized, "image is already in normalized form");
  ImageTensor out = img;
  out.form = PixelForm::Normalized;
  for (float& v : out.data) v /= 255.0f;
  return out;
}

}  // namespace dermnet
