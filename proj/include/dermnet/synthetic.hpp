#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dermnet/image.hpp"
#include "dermnet/image_io.hpp"
#include "dermnet/manifest.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

// Desk-scale stand-in dataset: seven classes of colored geometric shapes on a
// noisy background, with class counts as imbalanced as the caller wants.
// Images and manifest rows are a pure function of the seed.

struct SyntheticConfig {
  std::array<std::int64_t, 7> counts = {1200, 450, 300, 150, 100, 60, 40};
  int height = 100;
  int width = 100;
  std::uint64_t seed = 0;
  double missing_age_frac = 0.05;
};

namespace detail {

struct ShapeStyle {
  int r, g, b;
};

inline constexpr std::array<ShapeStyle, 7> kStyles = {{
    {220, 40, 40},    // circle
    {40, 200, 60},    // square
    {60, 80, 220},    // triangle
    {230, 220, 50},   // ring
    {200, 50, 200},   // plus
    {50, 210, 210},   // diamond
    {240, 150, 40},   // stripes
}};

inline bool inside_shape(int cls, double dx, double dy, double r) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  switch (cls) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return ax <= r && ay <= r;
    case 2: {  // apex up
      const double t = dy + r;
      return t >= 0 && t <= 2 * r && ax <= t / 2;
    }
    case 3: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r);
    }
    case 4: return (ax <= r / 3 && ay <= r) || (ay <= r / 3 && ax <= r);
    case 5: return ax + ay <= r;
    case 6: {
      if (ax > r || ay > r) return false;
      const int band = static_cast<int>(std::floor((dy + r) / (r / 2.0)));
      return band % 2 == 0;
    }
  }
  return false;
}

}  // namespace detail

/// Renders one sample. Center, size, and color jitter come from the
/// per-image rng.
inline ImageTensor synthetic_image(int cls, int height, int width, Rng& rng) {
  ImageTensor img = ImageTensor::make(height, width, PixelForm::Integer);

  const double cx = width * (0.5 + rng.uniform(-0.08, 0.08));
  const double cy = height * (0.5 + rng.uniform(-0.08, 0.08));
  const double r = std::min(height, width) * rng.uniform(0.22, 0.36);
  const auto& style = detail::kStyles[static_cast<std::size_t>(cls)];
  const int jr = static_cast<int>(rng.uniform(-20, 20));
  const int jg = static_cast<int>(rng.uniform(-20, 20));
  const int jb = static_cast<int>(rng.uniform(-20, 20));

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int rr, gg, bb;
      if (detail::inside_shape(cls, x - cx, y - cy, r)) {
        rr = style.r + jr;
        gg = style.g + jg;
        bb = style.b + jb;
      } else {
        const int noise = static_cast<int>(rng.uniform(-12, 12));
        rr = gg = bb = 60 + noise;
      }
      img.at(y, x, 0) = static_cast<float>(std::clamp(rr, 0, 255));
      img.at(y, x, 1) = static_cast<float>(std::clamp(gg, 0, 255));
      img.at(y, x, 2) = static_cast<float>(std::clamp(bb, 0, 255));
    }
  }
  return img;
}

/// Writes <image_id>.png files plus manifest.csv in the standard metadata
/// layout. Returns the manifest path.
inline std::string gen_synthetic(const std::string& dir, const SyntheticConfig& cfg) {
  std::filesystem::create_directories(dir);
  static constexpr std::array<std::string_view, 4> kDxTypes = {
      "histo", "follow_up", "consensus", "confocal"};
  static constexpr std::array<std::string_view, 5> kSites = {
      "back", "lower extremity", "trunk", "upper extremity", "abdomen"};

  std::ostringstream manifest;
  manifest << "lesion_id,image_id,dx,dx_type,age,sex,localization\n";

  int serial = 0;
  for (int cls = 0; cls < 7; ++cls) {
    for (std::int64_t i = 0; i < cfg.counts[static_cast<std::size_t>(cls)]; ++i) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(cls),
                       static_cast<std::uint64_t>(i)));
      const ImageTensor img = synthetic_image(cls, cfg.height, cfg.width, rng);

      std::ostringstream id;
      id << "SYN_" << std::setw(7) << std::setfill('0') << serial++;
      save_png(img, (std::filesystem::path(dir) / (id.str() + ".png")).string());

      const bool missing_age = rng.uniform() < cfg.missing_age_frac;
      const int age = static_cast<int>(rng.uniform(20.0, 85.0));
      manifest << "HAM_" << id.str() << ',' << id.str() << ','
               << kClassNames[static_cast<std::size_t>(cls)] << ','
               << kDxTypes[rng.below(kDxTypes.size())] << ','
               << (missing_age ? std::string() : std::to_string(age)) << ','
               << (rng.bernoulli(0.5) ? "male" : "female") << ','
               << kSites[rng.below(kSites.size())] << "\n";
    }
  }
  const std::string manifest_path =
      (std::filesystem::path(dir) / "manifest.csv").string();
  write_file(manifest_path, manifest.str());
  return manifest_path;
}

}  // namespace dermnet
