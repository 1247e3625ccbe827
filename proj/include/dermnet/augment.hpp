#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include "dermnet/error.hpp"
#include "dermnet/image.hpp"
#include "dermnet/manifest.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

enum class FillPolicy { NearestEdge };

struct AugmentConfig {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double max_rotation_deg = 20.0;
  double max_shear_deg = 10.0;
  double max_translate_frac = 0.10;
  FillPolicy fill = FillPolicy::NearestEdge;
  std::uint64_t seed = 0;

  void validate() const {
    if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1)
      raise(Err::BadConfig, "flip probabilities must be in [0,1]");
    if (max_rotation_deg < 0 || max_shear_deg < 0)
      raise(Err::BadConfig, "rotation/shear ranges must be >= 0");
    if (max_translate_frac < 0 || max_translate_frac >= 1)
      raise(Err::BadConfig, "max_translate_frac must be in [0,1)");
  }
};

/// 2x3 matrix mapping output pixel coordinates (x, y, 1), taken about the
/// image center, to source coordinates.
struct AffineTransform {
  double m[2][3] = {{1, 0, 0}, {0, 1, 0}};

  static AffineTransform identity() { return {}; }

  double det() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }

  /// this ∘ other: apply `other` to the coordinate first.
  AffineTransform compose(const AffineTransform& other) const {
    AffineTransform r;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j)
        r.m[i][j] = m[i][0] * other.m[0][j] + m[i][1] * other.m[1][j];
      r.m[i][2] = m[i][0] * other.m[0][2] + m[i][1] * other.m[1][2] + m[i][2];
    }
    return r;
  }

  AffineTransform inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-12) raise(Err::SingularTransform, "non-invertible transform");
    AffineTransform r;
    r.m[0][0] = m[1][1] / d;
    r.m[0][1] = -m[0][1] / d;
    r.m[1][0] = -m[1][0] / d;
    r.m[1][1] = m[0][0] / d;
    r.m[0][2] = -(r.m[0][0] * m[0][2] + r.m[0][1] * m[1][2]);
    r.m[1][2] = -(r.m[1][0] * m[0][2] + r.m[1][1] * m[1][2]);
    return r;
  }

  static AffineTransform rotation(double deg) {
    const double rad = deg * std::numbers::pi / 180.0;
    AffineTransform t;
    t.m[0][0] = std::cos(rad);
    t.m[0][1] = -std::sin(rad);
    t.m[1][0] = std::sin(rad);
    t.m[1][1] = std::cos(rad);
    return t;
  }

  /// Shear along the x axis by the given angle.
  static AffineTransform shear_x(double deg) {
    AffineTransform t;
    t.m[0][1] = std::tan(deg * std::numbers::pi / 180.0);
    return t;
  }

  static AffineTransform translation(double tx, double ty) {
    AffineTransform t;
    t.m[0][2] = tx;
    t.m[1][2] = ty;
    return t;
  }
};

/// One drawn augmentation: the matrix plus the raw parameters (logged by the
/// preview command) and the flip decisions.
struct SampledTransform {
  AffineTransform transform;
  bool hflip = false;
  bool vflip = false;
  double rotation_deg = 0.0;
  double shear_deg = 0.0;
  double translate_x = 0.0;  // pixels
  double translate_y = 0.0;
};

/// Draws one transform. PRNG consumption order is fixed:
/// rotation, shear, tx, ty, hflip, vflip. Matrix = translate ∘ rotate ∘ shear.
inline SampledTransform sample_transform(const AugmentConfig& cfg, int width,
                                         int height, Rng& rng) {
  cfg.validate();
  SampledTransform s;
  s.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  s.shear_deg = rng.uniform(-cfg.max_shear_deg, cfg.max_shear_deg);
  s.translate_x = rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac) * width;
  s.translate_y = rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac) * height;
  s.hflip = rng.bernoulli(cfg.hflip_prob);
  s.vflip = rng.bernoulli(cfg.vflip_prob);

  s.transform = AffineTransform::translation(s.translate_x, s.translate_y)
                    .compose(AffineTransform::rotation(s.rotation_deg))
                    .compose(AffineTransform::shear_x(s.shear_deg));
  return s;
}

inline ImageTensor hflip_image(const ImageTensor& img) {
  ImageTensor out = ImageTensor::make(img.height, img.width, img.form);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

inline ImageTensor vflip_image(const ImageTensor& img) {
  ImageTensor out = ImageTensor::make(img.height, img.width, img.form);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
  return out;
}

/// Flips first (lossless index reversal), then inverse-warps: each output
/// pixel samples the source at t·(x,y,1) about the image center, bilinear,
/// nearest-edge fill. Output shape = input shape.
inline ImageTensor apply_transform(const ImageTensor& img, const AffineTransform& t,
                                   bool hflip = false, bool vflip = false) {
  if (img.empty()) raise(Err::EmptyImage, "transform of empty image");
  if (std::abs(t.det()) < 1e-12)
    raise(Err::SingularTransform, "transform has singular linear part");

  const ImageTensor* src = &img;
  ImageTensor flipped;
  if (hflip || vflip) {
    flipped = hflip ? hflip_image(img) : img;
    if (vflip) flipped = vflip_image(flipped);
    src = &flipped;
  }

  const bool is_identity = !hflip && !vflip &&
      t.m[0][0] == 1.0 && t.m[0][1] == 0.0 && t.m[0][2] == 0.0 &&
      t.m[1][0] == 0.0 && t.m[1][1] == 1.0 && t.m[1][2] == 0.0;
  if (is_identity) return img;

  ImageTensor out = ImageTensor::make(img.height, img.width, img.form);
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  const bool integer = img.form == PixelForm::Integer;

  for (int y = 0; y < img.height; ++y) {
    const double dy = y - cy;
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx;
      const double sx = cx + t.m[0][0] * dx + t.m[0][1] * dy + t.m[0][2];
      const double sy = cy + t.m[1][0] * dx + t.m[1][1] * dy + t.m[1][2];
      // nearest-edge fill = clamped bilinear sample
      for (int c = 0; c < 3; ++c) {
        const double v = detail::bilinear_at(*src, sx, sy, c);
        out.at(y, x, c) = integer ? detail::round_half_away(v)
                                  : static_cast<float>(v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rebalancing
// ---------------------------------------------------------------------------

/// Per-class cap on the training set: classes above `cap` are subsampled to
/// exactly `cap` records (seeded, without replacement); the rest pass through.
/// Kept records stay in input order.
inline std::vector<SampleRecord> cap_classes(const std::vector<SampleRecord>& records,
                                             std::int64_t cap, std::uint64_t seed) {
  if (cap < 1) raise(Err::BadConfig, "cap must be >= 1");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int code = records[i].label_code >= 0 ? records[i].label_code
                                                : class_code(records[i].dx);
    if (code < 0) raise(Err::UnknownClass, "unknown dx '" + records[i].dx + "'");
    by_class[code].push_back(i);
  }

  std::vector<char> keep(records.size(), 1);
  for (const auto& [code, idx] : by_class) {
    if (static_cast<std::int64_t>(idx.size()) <= cap) continue;
    std::vector<std::size_t> order = idx;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(code)));
    rng.shuffle(order);
    for (std::size_t i = static_cast<std::size_t>(cap); i < order.size(); ++i)
      keep[order[i]] = 0;
  }

  std::vector<SampleRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) out.push_back(records[i]);
  return out;
}

/// Balanced class weights: w_c = N / (K * n_c). The weighted sample total
/// then equals N, and the largest class gets the smallest weight.
inline std::vector<double> class_weights(const std::vector<std::int64_t>& counts) {
  const auto k = static_cast<double>(counts.size());
  std::int64_t total = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 1)
      raise(Err::EmptyClass, "class " + std::to_string(c) + " has no samples");
    total += counts[c];
  }
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    w[c] = static_cast<double>(total) / (k * static_cast<double>(counts[c]));
  return w;
}

// ---------------------------------------------------------------------------
// Online augmentation stream
// ---------------------------------------------------------------------------

/// One augmented sample per training record per epoch. The per-sample PRNG
/// seed is mix_seed(cfg.seed, epoch, record index), so any evaluation order
/// (or worker count) reproduces the same stream.
class AugmentedStream {
 public:
  AugmentedStream(const std::vector<ImageTensor>& images,
                  const std::vector<int>& labels, AugmentConfig cfg, int epoch)
      : images_(images), labels_(labels), cfg_(cfg), epoch_(epoch) {
    cfg_.validate();
    if (images.size() != labels.size())
      raise(Err::ShapeMismatch, "images/labels length mismatch");
  }

  std::size_t size() const { return images_.size(); }
  int label(std::size_t i) const { return labels_[i]; }

  SampledTransform transform_for(std::size_t i) const {
    const ImageTensor& img = images_[i];
    Rng rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch_),
                     static_cast<std::uint64_t>(i)));
    return sample_transform(cfg_, img.width, img.height, rng);
  }

  ImageTensor sample(std::size_t i) const {
    const SampledTransform s = transform_for(i);
    return apply_transform(images_[i], s.transform, s.hflip, s.vflip);
  }

 private:
  const std::vector<ImageTensor>& images_;
  const std::vector<int>& labels_;
  AugmentConfig cfg_;
  int epoch_;
};

}  // namespace dermnet
