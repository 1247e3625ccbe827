#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dermnet/error.hpp"
#include "dermnet/ops.hpp"

namespace dermnet {

enum class LayerKind {
  Input,
  Conv,
  BatchNorm,
  Relu,
  MaxPool,
  AvgPool,
  Concat,
  ResidualAdd,
  Flatten,
  Dropout,
  FullyConnected,
  Softmax,
};

inline constexpr std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input:          return "input";
    case LayerKind::Conv:           return "convolution";
    case LayerKind::BatchNorm:      return "batch-norm";
    case LayerKind::Relu:           return "activation";
    case LayerKind::MaxPool:        return "max-pool";
    case LayerKind::AvgPool:        return "average-pool";
    case LayerKind::Concat:         return "concat";
    case LayerKind::ResidualAdd:    return "residual-add";
    case LayerKind::Flatten:        return "flatten";
    case LayerKind::Dropout:        return "dropout";
    case LayerKind::FullyConnected: return "fully-connected";
    case LayerKind::Softmax:        return "softmax";
  }
  return "?";
}

struct NetworkConfig {
  int input_hw = 299;
  int num_classes = 7;
  std::array<int, 3> block_counts = {10, 20, 10};  // A, B, C repetitions
  double residual_scale = 0.1;
  std::vector<int> head_widths = {64, 64};
  /// Stem width knob: every branch width scales by stem_filters/32. The
  /// default 32 reproduces the reference filter counts; 8 gives the toy net.
  int stem_filters = 32;
  bool global_avg_pool = false;
  double dropout = 0.0;
  double bn_momentum = 0.99;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_hw < 1) raise(Err::BadConfig, "input_hw must be >= 1");
    if (num_classes < 2) raise(Err::BadConfig, "num_classes must be >= 2");
    for (int b : block_counts)
      if (b < 1) raise(Err::BadConfig, "block_counts must be >= 1");
    if (!(residual_scale > 0.0 && residual_scale <= 1.0))
      raise(Err::BadConfig, "residual_scale must be in (0,1]");
    if (stem_filters < 1) raise(Err::BadConfig, "stem_filters must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      raise(Err::BadConfig, "dropout must be in [0,1)");
  }
};

/// Output shape of a layer: channels x height x width. Flat layers use
/// c = dimension, h = w = 1.
struct Shape3 {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape3&) const = default;
  std::int64_t numel() const {
    return static_cast<std::int64_t>(c) * h * w;
  }
};

struct LayerDef {
  std::string name;
  LayerKind kind = LayerKind::Input;
  std::vector<int> inputs;
  // window ops
  int filters = 0;
  int kernel_h = 0, kernel_w = 0, stride = 1;
  Padding padding = Padding::Valid;
  bool use_bias = false;
  // fully-connected
  int units = 0;
  // residual-add
  double res_scale = 1.0;
  // batch-norm: index of the convolution this layer normalizes
  int bn_owner = -1;
  // dropout
  double rate = 0.0;

  Shape3 out;
  bool trainable = true;

  bool parameterized() const {
    return kind == LayerKind::Conv || kind == LayerKind::FullyConnected;
  }
};

namespace detail {

class GraphBuilder {
 public:
  std::vector<LayerDef> layers;

  int input(int c, int h, int w) {
    LayerDef d;
    d.name = "input";
    d.kind = LayerKind::Input;
    d.out = {c, h, w};
    return push(std::move(d));
  }

  int conv(const std::string& name, int in, int filters, int kh, int kw,
           int stride, Padding pad, bool bias) {
    const Shape3 is = layers[static_cast<std::size_t>(in)].out;
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::Conv;
    d.inputs = {in};
    d.filters = filters;
    d.kernel_h = kh;
    d.kernel_w = kw;
    d.stride = stride;
    d.padding = pad;
    d.use_bias = bias;
    d.out = {filters, window_out_dim(is.h, kh, stride, pad),
             window_out_dim(is.w, kw, stride, pad)};
    check_spatial(name, d.out);
    return push(std::move(d));
  }

  int bn(const std::string& name, int in, int owner) {
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::BatchNorm;
    d.inputs = {in};
    d.bn_owner = owner;
    d.out = layers[static_cast<std::size_t>(in)].out;
    return push(std::move(d));
  }

  int relu(const std::string& name, int in) {
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::Relu;
    d.inputs = {in};
    d.out = layers[static_cast<std::size_t>(in)].out;
    return push(std::move(d));
  }

  /// conv (no bias) + batch norm + relu, the standard composite.
  int cbr(const std::string& prefix, int in, int filters, int kh, int kw,
          int stride, Padding pad) {
    const int c = conv(prefix, in, filters, kh, kw, stride, pad, false);
    const int b = bn(prefix + "/bn", c, c);
    return relu(prefix + "/relu", b);
  }

  int pool(const std::string& name, LayerKind kind, int in, int k, int stride,
           Padding pad) {
    const Shape3 is = layers[static_cast<std::size_t>(in)].out;
    LayerDef d;
    d.name = name;
    d.kind = kind;
    d.inputs = {in};
    d.kernel_h = k;
    d.kernel_w = k;
    d.stride = stride;
    d.padding = pad;
    d.out = {is.c, window_out_dim(is.h, k, stride, pad),
             window_out_dim(is.w, k, stride, pad)};
    check_spatial(name, d.out);
    return push(std::move(d));
  }

  int concat(const std::string& name, const std::vector<int>& ins) {
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::Concat;
    d.inputs = ins;
    const Shape3 first = layers[static_cast<std::size_t>(ins[0])].out;
    d.out = {0, first.h, first.w};
    for (int i : ins) {
      const Shape3 s = layers[static_cast<std::size_t>(i)].out;
      if (s.h != first.h || s.w != first.w)
        raise(Err::ShapeMismatch, name + ": concat operands disagree on spatial dims");
      d.out.c += s.c;
    }
    return push(std::move(d));
  }

  int residual_add(const std::string& name, int shortcut, int branch, double scale) {
    const Shape3 a = layers[static_cast<std::size_t>(shortcut)].out;
    const Shape3 b = layers[static_cast<std::size_t>(branch)].out;
    if (!(a == b))
      raise(Err::ShapeMismatch, name + ": residual operands differ in shape");
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::ResidualAdd;
    d.inputs = {shortcut, branch};
    d.res_scale = scale;
    d.out = a;
    return push(std::move(d));
  }

  int flatten(const std::string& name, int in) {
    const Shape3 is = layers[static_cast<std::size_t>(in)].out;
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::Flatten;
    d.inputs = {in};
    d.out = {static_cast<int>(is.numel()), 1, 1};
    return push(std::move(d));
  }

  int dropout(const std::string& name, int in, double rate) {
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::Dropout;
    d.inputs = {in};
    d.rate = rate;
    d.out = layers[static_cast<std::size_t>(in)].out;
    return push(std::move(d));
  }

  int fc(const std::string& name, int in, int units) {
    const Shape3 is = layers[static_cast<std::size_t>(in)].out;
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::FullyConnected;
    d.inputs = {in};
    d.units = units;
    d.out = {units, 1, 1};
    if (is.h != 1 || is.w != 1)
      raise(Err::ShapeMismatch, name + ": fully-connected input must be flat");
    return push(std::move(d));
  }

  int softmax(const std::string& name, int in) {
    LayerDef d;
    d.name = name;
    d.kind = LayerKind::Softmax;
    d.inputs = {in};
    d.out = layers[static_cast<std::size_t>(in)].out;
    return push(std::move(d));
  }

  int channels(int idx) const { return layers[static_cast<std::size_t>(idx)].out.c; }

 private:
  int push(LayerDef d) {
    layers.push_back(std::move(d));
    return static_cast<int>(layers.size()) - 1;
  }

  static void check_spatial(const std::string& stage, const Shape3& s) {
    if (s.h < 1 || s.w < 1)
      raise(Err::ShapeUnderflow, "input too small at stage '" + stage + "'");
  }
};

}  // namespace detail

/// Builds the layer graph: stem -> A-blocks -> Reduction-A -> B-blocks ->
/// Reduction-B -> C-blocks -> head. Branch widths follow the reference
/// Inception-ResNet-v2 filter counts, scaled by stem_filters/32; the 1x1
/// expansion convolution of each residual block always emits exactly the
/// block's input channels.
inline std::vector<LayerDef> build_layers(const NetworkConfig& cfg) {
  cfg.validate();
  detail::GraphBuilder g;
  const double f = cfg.stem_filters / 32.0;
  auto w = [f](int base) {
    return std::max(1, static_cast<int>(std::llround(base * f)));
  };
  const Padding S = Padding::Same;
  const Padding V = Padding::Valid;

  auto pad2 = [](int i) {
    std::ostringstream os;
    os << std::setw(2) << std::setfill('0') << i;
    return os.str();
  };

  const int in = g.input(3, cfg.input_hw, cfg.input_hw);

  // stem
  int x = g.cbr("stem/conv1", in, w(32), 3, 3, 2, V);
  x = g.cbr("stem/conv2", x, w(32), 3, 3, 1, V);
  x = g.cbr("stem/conv3", x, w(64), 3, 3, 1, S);
  x = g.pool("stem/pool1", LayerKind::MaxPool, x, 3, 2, V);
  x = g.cbr("stem/conv4", x, w(80), 1, 1, 1, V);
  x = g.cbr("stem/conv5", x, w(192), 3, 3, 1, V);
  x = g.pool("stem/pool2", LayerKind::MaxPool, x, 3, 2, V);

  // stem mixed block: parallel conv towers + an average-pool tower
  {
    const int b0 = g.cbr("stem/mix/b0_1x1", x, w(96), 1, 1, 1, S);
    int b1 = g.cbr("stem/mix/b1_1x1", x, w(48), 1, 1, 1, S);
    b1 = g.cbr("stem/mix/b1_5x5", b1, w(64), 5, 5, 1, S);
    int b2 = g.cbr("stem/mix/b2_1x1", x, w(64), 1, 1, 1, S);
    b2 = g.cbr("stem/mix/b2_3x3a", b2, w(96), 3, 3, 1, S);
    b2 = g.cbr("stem/mix/b2_3x3b", b2, w(96), 3, 3, 1, S);
    int b3 = g.pool("stem/mix/pool", LayerKind::AvgPool, x, 3, 1, S);
    b3 = g.cbr("stem/mix/b3_1x1", b3, w(64), 1, 1, 1, S);
    x = g.concat("stem/mix/concat", {b0, b1, b2, b3});
  }

  // Inception-ResNet-A x block_counts[0]
  for (int i = 1; i <= cfg.block_counts[0]; ++i) {
    const std::string p = "ira" + pad2(i);
    const int b0 = g.cbr(p + "/b0_1x1", x, w(32), 1, 1, 1, S);
    int b1 = g.cbr(p + "/b1_1x1", x, w(32), 1, 1, 1, S);
    b1 = g.cbr(p + "/b1_3x3", b1, w(32), 3, 3, 1, S);
    int b2 = g.cbr(p + "/b2_1x1", x, w(32), 1, 1, 1, S);
    b2 = g.cbr(p + "/b2_3x3a", b2, w(48), 3, 3, 1, S);
    b2 = g.cbr(p + "/b2_3x3b", b2, w(64), 3, 3, 1, S);
    const int cat = g.concat(p + "/concat", {b0, b1, b2});
    const int up = g.conv(p + "/expand", cat, g.channels(x), 1, 1, 1, S, true);
    const int add = g.residual_add(p + "/add", x, up, cfg.residual_scale);
    x = g.relu(p + "/relu", add);
  }

  // Reduction-A (max-pool branch + strided convolutions)
  {
    const int p0 = g.pool("reda/pool", LayerKind::MaxPool, x, 3, 2, V);
    const int b1 = g.cbr("reda/b1_3x3", x, w(384), 3, 3, 2, V);
    int b2 = g.cbr("reda/b2_1x1", x, w(256), 1, 1, 1, S);
    b2 = g.cbr("reda/b2_3x3", b2, w(256), 3, 3, 1, S);
    b2 = g.cbr("reda/b2_3x3s2", b2, w(384), 3, 3, 2, V);
    x = g.concat("reda/concat", {p0, b1, b2});
  }

  // Inception-ResNet-B x block_counts[1]
  for (int i = 1; i <= cfg.block_counts[1]; ++i) {
    const std::string p = "irb" + pad2(i);
    const int b0 = g.cbr(p + "/b0_1x1", x, w(192), 1, 1, 1, S);
    int b1 = g.cbr(p + "/b1_1x1", x, w(128), 1, 1, 1, S);
    b1 = g.cbr(p + "/b1_1x7", b1, w(160), 1, 7, 1, S);
    b1 = g.cbr(p + "/b1_7x1", b1, w(192), 7, 1, 1, S);
    const int cat = g.concat(p + "/concat", {b0, b1});
    const int up = g.conv(p + "/expand", cat, g.channels(x), 1, 1, 1, S, true);
    const int add = g.residual_add(p + "/add", x, up, cfg.residual_scale);
    x = g.relu(p + "/relu", add);
  }

  // Reduction-B (max-pool branch + three convolution towers)
  {
    const int p0 = g.pool("redb/pool", LayerKind::MaxPool, x, 3, 2, V);
    int b1 = g.cbr("redb/b1_1x1", x, w(256), 1, 1, 1, S);
    b1 = g.cbr("redb/b1_3x3", b1, w(384), 3, 3, 2, V);
    int b2 = g.cbr("redb/b2_1x1", x, w(256), 1, 1, 1, S);
    b2 = g.cbr("redb/b2_3x3", b2, w(288), 3, 3, 2, V);
    int b3 = g.cbr("redb/b3_1x1", x, w(256), 1, 1, 1, S);
    b3 = g.cbr("redb/b3_3x3", b3, w(288), 3, 3, 1, S);
    b3 = g.cbr("redb/b3_3x3s2", b3, w(320), 3, 3, 2, V);
    x = g.concat("redb/concat", {p0, b1, b2, b3});
  }

  // Inception-ResNet-C x block_counts[2]
  for (int i = 1; i <= cfg.block_counts[2]; ++i) {
    const std::string p = "irc" + pad2(i);
    const int b0 = g.cbr(p + "/b0_1x1", x, w(192), 1, 1, 1, S);
    int b1 = g.cbr(p + "/b1_1x1", x, w(192), 1, 1, 1, S);
    b1 = g.cbr(p + "/b1_1x3", b1, w(224), 1, 3, 1, S);
    b1 = g.cbr(p + "/b1_3x1", b1, w(256), 3, 1, 1, S);
    const int cat = g.concat(p + "/concat", {b0, b1});
    const int up = g.conv(p + "/expand", cat, g.channels(x), 1, 1, 1, S, true);
    const int add = g.residual_add(p + "/add", x, up, cfg.residual_scale);
    x = g.relu(p + "/relu", add);
  }

  // head
  if (cfg.global_avg_pool) {
    const Shape3 s = g.layers[static_cast<std::size_t>(x)].out;
    x = g.pool("head/gap", LayerKind::AvgPool, x, std::max(s.h, s.w), 1, V);
  }
  x = g.flatten("head/flatten", x);
  if (cfg.dropout > 0.0) x = g.dropout("head/dropout", x, cfg.dropout);
  for (std::size_t i = 0; i < cfg.head_widths.size(); ++i) {
    const std::string p = "head/fc" + std::to_string(i + 1);
    x = g.fc(p, x, cfg.head_widths[i]);
    x = g.relu(p + "/relu", x);
  }
  x = g.fc("head/logits", x, cfg.num_classes);
  g.softmax("head/softmax", x);

  return std::move(g.layers);
}

/// Number of parameter values a layer owns (its batch norm counted with it).
inline std::int64_t layer_param_count(const std::vector<LayerDef>& layers,
                                      std::size_t idx) {
  const LayerDef& d = layers[idx];
  if (d.kind == LayerKind::Conv) {
    const Shape3 is = layers[static_cast<std::size_t>(d.inputs[0])].out;
    std::int64_t n = static_cast<std::int64_t>(d.filters) * is.c * d.kernel_h * d.kernel_w;
    if (d.use_bias) n += d.filters;
    return n;
  }
  if (d.kind == LayerKind::BatchNorm) return 2 * d.out.c;  // gamma, beta
  if (d.kind == LayerKind::FullyConnected) {
    const Shape3 is = layers[static_cast<std::size_t>(d.inputs[0])].out;
    return static_cast<std::int64_t>(d.units) * is.c + d.units;
  }
  return 0;
}

/// Plain-text table: layer name, kind, output shape, parameter count,
/// trainable flag.
inline std::string graph_listing(const std::vector<LayerDef>& layers) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "layer" << std::setw(17) << "kind"
     << std::setw(16) << "output" << std::right << std::setw(10) << "params"
     << "  trainable\n";
  std::int64_t total = 0, trainable_total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDef& d = layers[i];
    std::ostringstream shape;
    shape << d.out.c << "x" << d.out.h << "x" << d.out.w;
    const std::int64_t params = layer_param_count(layers, i);
    total += params;
    const bool eff_trainable =
        d.kind == LayerKind::BatchNorm
            ? layers[static_cast<std::size_t>(d.bn_owner)].trainable
            : d.trainable;
    if (eff_trainable) trainable_total += params;
    os << std::left << std::setw(24) << d.name << std::setw(17)
       << layer_kind_name(d.kind) << std::setw(16) << shape.str() << std::right
       << std::setw(10) << params << "  "
       << (params > 0 ? (eff_trainable ? "yes" : "no") : "-") << "\n";
  }
  os << "total params: " << total << " (trainable: " << trainable_total << ")\n";
  return os.str();
}

}  // namespace dermnet
