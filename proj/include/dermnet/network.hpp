#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dermnet/graph.hpp"
#include "dermnet/ops.hpp"
#include "dermnet/rng.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

namespace detail {
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

/// The network: layer graph plus named parameter tensors. Parameter keys are
/// "<layer>/weight|bias" for convolutions and dense layers and
/// "<layer>/gamma|beta|running_mean|running_var" for batch norms.
template <typename T>
struct NetworkT {
  NetworkConfig cfg;
  std::vector<LayerDef> layers;
  std::map<std::string, TensorT<T>> params;

  const LayerDef& layer(int i) const { return layers[static_cast<std::size_t>(i)]; }
  LayerDef& layer(int i) { return layers[static_cast<std::size_t>(i)]; }

  TensorT<T>& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) raise(Err::ShapeMismatch, "no parameter " + name);
    return it->second;
  }
  const TensorT<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) raise(Err::ShapeMismatch, "no parameter " + name);
    return it->second;
  }

  /// True when the parameters belonging to a layer should receive updates.
  /// Batch norms follow the convolution they normalize.
  bool layer_trainable(int i) const {
    const LayerDef& d = layer(i);
    if (d.kind == LayerKind::BatchNorm) return layer(d.bn_owner).trainable;
    return d.trainable;
  }
};

using Network = NetworkT<float>;

template <typename T>
NetworkT<T> build_network(const NetworkConfig& cfg) {
  NetworkT<T> net;
  net.cfg = cfg;
  net.layers = build_layers(cfg);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDef& d = net.layers[i];
    if (d.kind == LayerKind::Conv) {
      const Shape3 is = net.layers[static_cast<std::size_t>(d.inputs[0])].out;
      net.params.emplace(d.name + "/weight",
                         TensorT<T>({d.filters, is.c, d.kernel_h, d.kernel_w}));
      if (d.use_bias)
        net.params.emplace(d.name + "/bias", TensorT<T>({d.filters}));
    } else if (d.kind == LayerKind::BatchNorm) {
      net.params.emplace(d.name + "/gamma", TensorT<T>({d.out.c}));
      net.params.emplace(d.name + "/beta", TensorT<T>({d.out.c}));
      net.params.emplace(d.name + "/running_mean", TensorT<T>({d.out.c}));
      net.params.emplace(d.name + "/running_var", TensorT<T>({d.out.c}));
    } else if (d.kind == LayerKind::FullyConnected) {
      const Shape3 is = net.layers[static_cast<std::size_t>(d.inputs[0])].out;
      net.params.emplace(d.name + "/weight", TensorT<T>({d.units, is.c}));
      net.params.emplace(d.name + "/bias", TensorT<T>({d.units}));
    }
  }
  return net;
}

/// Weights ~ U(-L, L) with L = sqrt(6 / fan_in); biases zero; batch-norm
/// scale 1, shift 0, running stats (0, 1). Each tensor draws from its own
/// name-derived stream, so initialization is order-independent.
template <typename T>
void init_parameters(NetworkT<T>& net, std::uint64_t seed) {
  for (auto& [name, tensor] : net.params) {
    const auto slash = name.rfind('/');
    const std::string leaf = name.substr(slash + 1);
    if (leaf == "weight") {
      std::int64_t fan_in = 1;
      for (std::size_t i = 1; i < tensor.shape.size(); ++i) fan_in *= tensor.shape[i];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng(mix_seed(seed, detail::fnv1a(name)));
      for (T& v : tensor.data)
        v = static_cast<T>(rng.uniform(-limit, limit));
    } else if (leaf == "gamma" || leaf == "running_var") {
      tensor.fill(T(1));
    } else {
      tensor.fill(T(0));  // bias, beta, running_mean
    }
  }
}

template <typename T>
int count_parameterized_layers(const NetworkT<T>& net) {
  int n = 0;
  for (const auto& d : net.layers)
    if (d.parameterized()) ++n;
  return n;
}

/// Makes exactly the last `trainable_last_n` parameterized layers (counting
/// backward from the output) trainable and freezes the rest. Frozen batch
/// norms run in inference mode from then on.
template <typename T>
void freeze_for_fine_tuning(NetworkT<T>& net, int trainable_last_n) {
  const int total = count_parameterized_layers(net);
  if (trainable_last_n < 1 || trainable_last_n > total)
    raise(Err::OutOfRange, "trainable_last_n must be in [1, " +
                               std::to_string(total) + "]");
  int remaining = trainable_last_n;
  for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it) {
    if (!it->parameterized()) continue;
    it->trainable = remaining > 0;
    if (remaining > 0) --remaining;
  }
}

template <typename T>
void unfreeze_all(NetworkT<T>& net) {
  for (auto& d : net.layers) d.trainable = true;
}

template <typename T>
std::vector<std::string> trainable_layer_names(const NetworkT<T>& net) {
  std::vector<std::string> names;
  for (const auto& d : net.layers)
    if (d.parameterized() && d.trainable) names.push_back(d.name);
  return names;
}

/// Whether a given parameter tensor receives gradient updates.
template <typename T>
bool param_trainable(const NetworkT<T>& net, const std::string& name) {
  const auto slash = name.rfind('/');
  const std::string leaf = name.substr(slash + 1);
  if (leaf == "running_mean" || leaf == "running_var") return false;
  const std::string layer_name = name.substr(0, slash);
  for (int i = 0; i < static_cast<int>(net.layers.size()); ++i)
    if (net.layers[static_cast<std::size_t>(i)].name == layer_name)
      return net.layer_trainable(i);
  raise(Err::ShapeMismatch, "no layer for parameter " + name);
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardCtx {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  std::vector<TensorT<T>> act;                    // per-node output
  std::vector<std::vector<std::int32_t>> argmax;  // max-pool nodes
  std::vector<std::vector<T>> bn_mean, bn_var;    // stats used at forward time
  std::vector<char> bn_batch_stats;               // per node: batch vs running
  std::vector<std::vector<char>> dropout_mask;
  std::vector<T> scratch, scratch2;               // im2col buffers
};

template <typename T>
ops::ConvDims node_conv_dims(const NetworkT<T>& net, int idx) {
  const LayerDef& d = net.layer(idx);
  const Shape3 is = net.layer(d.inputs[0]).out;
  const int oc = d.kind == LayerKind::Conv ? d.filters : is.c;
  return ops::conv_dims(is.c, is.h, is.w, oc, d.kernel_h, d.kernel_w, d.stride,
                        d.padding);
}

/// Runs the graph on a batch (N, 3, H, W). Training mode uses batch
/// statistics in (trainable) batch norms and applies dropout; inference mode
/// is deterministic and mutates nothing.
template <typename T>
const TensorT<T>& forward(NetworkT<T>& net, const TensorT<T>& input,
                          bool training, ForwardCtx<T>& ctx,
                          std::uint64_t dropout_seed = 0) {
  const int num_nodes = static_cast<int>(net.layers.size());
  if (input.shape.size() != 4 || input.dim(1) != 3 ||
      input.dim(2) != net.cfg.input_hw || input.dim(3) != net.cfg.input_hw)
    raise(Err::ShapeMismatch,
          "expected input (N,3," + std::to_string(net.cfg.input_hw) + "," +
              std::to_string(net.cfg.input_hw) + "), got " + input.shape_str());
  const int n = input.dim(0);

  ctx.training = training;
  ctx.dropout_seed = dropout_seed;
  ctx.act.assign(static_cast<std::size_t>(num_nodes), TensorT<T>{});
  ctx.argmax.assign(static_cast<std::size_t>(num_nodes), {});
  ctx.bn_mean.assign(static_cast<std::size_t>(num_nodes), {});
  ctx.bn_var.assign(static_cast<std::size_t>(num_nodes), {});
  ctx.bn_batch_stats.assign(static_cast<std::size_t>(num_nodes), 0);
  ctx.dropout_mask.assign(static_cast<std::size_t>(num_nodes), {});

  for (int i = 0; i < num_nodes; ++i) {
    const LayerDef& d = net.layer(i);
    TensorT<T>& out = ctx.act[static_cast<std::size_t>(i)];
    const Shape3 os = d.out;

    auto flat_out = [&]() { out = TensorT<T>({n, os.c}); };
    auto spatial_out = [&]() { out = TensorT<T>({n, os.c, os.h, os.w}); };

    switch (d.kind) {
      case LayerKind::Input:
        out = input;
        break;
      case LayerKind::Conv: {
        spatial_out();
        const auto cd = node_conv_dims(net, i);
        const TensorT<T>* bias =
            d.use_bias ? &net.param(d.name + "/bias") : nullptr;
        ops::conv_forward(ctx.act[static_cast<std::size_t>(d.inputs[0])],
                          net.param(d.name + "/weight"), bias, cd, out,
                          ctx.scratch);
        break;
      }
      case LayerKind::BatchNorm: {
        spatial_out();
        const bool batch_stats = training && net.layer_trainable(i);
        ctx.bn_batch_stats[static_cast<std::size_t>(i)] = batch_stats ? 1 : 0;
        ctx.bn_mean[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(os.c));
        ctx.bn_var[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(os.c));
        ops::batchnorm_forward(
            ctx.act[static_cast<std::size_t>(d.inputs[0])],
            net.param(d.name + "/gamma"), net.param(d.name + "/beta"),
            net.param(d.name + "/running_mean"),
            net.param(d.name + "/running_var"), batch_stats,
            net.cfg.bn_momentum, out, &ctx.bn_mean[static_cast<std::size_t>(i)],
            &ctx.bn_var[static_cast<std::size_t>(i)]);
        break;
      }
      case LayerKind::Relu: {
        const TensorT<T>& x = ctx.act[static_cast<std::size_t>(d.inputs[0])];
        out = TensorT<T>(x.shape);
        ops::relu_forward(x, out);
        break;
      }
      case LayerKind::MaxPool: {
        spatial_out();
        const auto cd = node_conv_dims(net, i);
        ops::maxpool_forward(ctx.act[static_cast<std::size_t>(d.inputs[0])], cd,
                             out, ctx.argmax[static_cast<std::size_t>(i)]);
        break;
      }
      case LayerKind::AvgPool: {
        spatial_out();
        const auto cd = node_conv_dims(net, i);
        ops::avgpool_forward(ctx.act[static_cast<std::size_t>(d.inputs[0])], cd, out);
        break;
      }
      case LayerKind::Concat: {
        spatial_out();
        const int hw = os.h * os.w;
        int c_off = 0;
        for (const int src : d.inputs) {
          const TensorT<T>& x = ctx.act[static_cast<std::size_t>(src)];
          const int xc = x.dim(1);
          for (int s = 0; s < n; ++s) {
            const T* sp = x.ptr() + static_cast<std::size_t>(s) * xc * hw;
            T* dp = out.ptr() + (static_cast<std::size_t>(s) * os.c + c_off) * hw;
            std::copy(sp, sp + static_cast<std::size_t>(xc) * hw, dp);
          }
          c_off += xc;
        }
        break;
      }
      case LayerKind::ResidualAdd: {
        const TensorT<T>& a = ctx.act[static_cast<std::size_t>(d.inputs[0])];
        const TensorT<T>& b = ctx.act[static_cast<std::size_t>(d.inputs[1])];
        out = TensorT<T>(a.shape);
        const T scale = static_cast<T>(d.res_scale);
        for (std::size_t j = 0; j < a.data.size(); ++j)
          out.data[j] = a.data[j] + scale * b.data[j];
        break;
      }
      case LayerKind::Flatten: {
        const TensorT<T>& x = ctx.act[static_cast<std::size_t>(d.inputs[0])];
        out = x;
        out.shape = {n, os.c};
        break;
      }
      case LayerKind::Dropout: {
        const TensorT<T>& x = ctx.act[static_cast<std::size_t>(d.inputs[0])];
        out = TensorT<T>(x.shape);
        if (training && d.rate > 0.0) {
          ops::dropout_forward(x, d.rate,
                               mix_seed(dropout_seed, static_cast<std::uint64_t>(i)),
                               out, ctx.dropout_mask[static_cast<std::size_t>(i)]);
        } else {
          out.data = x.data;
        }
        break;
      }
      case LayerKind::FullyConnected: {
        flat_out();
        ops::fc_forward(ctx.act[static_cast<std::size_t>(d.inputs[0])],
                        net.param(d.name + "/weight"), net.param(d.name + "/bias"),
                        out);
        break;
      }
      case LayerKind::Softmax: {
        const TensorT<T>& x = ctx.act[static_cast<std::size_t>(d.inputs[0])];
        out = TensorT<T>(x.shape);
        ops::softmax_forward(x, out);
        break;
      }
    }
  }
  return ctx.act.back();
}

template <typename T>
using GradMap = std::map<std::string, TensorT<T>>;

/// Gradients of every trainable parameter given dL/d(output). Frozen layers
/// get no entries; backward stops below the deepest trainable layer.
template <typename T>
GradMap<T> backward(NetworkT<T>& net, ForwardCtx<T>& ctx,
                    const TensorT<T>& dout_final) {
  const int num_nodes = static_cast<int>(net.layers.size());

  int min_needed = num_nodes;  // lowest node whose activation gradient matters
  for (int i = 0; i < num_nodes; ++i) {
    if (net.layer(i).parameterized() && net.layer(i).trainable) {
      min_needed = i;
      break;
    }
  }

  GradMap<T> grads;
  for (const auto& [name, tensor] : net.params)
    if (param_trainable(net, name)) grads.emplace(name, TensorT<T>(tensor.shape));
  if (grads.empty()) return grads;

  std::vector<TensorT<T>> dact(static_cast<std::size_t>(num_nodes));
  auto ensure = [&](int idx) -> TensorT<T>& {
    TensorT<T>& g = dact[static_cast<std::size_t>(idx)];
    if (g.empty())
      g = TensorT<T>(ctx.act[static_cast<std::size_t>(idx)].shape);
    return g;
  };
  if (!same_shape(dout_final, ctx.act.back()))
    raise(Err::ShapeMismatch, "output gradient shape mismatch");
  dact.back() = dout_final;

  auto grad_of = [&](const std::string& name) -> TensorT<T>* {
    auto it = grads.find(name);
    return it == grads.end() ? nullptr : &it->second;
  };

  for (int i = num_nodes - 1; i >= min_needed; --i) {
    const LayerDef& d = net.layer(i);
    TensorT<T>& dy = dact[static_cast<std::size_t>(i)];
    if (dy.empty()) continue;  // node not on a path to the loss

    switch (d.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Conv: {
        const int src = d.inputs[0];
        const auto cd = node_conv_dims(net, i);
        TensorT<T>* dw = grad_of(d.name + "/weight");
        TensorT<T>* db = d.use_bias ? grad_of(d.name + "/bias") : nullptr;
        TensorT<T>* dx = src >= min_needed ? &ensure(src) : nullptr;
        ops::conv_backward(ctx.act[static_cast<std::size_t>(src)],
                           net.param(d.name + "/weight"), cd, dy, dw, db, dx,
                           ctx.scratch, ctx.scratch2);
        break;
      }
      case LayerKind::BatchNorm: {
        const int src = d.inputs[0];
        ops::batchnorm_backward(
            ctx.act[static_cast<std::size_t>(src)], net.param(d.name + "/gamma"),
            ctx.bn_mean[static_cast<std::size_t>(i)],
            ctx.bn_var[static_cast<std::size_t>(i)],
            ctx.bn_batch_stats[static_cast<std::size_t>(i)] != 0, dy,
            grad_of(d.name + "/gamma"), grad_of(d.name + "/beta"), ensure(src));
        break;
      }
      case LayerKind::Relu: {
        const int src = d.inputs[0];
        if (src < min_needed) break;
        TensorT<T>& dx = ensure(src);
        const TensorT<T>& x = ctx.act[static_cast<std::size_t>(src)];
        for (std::size_t j = 0; j < x.data.size(); ++j)
          if (x.data[j] > T(0)) dx.data[j] += dy.data[j];
        break;
      }
      case LayerKind::MaxPool: {
        const int src = d.inputs[0];
        if (src < min_needed) break;
        const auto cd = node_conv_dims(net, i);
        ops::maxpool_backward(cd, dy, ctx.argmax[static_cast<std::size_t>(i)],
                              ensure(src),
                              ctx.act[static_cast<std::size_t>(src)].dim(0));
        break;
      }
      case LayerKind::AvgPool: {
        const int src = d.inputs[0];
        if (src < min_needed) break;
        const auto cd = node_conv_dims(net, i);
        ops::avgpool_backward(cd, dy, ensure(src),
                              ctx.act[static_cast<std::size_t>(src)].dim(0));
        break;
      }
      case LayerKind::Concat: {
        const int n = dy.dim(0);
        const int hw = d.out.h * d.out.w;
        int c_off = 0;
        for (const int src : d.inputs) {
          const int xc = net.layer(src).out.c;
          if (src >= min_needed) {
            TensorT<T>& dx = ensure(src);
            for (int s = 0; s < n; ++s) {
              const T* sp = dy.ptr() + (static_cast<std::size_t>(s) * d.out.c + c_off) * hw;
              T* dp = dx.ptr() + static_cast<std::size_t>(s) * xc * hw;
              for (std::size_t j = 0; j < static_cast<std::size_t>(xc) * hw; ++j)
                dp[j] += sp[j];
            }
          }
          c_off += xc;
        }
        break;
      }
      case LayerKind::ResidualAdd: {
        const int a = d.inputs[0];
        const int b = d.inputs[1];
        const T scale = static_cast<T>(d.res_scale);
        if (a >= min_needed) {
          TensorT<T>& da = ensure(a);
          for (std::size_t j = 0; j < dy.data.size(); ++j) da.data[j] += dy.data[j];
        }
        if (b >= min_needed) {
          TensorT<T>& db = ensure(b);
          for (std::size_t j = 0; j < dy.data.size(); ++j)
            db.data[j] += scale * dy.data[j];
        }
        break;
      }
      case LayerKind::Flatten: {
        const int src = d.inputs[0];
        if (src < min_needed) break;
        TensorT<T>& dx = ensure(src);
        for (std::size_t j = 0; j < dy.data.size(); ++j) dx.data[j] += dy.data[j];
        break;
      }
      case LayerKind::Dropout: {
        const int src = d.inputs[0];
        if (src < min_needed) break;
        TensorT<T>& dx = ensure(src);
        if (ctx.training && d.rate > 0.0) {
          const auto& mask = ctx.dropout_mask[static_cast<std::size_t>(i)];
          const T scale = static_cast<T>(1.0 / (1.0 - d.rate));
          for (std::size_t j = 0; j < dy.data.size(); ++j)
            if (mask[j]) dx.data[j] += dy.data[j] * scale;
        } else {
          for (std::size_t j = 0; j < dy.data.size(); ++j) dx.data[j] += dy.data[j];
        }
        break;
      }
      case LayerKind::FullyConnected: {
        const int src = d.inputs[0];
        ops::fc_backward(ctx.act[static_cast<std::size_t>(src)],
                         net.param(d.name + "/weight"), dy,
                         grad_of(d.name + "/weight"), grad_of(d.name + "/bias"),
                         src >= min_needed ? &ensure(src) : nullptr);
        break;
      }
      case LayerKind::Softmax: {
        const int src = d.inputs[0];
        if (src < min_needed) break;
        ops::softmax_backward(ctx.act[static_cast<std::size_t>(i)], dy, ensure(src));
        break;
      }
    }
    // free this node's activation gradient eagerly
    dact[static_cast<std::size_t>(i)] = TensorT<T>{};
  }
  return grads;
}

}  // namespace dermnet
