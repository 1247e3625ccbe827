#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dermnet/error.hpp"
#include "dermnet/rng.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

enum class Padding { Valid, Same };

/// Output extent of a conv/pool window op. Valid: floor((in-k)/s)+1.
/// Same: ceil(in/s), with padding split low-side-first.
inline int window_out_dim(int in, int k, int stride, Padding pad) {
  if (pad == Padding::Same) return (in + stride - 1) / stride;
  if (in < k) return 0;  // caller turns a 0 into ShapeUnderflow
  return (in - k) / stride + 1;
}

inline int pad_before(int in, int out, int k, int stride, Padding pad) {
  if (pad == Padding::Valid) return 0;
  const int total = std::max((out - 1) * stride + k - in, 0);
  return total / 2;
}

namespace ops {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvDims {
  int ic, ih, iw;
  int oc, oh, ow;
  int kh, kw, stride;
  int pad_top, pad_left;
};

inline ConvDims conv_dims(int ic, int ih, int iw, int oc, int kh, int kw,
                          int stride, Padding pad) {
  ConvDims d;
  d.ic = ic; d.ih = ih; d.iw = iw;
  d.oc = oc; d.kh = kh; d.kw = kw; d.stride = stride;
  d.oh = window_out_dim(ih, kh, stride, pad);
  d.ow = window_out_dim(iw, kw, stride, pad);
  d.pad_top = pad_before(ih, d.oh, kh, stride, pad);
  d.pad_left = pad_before(iw, d.ow, kw, stride, pad);
  return d;
}

/// Unrolls one sample (C,H,W) into a (C*kh*kw) x (oh*ow) row-major matrix.
/// Out-of-bounds taps are zero.
template <typename T>
void im2col(const T* in, const ConvDims& d, T* cols) {
  const int ohw = d.oh * d.ow;
  for (int c = 0; c < d.ic; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * d.ih * d.iw;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        T* row = cols + static_cast<std::size_t>((c * d.kh + ki) * d.kw + kj) * ohw;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad_top + ki;
          if (iy < 0 || iy >= d.ih) {
            std::fill(row + oy * d.ow, row + (oy + 1) * d.ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * d.iw;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad_left + kj;
            row[oy * d.ow + ox] = (ix >= 0 && ix < d.iw) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add of a cols matrix back onto the input plane (conv backward).
template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* din) {
  const int ohw = d.oh * d.ow;
  for (int c = 0; c < d.ic; ++c) {
    T* plane = din + static_cast<std::size_t>(c) * d.ih * d.iw;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const T* row = cols + static_cast<std::size_t>((c * d.kh + ki) * d.kw + kj) * ohw;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad_top + ki;
          if (iy < 0 || iy >= d.ih) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * d.iw;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad_left + kj;
            if (ix >= 0 && ix < d.iw) dst[ix] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

/// Convolution over a batch: weight (oc, ic*kh*kw) x cols, one GEMM per
/// sample, serial over the batch so results never depend on thread count.
template <typename T>
void conv_forward(const TensorT<T>& in, const TensorT<T>& weight,
                  const TensorT<T>* bias, const ConvDims& d, TensorT<T>& out,
                  std::vector<T>& scratch) {
  const int n = in.dim(0);
  const int ckk = d.ic * d.kh * d.kw;
  const int ohw = d.oh * d.ow;
  scratch.resize(static_cast<std::size_t>(ckk) * ohw);
  ConstMatMap<T> wm(weight.ptr(), d.oc, ckk);
  for (int s = 0; s < n; ++s) {
    im2col(in.ptr() + static_cast<std::size_t>(s) * d.ic * d.ih * d.iw, d,
           scratch.data());
    ConstMatMap<T> cols(scratch.data(), ckk, ohw);
    MatMap<T> om(out.ptr() + static_cast<std::size_t>(s) * d.oc * ohw, d.oc, ohw);
    om.noalias() = wm * cols;
    if (bias) {
      for (int oc = 0; oc < d.oc; ++oc)
        om.row(oc).array() += bias->data[static_cast<std::size_t>(oc)];
    }
  }
}

/// Backward kernels in this file *accumulate* into their gradient outputs;
/// callers zero-initialize the buffers once per batch.
template <typename T>
void conv_backward(const TensorT<T>& in, const TensorT<T>& weight,
                   const ConvDims& d, const TensorT<T>& dout,
                   TensorT<T>* dweight, TensorT<T>* dbias, TensorT<T>* din,
                   std::vector<T>& scratch, std::vector<T>& scratch2) {
  const int n = in.dim(0);
  const int ckk = d.ic * d.kh * d.kw;
  const int ohw = d.oh * d.ow;
  scratch.resize(static_cast<std::size_t>(ckk) * ohw);
  ConstMatMap<T> wm(weight.ptr(), d.oc, ckk);

  for (int s = 0; s < n; ++s) {
    ConstMatMap<T> dom(dout.ptr() + static_cast<std::size_t>(s) * d.oc * ohw,
                       d.oc, ohw);
    if (dweight) {
      im2col(in.ptr() + static_cast<std::size_t>(s) * d.ic * d.ih * d.iw, d,
             scratch.data());
      ConstMatMap<T> cols(scratch.data(), ckk, ohw);
      MatMap<T> dwm(dweight->ptr(), d.oc, ckk);
      dwm.noalias() += dom * cols.transpose();
    }
    if (dbias) {
      for (int oc = 0; oc < d.oc; ++oc)
        dbias->data[static_cast<std::size_t>(oc)] += dom.row(oc).sum();
    }
    if (din) {
      scratch2.resize(static_cast<std::size_t>(ckk) * ohw);
      MatMap<T> dcols(scratch2.data(), ckk, ohw);
      dcols.noalias() = wm.transpose() * dom;
      col2im_add(scratch2.data(), d,
                 din->ptr() + static_cast<std::size_t>(s) * d.ic * d.ih * d.iw);
    }
  }
}

// --- pooling ---------------------------------------------------------------

/// Max pool; records the flat argmax (iy*iw+ix) per output cell for backward.
/// Ties resolve to the first element in scan order.
template <typename T>
void maxpool_forward(const TensorT<T>& in, const ConvDims& d, TensorT<T>& out,
                     std::vector<std::int32_t>& argmax) {
  const int n = in.dim(0);
  const int ohw = d.oh * d.ow;
  argmax.assign(static_cast<std::size_t>(n) * d.ic * ohw, -1);
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < d.ic; ++c) {
      const T* plane =
          in.ptr() + (static_cast<std::size_t>(s) * d.ic + c) * d.ih * d.iw;
      T* oplane = out.ptr() + (static_cast<std::size_t>(s) * d.ic + c) * ohw;
      std::int32_t* aplane =
          argmax.data() + (static_cast<std::size_t>(s) * d.ic + c) * ohw;
      for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
          T best{};
          std::int32_t best_idx = -1;
          for (int ki = 0; ki < d.kh; ++ki) {
            const int iy = oy * d.stride - d.pad_top + ki;
            if (iy < 0 || iy >= d.ih) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int ix = ox * d.stride - d.pad_left + kj;
              if (ix < 0 || ix >= d.iw) continue;
              const T v = plane[iy * d.iw + ix];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = iy * d.iw + ix;
              }
            }
          }
          oplane[oy * d.ow + ox] = best_idx >= 0 ? best : T(0);
          aplane[oy * d.ow + ox] = best_idx;
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const ConvDims& d, const TensorT<T>& dout,
                      const std::vector<std::int32_t>& argmax, TensorT<T>& din,
                      int n) {
  const int ohw = d.oh * d.ow;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < d.ic; ++c) {
      const std::size_t base = (static_cast<std::size_t>(s) * d.ic + c);
      const T* doplane = dout.ptr() + base * ohw;
      T* diplane = din.ptr() + base * d.ih * d.iw;
      const std::int32_t* aplane = argmax.data() + base * ohw;
      for (int i = 0; i < ohw; ++i)
        if (aplane[i] >= 0) diplane[aplane[i]] += doplane[i];
    }
  }
}

/// Average pool; padded taps are excluded from the mean (divisor = number of
/// in-bounds cells).
template <typename T>
void avgpool_forward(const TensorT<T>& in, const ConvDims& d, TensorT<T>& out) {
  const int n = in.dim(0);
  const int ohw = d.oh * d.ow;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < d.ic; ++c) {
      const T* plane =
          in.ptr() + (static_cast<std::size_t>(s) * d.ic + c) * d.ih * d.iw;
      T* oplane = out.ptr() + (static_cast<std::size_t>(s) * d.ic + c) * ohw;
      for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
          T sum{};
          int count = 0;
          for (int ki = 0; ki < d.kh; ++ki) {
            const int iy = oy * d.stride - d.pad_top + ki;
            if (iy < 0 || iy >= d.ih) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int ix = ox * d.stride - d.pad_left + kj;
              if (ix < 0 || ix >= d.iw) continue;
              sum += plane[iy * d.iw + ix];
              ++count;
            }
          }
          oplane[oy * d.ow + ox] = count > 0 ? sum / static_cast<T>(count) : T(0);
        }
      }
    }
  }
}

template <typename T>
void avgpool_backward(const ConvDims& d, const TensorT<T>& dout, TensorT<T>& din,
                      int n) {
  const int ohw = d.oh * d.ow;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < d.ic; ++c) {
      const std::size_t base = (static_cast<std::size_t>(s) * d.ic + c);
      const T* doplane = dout.ptr() + base * ohw;
      T* diplane = din.ptr() + base * d.ih * d.iw;
      for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
          int count = 0;
          for (int ki = 0; ki < d.kh; ++ki) {
            const int iy = oy * d.stride - d.pad_top + ki;
            if (iy < 0 || iy >= d.ih) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int ix = ox * d.stride - d.pad_left + kj;
              if (ix >= 0 && ix < d.iw) ++count;
            }
          }
          if (count == 0) continue;
          const T g = doplane[oy * d.ow + ox] / static_cast<T>(count);
          for (int ki = 0; ki < d.kh; ++ki) {
            const int iy = oy * d.stride - d.pad_top + ki;
            if (iy < 0 || iy >= d.ih) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int ix = ox * d.stride - d.pad_left + kj;
              if (ix >= 0 && ix < d.iw) diplane[iy * d.iw + ix] += g;
            }
          }
        }
      }
    }
  }
}

// --- batch norm --------------------------------------------------------------

inline constexpr double kBnEps = 1e-3;

/// Training mode: normalizes with biased batch statistics per channel and
/// updates the running estimates in place. Inference mode: running stats.
template <typename T>
void batchnorm_forward(const TensorT<T>& in, const TensorT<T>& gamma,
                       const TensorT<T>& beta, TensorT<T>& running_mean,
                       TensorT<T>& running_var, bool use_batch_stats,
                       double momentum, TensorT<T>& out,
                       std::vector<T>* save_mean, std::vector<T>* save_var) {
  const int n = in.dim(0);
  const int c = in.dim(1);
  const int hw = static_cast<int>(in.numel() / (static_cast<std::int64_t>(n) * c));
  const std::int64_t m = static_cast<std::int64_t>(n) * hw;

  for (int ch = 0; ch < c; ++ch) {
    T mean, var;
    if (use_batch_stats) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s) {
        const T* p = in.ptr() + (static_cast<std::size_t>(s) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) sum += p[i];
      }
      mean = static_cast<T>(sum / static_cast<double>(m));
      double sq = 0.0;
      for (int s = 0; s < n; ++s) {
        const T* p = in.ptr() + (static_cast<std::size_t>(s) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          const double dv = static_cast<double>(p[i]) - static_cast<double>(mean);
          sq += dv * dv;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(m));
      running_mean.data[static_cast<std::size_t>(ch)] = static_cast<T>(
          momentum * running_mean.data[static_cast<std::size_t>(ch)] +
          (1.0 - momentum) * mean);
      running_var.data[static_cast<std::size_t>(ch)] = static_cast<T>(
          momentum * running_var.data[static_cast<std::size_t>(ch)] +
          (1.0 - momentum) * var);
    } else {
      mean = running_mean.data[static_cast<std::size_t>(ch)];
      var = running_var.data[static_cast<std::size_t>(ch)];
    }
    if (save_mean) (*save_mean)[static_cast<std::size_t>(ch)] = mean;
    if (save_var) (*save_var)[static_cast<std::size_t>(ch)] = var;

    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + kBnEps));
    const T g = gamma.data[static_cast<std::size_t>(ch)];
    const T b = beta.data[static_cast<std::size_t>(ch)];
    for (int s = 0; s < n; ++s) {
      const T* p = in.ptr() + (static_cast<std::size_t>(s) * c + ch) * hw;
      T* q = out.ptr() + (static_cast<std::size_t>(s) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) q[i] = g * (p[i] - mean) * inv + b;
    }
  }
}

/// Backward through batch norm. `batch_stats` selects the training-mode
/// Jacobian (mean/var depend on x) versus the frozen/inference one.
template <typename T>
void batchnorm_backward(const TensorT<T>& in, const TensorT<T>& gamma,
                        const std::vector<T>& mean, const std::vector<T>& var,
                        bool batch_stats, const TensorT<T>& dout,
                        TensorT<T>* dgamma, TensorT<T>* dbeta, TensorT<T>& din) {
  const int n = in.dim(0);
  const int c = in.dim(1);
  const int hw = static_cast<int>(in.numel() / (static_cast<std::int64_t>(n) * c));
  const std::int64_t m = static_cast<std::int64_t>(n) * hw;

  for (int ch = 0; ch < c; ++ch) {
    const double mu = mean[static_cast<std::size_t>(ch)];
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[static_cast<std::size_t>(ch)]) + kBnEps);
    const double g = gamma.data[static_cast<std::size_t>(ch)];

    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * hw;
      const T* x = in.ptr() + base;
      const T* dy = dout.ptr() + base;
      for (int i = 0; i < hw; ++i) {
        const double xh = (static_cast<double>(x[i]) - mu) * inv;
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh;
      }
    }
    if (dgamma) dgamma->data[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy_xhat);
    if (dbeta) dbeta->data[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy);

    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * hw;
      const T* x = in.ptr() + base;
      const T* dy = dout.ptr() + base;
      T* dx = din.ptr() + base;
      if (batch_stats) {
        for (int i = 0; i < hw; ++i) {
          const double xh = (static_cast<double>(x[i]) - mu) * inv;
          dx[i] += static_cast<T>(
              g * inv *
              (dy[i] - sum_dy / static_cast<double>(m) -
               xh * sum_dy_xhat / static_cast<double>(m)));
        }
      } else {
        for (int i = 0; i < hw; ++i) dx[i] += static_cast<T>(g * inv * dy[i]);
      }
    }
  }
}

// --- dense head --------------------------------------------------------------

template <typename T>
void fc_forward(const TensorT<T>& in, const TensorT<T>& weight,
                const TensorT<T>& bias, TensorT<T>& out) {
  const int n = in.dim(0);
  const int din = in.dim(1);
  const int units = weight.dim(0);
  ConstMatMap<T> x(in.ptr(), n, din);
  ConstMatMap<T> w(weight.ptr(), units, din);
  MatMap<T> y(out.ptr(), n, units);
  y.noalias() = x * w.transpose();
  for (int u = 0; u < units; ++u)
    y.col(u).array() += bias.data[static_cast<std::size_t>(u)];
}

template <typename T>
void fc_backward(const TensorT<T>& in, const TensorT<T>& weight,
                 const TensorT<T>& dout, TensorT<T>* dweight, TensorT<T>* dbias,
                 TensorT<T>* din) {
  const int n = in.dim(0);
  const int d = in.dim(1);
  const int units = weight.dim(0);
  ConstMatMap<T> x(in.ptr(), n, d);
  ConstMatMap<T> w(weight.ptr(), units, d);
  ConstMatMap<T> dy(dout.ptr(), n, units);
  if (dweight) {
    MatMap<T> dw(dweight->ptr(), units, d);
    dw.noalias() += dy.transpose() * x;
  }
  if (dbias) {
    for (int u = 0; u < units; ++u)
      dbias->data[static_cast<std::size_t>(u)] += dy.col(u).sum();
  }
  if (din) {
    MatMap<T> dx(din->ptr(), n, d);
    dx.noalias() += dy * w;
  }
}

template <typename T>
void relu_forward(const TensorT<T>& in, TensorT<T>& out) {
  for (std::size_t i = 0; i < in.data.size(); ++i)
    out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
}

/// Row-stable softmax over the last dimension of an (N, K) tensor.
template <typename T>
void softmax_forward(const TensorT<T>& in, TensorT<T>& out) {
  const int n = in.dim(0);
  const int k = in.dim(1);
  for (int s = 0; s < n; ++s) {
    const T* z = in.ptr() + static_cast<std::size_t>(s) * k;
    T* p = out.ptr() + static_cast<std::size_t>(s) * k;
    T zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(z[j] - zmax));
      p[j] = static_cast<T>(e);
      sum += e;
    }
    for (int j = 0; j < k; ++j) p[j] = static_cast<T>(p[j] / sum);
  }
}

/// dz = p ⊙ (dp − <dp, p>), the exact softmax Jacobian product.
template <typename T>
void softmax_backward(const TensorT<T>& probs, const TensorT<T>& dout,
                      TensorT<T>& din) {
  const int n = probs.dim(0);
  const int k = probs.dim(1);
  for (int s = 0; s < n; ++s) {
    const T* p = probs.ptr() + static_cast<std::size_t>(s) * k;
    const T* dp = dout.ptr() + static_cast<std::size_t>(s) * k;
    T* dz = din.ptr() + static_cast<std::size_t>(s) * k;
    double dot = 0.0;
    for (int j = 0; j < k; ++j) dot += static_cast<double>(dp[j]) * p[j];
    for (int j = 0; j < k; ++j)
      dz[j] += static_cast<T>(p[j] * (static_cast<double>(dp[j]) - dot));
  }
}

/// Inverted dropout with a per-call seed; identity when `rate` is zero.
template <typename T>
void dropout_forward(const TensorT<T>& in, double rate, std::uint64_t seed,
                     TensorT<T>& out, std::vector<char>& mask) {
  mask.assign(in.data.size(), 1);
  Rng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    if (rng.uniform() < rate) {
      mask[i] = 0;
      out.data[i] = T(0);
    } else {
      out.data[i] = in.data[i] * scale;
    }
  }
}

}  // namespace ops
}  // namespace dermnet
