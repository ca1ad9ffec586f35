#pragma once

// Matrix products, convolutions and resampling on NCHW tensors.
//
// conv2d, transposed_conv2d and conv2d_weight_grad are mutually adjoint, so
// each one's backward rule is expressed with the other two and the family is
// closed under repeated differentiation. The same holds for the pair
// nearest_upsample / sum_pool.

#include <cblas.h>

#include "grnn/tensor.hpp"

namespace grnn {

namespace detail {

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double beta, double* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) std::fill_n(c, m * n, 0.0);
    return;
  }
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, lda, b, ldb, beta, c, static_cast<int>(n));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  // Row by row, so each output row depends only on its own input row and
  // results do not vary with batch position.
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) detail::gemm(false, false, 1, n, k, pa + i * k, pb, 0.0, out.data() + i * n);
  return make_op({m, n}, std::move(out), {a, b},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>& need) {
                   return std::vector<Tensor>{need[0] ? matmul(g, transpose(in[1])) : Tensor(),
                                              need[1] ? matmul(transpose(in[0]), g) : Tensor()};
                 },
                 "matmul");
}

// x (N,F) times weight (O,F) transposed plus bias (O).
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, transpose(weight));
  return add(y, broadcast_to(reshape(bias, {1, bias.numel()}), y.shape()));
}

struct ConvGeometry {
  std::size_t kernel_h = 1, kernel_w = 1, stride = 1, padding = 0;

  std::size_t out_extent(std::size_t in, std::size_t k) const {
    return (in + 2 * padding - k) / stride + 1;
  }
};

inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                     std::size_t padding);
inline Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                                std::size_t padding, std::size_t out_h, std::size_t out_w);
inline Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kernel_h,
                                 std::size_t kernel_w, std::size_t stride, std::size_t padding);

namespace detail {

// Unfolds one (C,H,W) image into a (C*kh*kw, Ho*Wo) column matrix.
inline void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w,
                   const ConvGeometry& geo, std::size_t ho, std::size_t wo, double* cols) {
  const std::size_t kh = geo.kernel_h, kw = geo.kernel_w;
  const long pad = static_cast<long>(geo.padding);
  const long s = static_cast<long>(geo.stride);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = img + ch * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = cols + ((ch * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const long ih = static_cast<long>(oh) * s - pad + static_cast<long>(ki);
          double* dst = row + oh * wo;
          if (ih < 0 || ih >= static_cast<long>(h)) {
            std::fill_n(dst, wo, 0.0);
            continue;
          }
          const double* src = plane + ih * static_cast<long>(w);
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const long iw = static_cast<long>(ow) * s - pad + static_cast<long>(kj);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Folds a column matrix back, accumulating into a zeroed (C,H,W) image.
inline void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                   const ConvGeometry& geo, std::size_t ho, std::size_t wo, double* img) {
  const std::size_t kh = geo.kernel_h, kw = geo.kernel_w;
  const long pad = static_cast<long>(geo.padding);
  const long s = static_cast<long>(geo.stride);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* plane = img + ch * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = cols + ((ch * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const long ih = static_cast<long>(oh) * s - pad + static_cast<long>(ki);
          if (ih < 0 || ih >= static_cast<long>(h)) continue;
          double* dst = plane + ih * static_cast<long>(w);
          const double* src = row + oh * wo;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const long iw = static_cast<long>(ow) * s - pad + static_cast<long>(kj);
            if (iw >= 0 && iw < static_cast<long>(w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

inline bool is_identity_unfold(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace detail

// Cross-correlation of input (N,C,H,W) with weight (O,C,kh,kw).
inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                     std::size_t padding) {
  if (input.rank() != 4 || weight.rank() != 4 || input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const ConvGeometry geo{kh, kw, stride, padding};
  const std::size_t ho = geo.out_extent(h, kh), wo = geo.out_extent(w, kw);
  const std::size_t ckk = c * kh * kw, l = ho * wo;
  std::vector<double> out(n * o * l);
  std::vector<double> cols(detail::is_identity_unfold(geo) ? 0 : ckk * l);
  const double* x = input.vec().data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x + b * c * h * w;
    const double* colp = xb;
    if (!cols.empty()) {
      detail::im2col(xb, c, h, w, geo, ho, wo, cols.data());
      colp = cols.data();
    }
    detail::gemm(false, false, o, l, ckk, weight.vec().data(), colp, 0.0, out.data() + b * o * l);
  }
  return make_op({n, o, ho, wo}, std::move(out), {input, weight},
                 [stride, padding, h, w, kh, kw](const Tensor& g, const std::vector<Tensor>& in,
                                                 const std::vector<bool>& need) {
                   Tensor gx, gw;
                   if (need[0]) gx = transposed_conv2d(g, in[1], stride, padding, h, w);
                   if (need[1]) gw = conv2d_weight_grad(in[0], g, kh, kw, stride, padding);
                   return std::vector<Tensor>{gx, gw};
                 },
                 "conv2d");
}

// Adjoint of conv2d with respect to its input: maps (N,O,Ho,Wo) through a
// weight of shape (O,C,kh,kw) to (N,C,out_h,out_w).
inline Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                                std::size_t padding, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 4 || weight.rank() != 4 || input.dim(1) != weight.dim(0)) {
    throw ShapeError("transposed_conv2d: input " + to_string(input.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  const std::size_t n = input.dim(0), o = input.dim(1), ho = input.dim(2), wo = input.dim(3);
  const std::size_t c = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const ConvGeometry geo{kh, kw, stride, padding};
  if (out_h + 2 * padding < kh || out_w + 2 * padding < kw || geo.out_extent(out_h, kh) != ho ||
      geo.out_extent(out_w, kw) != wo) {
    throw ShapeError("transposed_conv2d: output extent inconsistent with input " +
                     to_string(input.shape()));
  }
  const std::size_t ckk = c * kh * kw, l = ho * wo;
  std::vector<double> out(n * c * out_h * out_w, 0.0);
  const bool direct = detail::is_identity_unfold(geo);
  std::vector<double> cols(direct ? 0 : ckk * l);
  const double* y = input.vec().data();
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = out.data() + b * c * out_h * out_w;
    if (direct) {
      detail::gemm(true, false, ckk, l, o, weight.vec().data(), y + b * o * l, 0.0, dst);
    } else {
      detail::gemm(true, false, ckk, l, o, weight.vec().data(), y + b * o * l, 0.0, cols.data());
      detail::col2im(cols.data(), c, out_h, out_w, geo, ho, wo, dst);
    }
  }
  return make_op({n, c, out_h, out_w}, std::move(out), {input, weight},
                 [stride, padding, kh, kw](const Tensor& g, const std::vector<Tensor>& in,
                                           const std::vector<bool>& need) {
                   Tensor gy, gw;
                   if (need[0]) gy = conv2d(g, in[1], stride, padding);
                   if (need[1]) gw = conv2d_weight_grad(g, in[0], kh, kw, stride, padding);
                   return std::vector<Tensor>{gy, gw};
                 },
                 "transposed_conv2d");
}

// Fractionally-strided convolution with the conventional output extent
// (H-1)*stride - 2*padding + k.
inline Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                                std::size_t padding) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("transposed_conv2d expects 4-d input and weight");
  }
  const long oh = static_cast<long>((input.dim(2) - 1) * stride + weight.dim(2)) -
                  2 * static_cast<long>(padding);
  const long ow = static_cast<long>((input.dim(3) - 1) * stride + weight.dim(3)) -
                  2 * static_cast<long>(padding);
  if (oh <= 0 || ow <= 0) throw ShapeError("transposed_conv2d: non-positive output extent");
  return transposed_conv2d(input, weight, stride, padding, static_cast<std::size_t>(oh),
                           static_cast<std::size_t>(ow));
}

// Gradient of conv2d with respect to its weight: correlates input (N,C,H,W)
// with output-gradient (N,O,Ho,Wo), giving (O,C,kh,kw).
inline Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kernel_h,
                                 std::size_t kernel_w, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || grad_out.rank() != 4 || input.dim(0) != grad_out.dim(0)) {
    throw ShapeError("conv2d_weight_grad: batch mismatch");
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = grad_out.dim(1), ho = grad_out.dim(2), wo = grad_out.dim(3);
  const ConvGeometry geo{kernel_h, kernel_w, stride, padding};
  if (geo.out_extent(h, kernel_h) != ho || geo.out_extent(w, kernel_w) != wo) {
    throw ShapeError("conv2d_weight_grad: spatial extents inconsistent");
  }
  const std::size_t ckk = c * kernel_h * kernel_w, l = ho * wo;
  std::vector<double> out(o * ckk, 0.0);
  const bool direct = detail::is_identity_unfold(geo);
  std::vector<double> cols(direct ? 0 : ckk * l);
  const double* x = input.vec().data();
  const double* gy = grad_out.vec().data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x + b * c * h * w;
    const double* colp = xb;
    if (!direct) {
      detail::im2col(xb, c, h, w, geo, ho, wo, cols.data());
      colp = cols.data();
    }
    detail::gemm(false, true, o, ckk, l, gy + b * o * l, colp, 1.0, out.data());
  }
  return make_op({o, c, kernel_h, kernel_w}, std::move(out), {input, grad_out},
                 [stride, padding, h, w](const Tensor& g, const std::vector<Tensor>& in,
                                         const std::vector<bool>& need) {
                   Tensor gx, gy2;
                   if (need[0]) gx = transposed_conv2d(in[1], g, stride, padding, h, w);
                   if (need[1]) gy2 = conv2d(in[0], g, stride, padding);
                   return std::vector<Tensor>{gx, gy2};
                 },
                 "conv2d_weight_grad");
}

// Adds a per-channel bias (C) to an NCHW tensor.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 4 || bias.numel() != x.dim(1)) throw ShapeError("add_channel_bias: mismatch");
  return add(x, broadcast_to(reshape(bias, {1, bias.numel(), 1, 1}), x.shape()));
}

inline Tensor sum_pool(const Tensor& input, std::size_t factor);

// Replicates each pixel factor x factor times.
inline Tensor nearest_upsample(const Tensor& input, std::size_t factor) {
  if (factor < 1) throw ShapeError("nearest_upsample: factor must be >= 1");
  if (input.rank() != 4) throw ShapeError("nearest_upsample expects NCHW");
  if (factor == 1) return input;
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(planes * oh * ow);
  const double* src = input.vec().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* sp = src + p * h * w;
    double* dp = out.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const double* srow = sp + (i / factor) * w;
      double* drow = dp + i * ow;
      for (std::size_t j = 0; j < ow; ++j) drow[j] = srow[j / factor];
    }
  }
  return make_op({input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
                 [factor](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{sum_pool(g, factor)};
                 },
                 "nearest_upsample");
}

// Sums non-overlapping factor x factor blocks; the adjoint of nearest_upsample.
inline Tensor sum_pool(const Tensor& input, std::size_t factor) {
  if (input.rank() != 4 || factor == 0 || input.dim(2) % factor || input.dim(3) % factor) {
    throw ShapeError("sum_pool: extents of " + to_string(input.shape()) +
                     " not divisible by factor");
  }
  if (factor == 1) return input;
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / factor, ow = w / factor;
  std::vector<double> out(planes * oh * ow, 0.0);
  const double* src = input.vec().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* sp = src + p * h * w;
    double* dp = out.data() + p * oh * ow;
    for (std::size_t i = 0; i < h; ++i) {
      double* drow = dp + (i / factor) * ow;
      const double* srow = sp + i * w;
      for (std::size_t j = 0; j < w; ++j) drow[j / factor] += srow[j];
    }
  }
  return make_op({input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
                 [factor](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{nearest_upsample(g, factor)};
                 },
                 "sum_pool");
}

inline Tensor avg_pool(const Tensor& input, std::size_t factor) {
  return scale(sum_pool(input, factor), 1.0 / static_cast<double>(factor * factor));
}

}  // namespace grnn
