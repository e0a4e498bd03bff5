#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dfkd/tensor.hpp"

// Raw numeric kernels shared by the autodiff tape and the plain inference
// path. Everything here is single-threaded with a fixed reduction order, so
// results are bitwise reproducible. Matrix products go through Eigen.

namespace dfkd::kernels {

enum class Padding { same, valid };

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

/// C(M,N) = A(M,K) * B(K,N), or += when accumulate.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate = false) {
  ECMap<T> A(a, m, k), B(b, k, n);
  EMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

/// C(M,N) = A(K,M)^T * B(K,N), or += when accumulate.
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  ECMap<T> A(a, k, m), B(b, k, n);
  EMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

/// C(M,N) = A(M,K) * B(N,K)^T, or += when accumulate.
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  ECMap<T> A(a, m, k), B(b, n, k);
  EMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

struct Conv2dDims {
  std::size_t n, in_h, in_w, cin;
  std::size_t kh, kw, cout;
  std::size_t stride;
  std::size_t out_h, out_w;
  std::ptrdiff_t pad_h_lo, pad_w_lo;
};

/// Resolves output extents and padding. "same" pads symmetrically with the
/// extra element on the high side; "valid" requires kernel <= input.
template <class T>
Conv2dDims conv2d_dims(const TensorT<T>& input, const TensorT<T>& kernel,
                       std::size_t stride, Padding pad) {
  if (input.rank() != 4)
    throw std::invalid_argument("conv2d: input must be NHWC, got " +
                                input.shape_str());
  if (kernel.rank() != 4)
    throw std::invalid_argument("conv2d: kernel must be KhKwCinCout, got " +
                                kernel.shape_str());
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  Conv2dDims d;
  d.n = input.dim(0);
  d.in_h = input.dim(1);
  d.in_w = input.dim(2);
  d.cin = input.dim(3);
  d.kh = kernel.dim(0);
  d.kw = kernel.dim(1);
  d.cout = kernel.dim(3);
  d.stride = stride;
  if (kernel.dim(2) != d.cin)
    throw std::invalid_argument(
        "conv2d: input channel extent " + std::to_string(d.cin) +
        " does not match kernel Cin extent " + std::to_string(kernel.dim(2)));
  if (pad == Padding::same) {
    d.out_h = (d.in_h + stride - 1) / stride;
    d.out_w = (d.in_w + stride - 1) / stride;
    std::size_t tot_h = std::max<std::ptrdiff_t>(
        0, std::ptrdiff_t((d.out_h - 1) * stride + d.kh) - std::ptrdiff_t(d.in_h));
    std::size_t tot_w = std::max<std::ptrdiff_t>(
        0, std::ptrdiff_t((d.out_w - 1) * stride + d.kw) - std::ptrdiff_t(d.in_w));
    d.pad_h_lo = std::ptrdiff_t(tot_h / 2);
    d.pad_w_lo = std::ptrdiff_t(tot_w / 2);
  } else {
    if (d.in_h < d.kh || d.in_w < d.kw)
      throw std::invalid_argument("conv2d: valid padding needs input " +
                                  input.shape_str() + " >= kernel " +
                                  kernel.shape_str());
    d.out_h = (d.in_h - d.kh) / stride + 1;
    d.out_w = (d.in_w - d.kw) / stride + 1;
    d.pad_h_lo = 0;
    d.pad_w_lo = 0;
  }
  return d;
}

/// Gathers the receptive fields of `rows` consecutive output pixels starting
/// at flat output index `row0` of image `n` into a (rows x kh*kw*cin) patch
/// matrix whose column order matches the KhKwCinCout kernel layout.
template <class T>
void im2col(const TensorT<T>& input, const Conv2dDims& d, std::size_t n,
            std::size_t row0, std::size_t rows, T* col) {
  const std::size_t k = d.kh * d.kw * d.cin;
  const T* in = input.data.data() + n * d.in_h * d.in_w * d.cin;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t oh = (row0 + r) / d.out_w;
    const std::size_t ow = (row0 + r) % d.out_w;
    T* dst = col + r * k;
    for (std::size_t kh = 0; kh < d.kh; ++kh) {
      const std::ptrdiff_t ih = std::ptrdiff_t(oh * d.stride + kh) - d.pad_h_lo;
      for (std::size_t kw = 0; kw < d.kw; ++kw) {
        const std::ptrdiff_t iw = std::ptrdiff_t(ow * d.stride + kw) - d.pad_w_lo;
        T* cell = dst + (kh * d.kw + kw) * d.cin;
        if (ih < 0 || ih >= std::ptrdiff_t(d.in_h) || iw < 0 ||
            iw >= std::ptrdiff_t(d.in_w)) {
          std::fill(cell, cell + d.cin, T(0));
        } else {
          const T* src = in + (std::size_t(ih) * d.in_w + std::size_t(iw)) * d.cin;
          std::copy(src, src + d.cin, cell);
        }
      }
    }
  }
}

/// Scatter-add of a patch matrix back into the input gradient.
template <class T>
void col2im_add(const T* col, const Conv2dDims& d, std::size_t n,
                std::size_t row0, std::size_t rows, TensorT<T>& grad_in) {
  const std::size_t k = d.kh * d.kw * d.cin;
  T* gi = grad_in.data.data() + n * d.in_h * d.in_w * d.cin;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t oh = (row0 + r) / d.out_w;
    const std::size_t ow = (row0 + r) % d.out_w;
    const T* src = col + r * k;
    for (std::size_t kh = 0; kh < d.kh; ++kh) {
      const std::ptrdiff_t ih = std::ptrdiff_t(oh * d.stride + kh) - d.pad_h_lo;
      if (ih < 0 || ih >= std::ptrdiff_t(d.in_h)) continue;
      for (std::size_t kw = 0; kw < d.kw; ++kw) {
        const std::ptrdiff_t iw = std::ptrdiff_t(ow * d.stride + kw) - d.pad_w_lo;
        if (iw < 0 || iw >= std::ptrdiff_t(d.in_w)) continue;
        T* dst = gi + (std::size_t(ih) * d.in_w + std::size_t(iw)) * d.cin;
        const T* cell = src + (kh * d.kw + kw) * d.cin;
        for (std::size_t c = 0; c < d.cin; ++c) dst[c] += cell[c];
      }
    }
  }
}

/// Images per im2col group, sized to keep the patch scratch near 16 MB while
/// giving the GEMM enough rows to run at full speed.
inline std::size_t conv_group_images(const Conv2dDims& d) {
  const std::size_t k = d.kh * d.kw * d.cin;
  const std::size_t per_image = d.out_h * d.out_w * k;
  std::size_t g = (std::size_t(4) << 20) / std::max<std::size_t>(1, per_image);
  return std::clamp<std::size_t>(g, 1, d.n);
}

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& kernel,
                          const Conv2dDims& d) {
  TensorT<T> out({d.n, d.out_h, d.out_w, d.cout});
  const std::size_t k = d.kh * d.kw * d.cin;
  const std::size_t rows = d.out_h * d.out_w;
  const std::size_t group = conv_group_images(d);
  std::vector<T> col(group * rows * k);
  for (std::size_t n0 = 0; n0 < d.n; n0 += group) {
    const std::size_t g = std::min(group, d.n - n0);
    for (std::size_t i = 0; i < g; ++i)
      im2col(input, d, n0 + i, 0, rows, col.data() + i * rows * k);
    gemm(col.data(), kernel.data.data(),
         out.data.data() + n0 * rows * d.cout, g * rows, k, d.cout);
  }
  return out;
}

template <class T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernel,
                     const TensorT<T>& grad_out, const Conv2dDims& d,
                     TensorT<T>* grad_in, TensorT<T>* grad_kernel) {
  const std::size_t k = d.kh * d.kw * d.cin;
  const std::size_t rows = d.out_h * d.out_w;
  const std::size_t group = conv_group_images(d);
  std::vector<T> col(group * rows * k);
  for (std::size_t n0 = 0; n0 < d.n; n0 += group) {
    const std::size_t g = std::min(group, d.n - n0);
    const T* go = grad_out.data.data() + n0 * rows * d.cout;
    if (grad_kernel) {
      for (std::size_t i = 0; i < g; ++i)
        im2col(input, d, n0 + i, 0, rows, col.data() + i * rows * k);
      gemm_tn(col.data(), go, grad_kernel->data.data(), k, g * rows, d.cout,
              /*accumulate=*/true);
    }
    if (grad_in) {
      gemm_nt(go, kernel.data.data(), col.data(), g * rows, d.cout, k);
      for (std::size_t i = 0; i < g; ++i)
        col2im_add(col.data() + i * rows * k, d, n0 + i, 0, rows, *grad_in);
    }
  }
}

template <class T>
TensorT<T> upsample2x_forward(const TensorT<T>& x) {
  if (x.rank() != 4)
    throw std::invalid_argument("upsample2x: input must be NHWC, got " +
                                x.shape_str());
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  TensorT<T> out({n, 2 * h, 2 * w, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xw = 0; xw < 2 * w; ++xw) {
        const T* src = &x.at4(i, y / 2, xw / 2, 0);
        T* dst = &out.at4(i, y, xw, 0);
        std::copy(src, src + c, dst);
      }
  return out;
}

template <class T>
void upsample2x_backward(const TensorT<T>& grad_out, TensorT<T>& grad_in) {
  const std::size_t n = grad_in.dim(0), h = grad_in.dim(1), w = grad_in.dim(2),
                    c = grad_in.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xw = 0; xw < 2 * w; ++xw) {
        const T* src = &grad_out.at4(i, y, xw, 0);
        T* dst = &grad_in.at4(i, y / 2, xw / 2, 0);
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
}

template <class T>
TensorT<T> avgpool2x2_forward(const TensorT<T>& x) {
  if (x.rank() != 4 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
    throw std::invalid_argument("avgpool2x2: input must be NHWC with even H,W, got " +
                                x.shape_str());
  const std::size_t n = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2, c = x.dim(3);
  TensorT<T> out({n, h, w, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xw = 0; xw < w; ++xw)
        for (std::size_t ch = 0; ch < c; ++ch)
          out.at4(i, y, xw, ch) =
              (x.at4(i, 2 * y, 2 * xw, ch) + x.at4(i, 2 * y, 2 * xw + 1, ch) +
               x.at4(i, 2 * y + 1, 2 * xw, ch) +
               x.at4(i, 2 * y + 1, 2 * xw + 1, ch)) /
              T(4);
  return out;
}

template <class T>
void avgpool2x2_backward(const TensorT<T>& grad_out, TensorT<T>& grad_in) {
  const std::size_t n = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2),
                    c = grad_out.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xw = 0; xw < w; ++xw)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T g = grad_out.at4(i, y, xw, ch) / T(4);
          grad_in.at4(i, 2 * y, 2 * xw, ch) += g;
          grad_in.at4(i, 2 * y, 2 * xw + 1, ch) += g;
          grad_in.at4(i, 2 * y + 1, 2 * xw, ch) += g;
          grad_in.at4(i, 2 * y + 1, 2 * xw + 1, ch) += g;
        }
}

template <class T>
TensorT<T> global_avg_pool_forward(const TensorT<T>& x) {
  if (x.rank() != 4)
    throw std::invalid_argument("global_avg_pool: input must be NHWC, got " +
                                x.shape_str());
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  TensorT<T> out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = x.data.data() + i * hw * c;
    T* dst = out.data.data() + i * c;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[p * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] /= T(hw);
  }
  return out;
}

template <class T>
void global_avg_pool_backward(const TensorT<T>& grad_out, TensorT<T>& grad_in) {
  const std::size_t n = grad_in.dim(0), hw = grad_in.dim(1) * grad_in.dim(2),
                    c = grad_in.dim(3);
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = grad_out.data.data() + i * c;
    T* dst = grad_in.data.data() + i * hw * c;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) dst[p * c + ch] += src[ch] / T(hw);
  }
}

/// Per-channel mean over N,H,W of an NHWC tensor.
template <class T>
TensorT<T> channel_mean(const TensorT<T>& x) {
  if (x.rank() != 4)
    throw std::invalid_argument("channel_mean: input must be NHWC, got " +
                                x.shape_str());
  const std::size_t m = x.dim(0) * x.dim(1) * x.dim(2), c = x.dim(3);
  if (m == 0) throw std::invalid_argument("channel_mean: zero batch size");
  TensorT<T> out({c});
  // Accumulate in double so f32 batch moments stay accurate.
  std::vector<double> acc(c, 0.0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += double(x.data[p * c + ch]);
  for (std::size_t ch = 0; ch < c; ++ch) out.data[ch] = T(acc[ch] / double(m));
  return out;
}

/// Per-channel biased (divide-by-n) variance over N,H,W.
template <class T>
TensorT<T> channel_var(const TensorT<T>& x, const TensorT<T>& mean) {
  const std::size_t m = x.dim(0) * x.dim(1) * x.dim(2), c = x.dim(3);
  if (m == 0) throw std::invalid_argument("channel_var: zero batch size");
  TensorT<T> out({c});
  std::vector<double> acc(c, 0.0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = double(x.data[p * c + ch]) - double(mean.data[ch]);
      acc[ch] += d * d;
    }
  for (std::size_t ch = 0; ch < c; ++ch) out.data[ch] = T(acc[ch] / double(m));
  return out;
}

}  // namespace dfkd::kernels
