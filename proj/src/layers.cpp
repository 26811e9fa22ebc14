#include "wmnet/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wmnet/error.hpp"

namespace wmnet {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + " expects an NCHW tensor, got " + shape_to_string(t.shape()));
  }
}

void check_conv_params(const ConvLayerParams& params) {
  const Shape& k = params.kernels.shape();
  if (k.size() != 4 || k[2] != k[3]) {
    throw Error(ErrorKind::ShapeMismatch,
                "conv kernels must be [out,in,k,k], got " + shape_to_string(k));
  }
  if (params.bias.shape() != Shape{k[0]}) {
    throw Error(ErrorKind::ShapeMismatch, "conv bias " + shape_to_string(params.bias.shape()) +
                                              " does not match kernels " + shape_to_string(k));
  }
}

void check_conv_input(const Tensor& input, std::size_t channels, const ConvLayerParams& params,
                      const char* what) {
  require_rank4(input, what);
  if (input.dim(1) != channels) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": input " + shape_to_string(input.shape()) +
                    " has " + std::to_string(input.dim(1)) + " channels but kernels " +
                    shape_to_string(params.kernels.shape()) + " expect " +
                    std::to_string(channels));
  }
}

// Output rows [row_begin, row_end) of one convolution, processed together so
// the patch matrix stays cache-resident.
struct RowBand {
  std::size_t row_begin;
  std::size_t row_end;
};

std::vector<RowBand> row_bands(const ConvGeometry& g, std::size_t patch) {
  constexpr std::size_t kTileFloats = 1u << 18;
  const std::size_t rows = std::max<std::size_t>(1, kTileFloats / (patch * g.out_w));
  std::vector<RowBand> bands;
  for (std::size_t r = 0; r < g.out_h; r += rows) bands.push_back({r, std::min(r + rows, g.out_h)});
  return bands;
}

// Output columns [begin, end) whose input column ox * stride + offset lies
// inside [0, w).
struct ColumnRange {
  std::size_t begin;
  std::size_t end;
};

ColumnRange valid_columns(std::size_t out_w, std::size_t w, std::size_t stride, long offset) {
  const long s = static_cast<long>(stride);
  const long first = offset >= 0 ? 0 : (-offset + s - 1) / s;
  const long last = (static_cast<long>(w) - 1 - offset) / s;  // may be negative
  const long begin = std::min<long>(first, static_cast<long>(out_w));
  const long end = std::clamp<long>(last + 1, begin, static_cast<long>(out_w));
  return {static_cast<std::size_t>(begin), static_cast<std::size_t>(end)};
}

// Unfolds output rows `band` of one CHW image into a [C*k*k, rows*out_w] patch matrix.
void im2col(const float* image, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, const ConvGeometry& g, RowBand band, float* col) {
  const std::size_t cols = (band.row_end - band.row_begin) * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* plane = image + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = col + ((c * k + ky) * k + kx) * cols;
        const long offset = static_cast<long>(kx) - static_cast<long>(g.pad_left);
        const ColumnRange r = valid_columns(g.out_w, w, stride, offset);
        for (std::size_t oy = band.row_begin; oy < band.row_end; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(g.pad_top);
          float* dst = row + (oy - band.row_begin) * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          std::fill(dst, dst + r.begin, 0.0f);
          std::fill(dst + r.end, dst + g.out_w, 0.0f);
          const float* src = plane + static_cast<std::size_t>(iy) * w;
          if (r.begin == r.end) continue;
          const std::size_t first = static_cast<std::size_t>(static_cast<long>(r.begin * stride) + offset);
          if (stride == 1) {
            std::copy(src + first, src + first + (r.end - r.begin), dst + r.begin);
          } else {
            for (std::size_t ox = r.begin, ix = first; ox < r.end; ++ox, ix += stride) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a patch matrix back onto a CHW image (accumulating).
void col2im(const float* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, const ConvGeometry& g, RowBand band, float* image) {
  const std::size_t cols = (band.row_end - band.row_begin) * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    float* plane = image + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = col + ((c * k + ky) * k + kx) * cols;
        const long offset = static_cast<long>(kx) - static_cast<long>(g.pad_left);
        const ColumnRange r = valid_columns(g.out_w, w, stride, offset);
        for (std::size_t oy = band.row_begin; oy < band.row_end; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(g.pad_top);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          if (r.begin == r.end) continue;
          const std::size_t first = static_cast<std::size_t>(static_cast<long>(r.begin * stride) + offset);
          float* dst = plane + static_cast<std::size_t>(iy) * w + first;
          const float* src = row + (oy - band.row_begin) * g.out_w + r.begin;
          const std::size_t count = r.end - r.begin;
          if (stride == 1) {
            for (std::size_t j = 0; j < count; ++j) dst[j] += src[j];
          } else {
            for (std::size_t j = 0; j < count; ++j) dst[j * stride] += src[j];
          }
        }
      }
    }
  }
}

// Sum of f(j) for j < n in double. Independent lanes let the loop vectorize.
template <typename F>
double lane_sum(std::size_t n, F f) {
  constexpr std::size_t kLanes = 16;
  double acc[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += f(j + l);
  double s = 0.0;
  for (; j < n; ++j) s += f(j);
  for (double a : acc) s += a;
  return s;
}

// Layers with only a few filters are convolved directly: their patch matrix
// would cost far more to build than the arithmetic it feeds.
constexpr std::size_t kDirectMaxFilters = 4;

// Calls f(out, in, count) for every output row segment that kernel tap
// (ky, kx) connects to in-bounds input: output offset `out` pairs with input
// offsets in, in + stride, ... for `count` positions.
template <typename F>
void for_each_tap_row(const ConvGeometry& g, std::size_t h, std::size_t w, std::size_t stride,
                      std::size_t ky, std::size_t kx, F f) {
  const long offset = static_cast<long>(kx) - static_cast<long>(g.pad_left);
  const ColumnRange r = valid_columns(g.out_w, w, stride, offset);
  if (r.begin == r.end) return;
  const std::size_t first = static_cast<std::size_t>(static_cast<long>(r.begin * stride) + offset);
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(g.pad_top);
    if (iy < 0 || iy >= static_cast<long>(h)) continue;
    f(oy * g.out_w + r.begin, static_cast<std::size_t>(iy) * w + first, r.end - r.begin);
  }
}

// One row segment of the direct backward pass: scatters wv * dy into the
// input gradient and returns sum(dy * x). Stride is a template argument when
// it is 1 so the loop vectorizes; 0 means "use `stride`".
template <std::size_t kStride>
double tap_row_backward(const float* __restrict dy, const float* __restrict x,
                        float* __restrict dx, std::size_t n, float wv, std::size_t stride = 1) {
  const std::size_t s = kStride == 0 ? stride : kStride;
  constexpr std::size_t kLanes = 16;
  float part[kLanes] = {};  // a row is short enough to sum in float
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) {
      dx[(j + l) * s] += wv * dy[j + l];
      part[l] += dy[j + l] * x[(j + l) * s];
    }
  double acc = 0.0;
  for (; j < n; ++j) {
    dx[j * s] += wv * dy[j];
    acc += static_cast<double>(dy[j]) * x[j * s];
  }
  for (float v : part) acc += v;
  return acc;
}

void direct_conv(const float* x, std::size_t c, std::size_t h, std::size_t w,
                 const Tensor& kernels, std::size_t stride, const ConvGeometry& g, float* y) {
  const std::size_t oc = kernels.dim(0), k = kernels.dim(2), plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const float wv = kernels[((o * c + ch) * k + ky) * k + kx];
          const float* src = x + ch * h * w;
          float* dst = y + o * plane;
          for_each_tap_row(g, h, w, stride, ky, kx, [&](std::size_t out, std::size_t in, std::size_t n) {
            if (stride == 1) {
              for (std::size_t j = 0; j < n; ++j) dst[out + j] += wv * src[in + j];
            } else {
              for (std::size_t j = 0; j < n; ++j) dst[out + j] += wv * src[in + j * stride];
            }
          });
        }
}

void direct_conv_backward(const float* x, std::size_t c, std::size_t h, std::size_t w,
                          const Tensor& kernels, std::size_t stride, const ConvGeometry& g,
                          const float* gy, float* gx, float* gk) {
  const std::size_t oc = kernels.dim(0), k = kernels.dim(2), plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t tap = ((o * c + ch) * k + ky) * k + kx;
          const float wv = kernels[tap];
          const float* src = x + ch * h * w;
          float* dsrc = gx + ch * h * w;
          const float* dy = gy + o * plane;
          double acc = 0.0;
          for_each_tap_row(g, h, w, stride, ky, kx, [&](std::size_t out, std::size_t in, std::size_t n) {
            acc += stride == 1 ? tap_row_backward<1>(dy + out, src + in, dsrc + in, n, wv)
                               : tap_row_backward<0>(dy + out, src + in, dsrc + in, n, wv, stride);
          });
          gk[tap] += static_cast<float>(acc);
        }
}

// Rearranges [out, in, k, k] kernels into the [out*k*k, in] matrix used by
// the transposed convolution (and back).
RowMatrix transpose_kernel_matrix(const Tensor& kernels) {
  const std::size_t out = kernels.dim(0), in = kernels.dim(1);
  const std::size_t kk = kernels.dim(2) * kernels.dim(3);
  RowMatrix m(out * kk, in);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t c = 0; c < in; ++c)
      for (std::size_t j = 0; j < kk; ++j) m(o * kk + j, c) = kernels[(o * in + c) * kk + j];
  return m;
}

void add_channel_bias(float* plane_data, std::size_t channels, std::size_t plane,
                      const Tensor& bias) {
  for (std::size_t c = 0; c < channels; ++c) {
    float* p = plane_data + c * plane;
    const float b = bias[c];
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

void accumulate_bias_grad(const float* grad, std::size_t channels, std::size_t plane,
                          Tensor& bias_grad) {
  for (std::size_t c = 0; c < channels; ++c) {
    const float* p = grad + c * plane;
    float s = 0.0f;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    bias_grad[c] += s;
  }
}

template <typename F>
Tensor map_elementwise(const Tensor& input, F f) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = f(input[i]);
  return out;
}

}  // namespace

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                           std::size_t stride, Padding padding) {
  if (stride == 0 || kernel == 0) {
    throw Error(ErrorKind::InvalidArgument, "kernel size and stride must be positive");
  }
  ConvGeometry g;
  if (padding == Padding::Valid) {
    if (in_h < kernel || in_w < kernel) {
      throw Error(ErrorKind::ShapeMismatch, "valid convolution input smaller than kernel");
    }
    g.out_h = (in_h - kernel) / stride + 1;
    g.out_w = (in_w - kernel) / stride + 1;
    return g;
  }
  g.out_h = (in_h + stride - 1) / stride;
  g.out_w = (in_w + stride - 1) / stride;
  const auto total = [&](std::size_t out, std::size_t in) -> std::size_t {
    const std::size_t need = (out - 1) * stride + kernel;
    return need > in ? need - in : 0;
  };
  g.pad_top = total(g.out_h, in_h) / 2;
  g.pad_left = total(g.out_w, in_w) / 2;
  return g;
}

Tensor conv2d(const Tensor& input, const ConvLayerParams& params, std::size_t stride,
              Padding padding) {
  check_conv_params(params);
  check_conv_input(input, params.in_channels(), params, "conv2d");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = params.kernel_size(), oc = params.out_channels();
  const ConvGeometry g = conv_geometry(h, w, k, stride, padding);
  const std::size_t patch = c * k * k, cols = g.out_h * g.out_w;

  Tensor out({n, oc, g.out_h, g.out_w});
  if (oc <= kDirectMaxFilters) {
    for (std::size_t i = 0; i < n; ++i) {
      float* y = out.data() + i * oc * cols;
      direct_conv(input.data() + i * c * h * w, c, h, w, params.kernels, stride, g, y);
      add_channel_bias(y, oc, cols, params.bias);
    }
    return out;
  }
  const auto bands = row_bands(g, patch);
  RowMatrix col;
  ConstMatrixMap weights(params.kernels.data(), oc, patch);
  for (std::size_t i = 0; i < n; ++i) {
    MatrixMap y(out.data() + i * oc * cols, oc, cols);
    for (const RowBand& band : bands) {
      const std::size_t width = (band.row_end - band.row_begin) * g.out_w;
      col.resize(patch, width);
      im2col(input.data() + i * c * h * w, c, h, w, k, stride, g, band, col.data());
      y.middleCols(band.row_begin * g.out_w, width).noalias() = weights * col;
    }
    add_channel_bias(y.data(), oc, cols, params.bias);
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvLayerParams& params, std::size_t stride,
                          Padding padding, const Tensor& grad_output) {
  check_conv_params(params);
  check_conv_input(input, params.in_channels(), params, "conv2d_backward");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = params.kernel_size(), oc = params.out_channels();
  const ConvGeometry g = conv_geometry(h, w, k, stride, padding);
  const std::size_t patch = c * k * k, cols = g.out_h * g.out_w;
  if (grad_output.shape() != Shape{n, oc, g.out_h, g.out_w}) {
    throw Error(ErrorKind::ShapeMismatch,
                "conv2d_backward: upstream gradient " + shape_to_string(grad_output.shape()) +
                    " vs output " + shape_to_string({n, oc, g.out_h, g.out_w}));
  }

  ConvGrads grads{Tensor(input.shape()), Tensor(params.kernels.shape()),
                  Tensor(params.bias.shape())};
  if (oc <= kDirectMaxFilters) {
    for (std::size_t i = 0; i < n; ++i) {
      const float* gy = grad_output.data() + i * oc * cols;
      direct_conv_backward(input.data() + i * c * h * w, c, h, w, params.kernels, stride, g, gy,
                           grads.input.data() + i * c * h * w, grads.kernels.data());
      accumulate_bias_grad(gy, oc, cols, grads.bias);
    }
    return grads;
  }
  const auto bands = row_bands(g, patch);
  RowMatrix col;
  RowMatrix col_grad;
  RowMatrix gy_band;
  ConstMatrixMap weights(params.kernels.data(), oc, patch);
  MatrixMap weight_grad(grads.kernels.data(), oc, patch);
  for (std::size_t i = 0; i < n; ++i) {
    ConstMatrixMap gy(grad_output.data() + i * oc * cols, oc, cols);
    for (const RowBand& band : bands) {
      const std::size_t width = (band.row_end - band.row_begin) * g.out_w;
      col.resize(patch, width);
      im2col(input.data() + i * c * h * w, c, h, w, k, stride, g, band, col.data());
      gy_band = gy.middleCols(band.row_begin * g.out_w, width);
      weight_grad.noalias() += gy_band * col.transpose();
      col_grad.noalias() = weights.transpose() * gy_band;
      col2im(col_grad.data(), c, h, w, k, stride, g, band, grads.input.data() + i * c * h * w);
    }
    accumulate_bias_grad(gy.data(), oc, cols, grads.bias);
  }
  return grads;
}

Tensor conv_transpose2d(const Tensor& input, const ConvLayerParams& params, std::size_t stride) {
  check_conv_params(params);
  check_conv_input(input, params.in_channels(), params, "conv_transpose2d");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = params.kernel_size(), oc = params.out_channels();
  const std::size_t oh = h * stride, ow = w * stride;
  const ConvGeometry g = conv_geometry(oh, ow, k, stride, Padding::Same);
  const std::size_t cols = h * w;

  Tensor out({n, oc, oh, ow});
  const RowMatrix kernel_matrix = transpose_kernel_matrix(params.kernels);
  const auto bands = row_bands(g, oc * k * k);
  RowMatrix col;
  for (std::size_t i = 0; i < n; ++i) {
    ConstMatrixMap x(input.data() + i * c * cols, c, cols);
    float* y = out.data() + i * oc * oh * ow;
    for (const RowBand& band : bands) {
      const std::size_t width = (band.row_end - band.row_begin) * g.out_w;
      col.noalias() = kernel_matrix * x.middleCols(band.row_begin * g.out_w, width);
      col2im(col.data(), oc, oh, ow, k, stride, g, band, y);
    }
    add_channel_bias(y, oc, oh * ow, params.bias);
  }
  return out;
}

ConvGrads conv_transpose2d_backward(const Tensor& input, const ConvLayerParams& params,
                                    std::size_t stride, const Tensor& grad_output) {
  check_conv_params(params);
  check_conv_input(input, params.in_channels(), params, "conv_transpose2d_backward");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = params.kernel_size(), oc = params.out_channels();
  const std::size_t oh = h * stride, ow = w * stride;
  if (grad_output.shape() != Shape{n, oc, oh, ow}) {
    throw Error(ErrorKind::ShapeMismatch, "conv_transpose2d_backward: upstream gradient " +
                                              shape_to_string(grad_output.shape()) +
                                              " vs output " + shape_to_string({n, oc, oh, ow}));
  }
  const ConvGeometry g = conv_geometry(oh, ow, k, stride, Padding::Same);
  const std::size_t cols = h * w, kk = k * k;

  ConvGrads grads{Tensor(input.shape()), Tensor(params.kernels.shape()),
                  Tensor(params.bias.shape())};
  const RowMatrix kernel_matrix = transpose_kernel_matrix(params.kernels);
  RowMatrix kernel_matrix_grad = RowMatrix::Zero(oc * kk, c);
  const auto bands = row_bands(g, oc * kk);
  RowMatrix col;
  for (std::size_t i = 0; i < n; ++i) {
    const float* gy = grad_output.data() + i * oc * oh * ow;
    ConstMatrixMap x(input.data() + i * c * cols, c, cols);
    MatrixMap gx(grads.input.data() + i * c * cols, c, cols);
    for (const RowBand& band : bands) {
      const std::size_t width = (band.row_end - band.row_begin) * g.out_w;
      col.resize(oc * kk, width);
      im2col(gy, oc, oh, ow, k, stride, g, band, col.data());
      gx.middleCols(band.row_begin * g.out_w, width).noalias() = kernel_matrix.transpose() * col;
      kernel_matrix_grad.noalias() += col * x.middleCols(band.row_begin * g.out_w, width).transpose();
    }
    accumulate_bias_grad(gy, oc, oh * ow, grads.bias);
  }
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < kk; ++j)
        grads.kernels[(o * c + ci) * kk + j] = kernel_matrix_grad(o * kk + j, ci);
  return grads;
}

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor({channels}, 1.0f);
  p.beta = Tensor({channels}, 0.0f);
  p.running_mean = Tensor({channels}, 0.0f);
  p.running_var = Tensor({channels}, 1.0f);
  return p;
}

Tensor batchnorm(const Tensor& input, const BatchNormParams& params, Mode mode,
                 BatchNormCache* cache) {
  require_rank4(input, "batchnorm");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (params.gamma.shape() != Shape{c} || params.beta.shape() != Shape{c} ||
      params.running_mean.shape() != Shape{c} || params.running_var.shape() != Shape{c}) {
    throw Error(ErrorKind::ShapeMismatch, "batchnorm parameters " +
                                              shape_to_string(params.gamma.shape()) +
                                              " do not match input " +
                                              shape_to_string(input.shape()));
  }
  if (!(params.epsilon > 0.0f)) {
    throw Error(ErrorKind::InvalidArgument, "batchnorm epsilon must be positive");
  }
  const std::size_t count = n * plane;
  if (mode == Mode::Train && count < 2) {
    throw Error(ErrorKind::InvalidArgument,
                "batchnorm train mode needs at least 2 values per channel, got " +
                    shape_to_string(input.shape()));
  }

  Tensor out(input.shape());
  Tensor inv_std({c});
  Tensor batch_mean({c}), batch_var({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    float mean = params.running_mean[ch];
    float var = params.running_var[ch];
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* p = input.data() + (i * c + ch) * plane;
        sum += lane_sum(plane, [p](std::size_t j) { return static_cast<double>(p[j]); });
      }
      const double m = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* p = input.data() + (i * c + ch) * plane;
        sq += lane_sum(plane, [p, m](std::size_t j) {
          const double d = p[j] - m;
          return d * d;
        });
      }
      mean = static_cast<float>(m);
      var = static_cast<float>(sq / static_cast<double>(count));
      batch_mean[ch] = mean;
      batch_var[ch] = var;
    }
    const float is = 1.0f / std::sqrt(var + params.epsilon);
    inv_std[ch] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = input.data() + (i * c + ch) * plane;
      float* q = out.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) q[j] = (p[j] - mean) * is;
    }
  }
  if (cache != nullptr) {
    cache->normalized = out;
    cache->inv_std = inv_std;
    cache->mode = mode;
    if (mode == Mode::Train) {
      cache->batch_mean = std::move(batch_mean);
      cache->batch_var = std::move(batch_var);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* q = out.data() + (i * c + ch) * plane;
      const float gamma = params.gamma[ch], beta = params.beta[ch];
      for (std::size_t j = 0; j < plane; ++j) q[j] = q[j] * gamma + beta;
    }
  return out;
}

void update_running_stats(BatchNormParams& params, const BatchNormCache& cache) {
  if (cache.mode != Mode::Train) {
    throw Error(ErrorKind::InvalidArgument, "running statistics need a train-mode cache");
  }
  require_same_shape(params.running_mean, cache.batch_mean, "update_running_stats");
  const float mom = params.momentum;
  for (std::size_t ch = 0; ch < cache.batch_mean.size(); ++ch) {
    params.running_mean[ch] = mom * params.running_mean[ch] + (1.0f - mom) * cache.batch_mean[ch];
    params.running_var[ch] = mom * params.running_var[ch] + (1.0f - mom) * cache.batch_var[ch];
  }
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormParams& params,
                                  const Tensor& grad_output) {
  require_same_shape(cache.normalized, grad_output, "batchnorm_backward");
  const std::size_t n = grad_output.dim(0), c = grad_output.dim(1);
  const std::size_t plane = grad_output.dim(2) * grad_output.dim(3);
  const double count = static_cast<double>(n * plane);
  BatchNormGrads grads{Tensor(grad_output.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* g = grad_output.data() + (i * c + ch) * plane;
      const float* x = cache.normalized.data() + (i * c + ch) * plane;
      sum_g += lane_sum(plane, [g](std::size_t j) { return static_cast<double>(g[j]); });
      sum_gx += lane_sum(plane, [g, x](std::size_t j) { return static_cast<double>(g[j]) * x[j]; });
    }
    grads.beta[ch] = static_cast<float>(sum_g);
    grads.gamma[ch] = static_cast<float>(sum_gx);
    const float scale = params.gamma[ch] * cache.inv_std[ch];
    const float mean_g = static_cast<float>(sum_g / count);
    const float mean_gx = static_cast<float>(sum_gx / count);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      const float* g = grad_output.data() + off;
      const float* x = cache.normalized.data() + off;
      float* gx = grads.input.data() + off;
      if (cache.mode == Mode::Train) {
        for (std::size_t j = 0; j < plane; ++j) gx[j] = scale * (g[j] - mean_g - x[j] * mean_gx);
      } else {
        for (std::size_t j = 0; j < plane; ++j) gx[j] = scale * g[j];
      }
    }
  }
  return grads;
}

Tensor relu(const Tensor& input) {
  // NaN passes through so divergence surfaces in the loss check.
  return map_elementwise(input, [](float x) { return x < 0.0f ? 0.0f : x; });
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require_same_shape(input, grad_output, "relu_backward");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input[i] > 0.0f ? grad_output[i] : 0.0f;
  return g;
}

Tensor tanh(const Tensor& input) {
  return map_elementwise(input, [](float x) { return std::tanh(x); });
}

Tensor tanh_backward(const Tensor& output, const Tensor& grad_output) {
  require_same_shape(output, grad_output, "tanh_backward");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_output[i] * (1.0f - output[i] * output[i]);
  return g;
}

Tensor sigmoid(const Tensor& input) {
  return map_elementwise(input, [](float x) {
    // Branch keeps exp() from overflowing for large |x|.
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
  });
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output) {
  require_same_shape(output, grad_output, "sigmoid_backward");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_output[i] * output[i] * (1.0f - output[i]);
  return g;
}

Tensor avgpool2d(const Tensor& input) {
  require_rank4(input, "avgpool2d");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  Tensor out(input.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = input.data() + p * h * w;
    float* dst = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const bool down = y + 1 < h;
      for (std::size_t x = 0; x < w; ++x) {
        const bool right = x + 1 < w;
        float s = src[y * w + x];
        float cells = 1.0f;
        if (right) { s += src[y * w + x + 1]; cells += 1.0f; }
        if (down) { s += src[(y + 1) * w + x]; cells += 1.0f; }
        if (down && right) { s += src[(y + 1) * w + x + 1]; cells += 1.0f; }
        dst[y * w + x] = s / cells;
      }
    }
  }
  return out;
}

Tensor avgpool2d_backward(const Tensor& grad_output) {
  require_rank4(grad_output, "avgpool2d_backward");
  const std::size_t planes = grad_output.dim(0) * grad_output.dim(1);
  const std::size_t h = grad_output.dim(2), w = grad_output.dim(3);
  Tensor g(grad_output.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = grad_output.data() + p * h * w;
    float* dst = g.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const bool down = y + 1 < h;
      for (std::size_t x = 0; x < w; ++x) {
        const bool right = x + 1 < w;
        const float cells = 1.0f + right + down + (down && right);
        const float share = src[y * w + x] / cells;
        dst[y * w + x] += share;
        if (right) dst[y * w + x + 1] += share;
        if (down) dst[(y + 1) * w + x] += share;
        if (down && right) dst[(y + 1) * w + x + 1] += share;
      }
    }
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw Error(ErrorKind::ShapeMismatch, "concat_channels: " + shape_to_string(a.shape()) +
                                              " vs " + shape_to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    float* dst = out.data() + i * (ca + cb) * plane;
    std::copy_n(a.data() + i * ca * plane, ca * plane, dst);
    std::copy_n(b.data() + i * cb * plane, cb * plane, dst + ca * plane);
  }
  return out;
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t count) {
  require_rank4(input, "slice_channels");
  if (count == 0 || begin + count > input.dim(1)) {
    throw Error(ErrorKind::InvalidArgument,
                "slice_channels: range [" + std::to_string(begin) + "," +
                    std::to_string(begin + count) + ") outside " + shape_to_string(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor out({n, count, input.dim(2), input.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(input.data() + (i * c + begin) * plane, count * plane,
                out.data() + i * count * plane);
  }
  return out;
}

}  // namespace wmnet
