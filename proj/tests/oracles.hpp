#pragma once

// Slow, direct reference implementations used to pin down the library's
// numbers. Everything here works in double and loops over definitions.

#include <cstddef>
#include <functional>
#include <vector>

#include "wmnet/random.hpp"
#include "wmnet/tensor.hpp"

namespace oracle {

using wmnet::Shape;
using wmnet::Tensor;

Tensor uniform(const Shape& shape, wmnet::Rng& rng, float lo = -1.0f, float hi = 1.0f);

/// Keeps |x| >= margin so relu kinks sit far from finite-difference probes.
Tensor away_from_zero(const Shape& shape, wmnet::Rng& rng, float margin = 0.05f);

/// "Same" padding before the first row/column for a given geometry.
std::size_t same_pad_before(std::size_t in, std::size_t out, std::size_t k, std::size_t stride);

/// Direct summation, zero padding, kernels [out,in,k,k]. Returns NCHW values.
std::vector<double> conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                           std::size_t stride, std::size_t pad_top, std::size_t pad_left,
                           std::size_t out_h, std::size_t out_w);

/// Transposed convolution as (dense conv2d matrix)^T * x for a single image,
/// kernels [out,in,k,k], output [out, h*stride, w*stride].
std::vector<double> conv_transpose2d_matrix(const Tensor& input, const Tensor& kernels,
                                            std::size_t stride);

/// Mean over the in-bounds cells of each 2x2 window anchored at (y,x).
std::vector<double> avgpool2x2(const Tensor& input);

struct Bands {
  std::vector<double> ll, lh, hl, hh;
};
/// One-level Haar analysis by the explicit 2x2 block formulas.
Bands haar_blocks(const Tensor& channel);

/// Corner-aligned bilinear sample of channel c at fractional (y, x).
double bilinear(const Tensor& image, std::size_t c, double y, double x);

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

double weighted_sum(const Tensor& t, const Tensor& weights);

/// Central difference of `f` with respect to entry `index` of `x`.
double central_difference(Tensor& x, std::size_t index, double step,
                          const std::function<double()>& f);

}  // namespace oracle
