#pragma once

// Forward and vector-Jacobian kernels for the layer primitives of the
// watermarking network. All image-like tensors are NCHW.

#include <cstddef>

#include "wmnet/tensor.hpp"

namespace wmnet {

enum class Padding { Same, Valid };
enum class Mode { Train, Infer };

struct ConvLayerParams {
  Tensor kernels;  // [out, in, k, k]
  Tensor bias;     // [out]

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t kernel_size() const { return kernels.dim(2); }
};

struct ConvGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-3f;
  float momentum = 0.99f;

  static BatchNormParams identity(std::size_t channels);
};

// Saved by the forward pass; everything the backward pass needs.
struct BatchNormCache {
  Tensor normalized;
  Tensor inv_std;     // [C]
  Tensor batch_mean;  // [C], train mode only
  Tensor batch_var;   // [C], train mode only
  Mode mode = Mode::Infer;
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

/// Output geometry of a strided window. "Same" padding yields ceil(n/stride)
/// outputs, with the odd padding cell going to the bottom/right.
struct ConvGeometry {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;
};
ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                           std::size_t stride, Padding padding);

Tensor conv2d(const Tensor& input, const ConvLayerParams& params, std::size_t stride,
              Padding padding);
ConvGrads conv2d_backward(const Tensor& input, const ConvLayerParams& params, std::size_t stride,
                          Padding padding, const Tensor& grad_output);

// Transposed convolution: the adjoint of a "same" conv2d whose kernel is
// params.kernels with its first two axes swapped. Output is stride x input.
Tensor conv_transpose2d(const Tensor& input, const ConvLayerParams& params, std::size_t stride);
ConvGrads conv_transpose2d_backward(const Tensor& input, const ConvLayerParams& params,
                                    std::size_t stride, const Tensor& grad_output);

/// Train mode normalizes with batch statistics (reported through `cache`);
/// infer mode only reads the running estimates. Running statistics are
/// folded in separately by update_running_stats so a forward pass never
/// mutates parameters.
Tensor batchnorm(const Tensor& input, const BatchNormParams& params, Mode mode,
                 BatchNormCache* cache = nullptr);
void update_running_stats(BatchNormParams& params, const BatchNormCache& cache);
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormParams& params,
                                  const Tensor& grad_output);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);
Tensor tanh(const Tensor& input);
Tensor tanh_backward(const Tensor& output, const Tensor& grad_output);
Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output);

// 2x2 window, stride 1, size preserving; windows hanging off the bottom or
// right edge average only the cells that exist.
Tensor avgpool2d(const Tensor& input);
Tensor avgpool2d_backward(const Tensor& grad_output);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t count);

}  // namespace wmnet
