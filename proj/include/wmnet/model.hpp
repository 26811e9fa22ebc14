#pragma once

// The fixed eleven-convolution watermarking network:
//
//   host band -> conv64 ----------------------------------+
//                                                         concat -> 3 x {conv64, BN, ReLU}
//   256 bits -> 16x16 -> 3 x {convT s2, BN, ReLU, avgpool} +       -> conv1 -> tanh
//
//   (attacked) band -> {conv128 s2, BN, ReLU} -> {conv256 s2, BN, ReLU}
//                   -> {conv1 s2} -> sigmoid -> 16x16 soft bits

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wmnet/layers.hpp"
#include "wmnet/random.hpp"
#include "wmnet/tensor.hpp"
#include "wmnet/wavelet.hpp"

namespace wmnet {

inline constexpr std::size_t kWatermarkLength = 256;
inline constexpr std::size_t kWatermarkSide = 16;
inline constexpr std::size_t kImageSize = 256;

class WatermarkBits {
 public:
  WatermarkBits() { bits_.fill(0); }
  explicit WatermarkBits(std::span<const std::uint8_t> bits);

  /// Thresholds soft bits: value > threshold becomes 1.
  static WatermarkBits from_soft(std::span<const float> soft, float threshold = 0.5f);

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  void set(std::size_t i, bool value) { bits_.at(i) = value ? 1 : 0; }
  std::size_t size() const noexcept { return bits_.size(); }

  /// Row-major 16x16 grid of 0/1 values.
  Tensor grid() const;

  friend bool operator==(const WatermarkBits&, const WatermarkBits&) = default;

 private:
  std::array<std::uint8_t, kWatermarkLength> bits_{};
};

/// 256 independent fair bits.
WatermarkBits random_watermark(Rng& rng);

/// Affine map from a subband's native range to the tanh range [-1,1].
struct BandNormalization {
  float scale = 1.0f;
  float offset = 0.0f;

  float apply(float x) const { return scale * x + offset; }
  float invert(float n) const { return (n - offset) / scale; }
};

/// LL of a [0,1] channel spans [0,2]; the detail bands span [-1,1].
BandNormalization default_normalization(BandId band);

struct PipelineConfig {
  std::size_t image_size = kImageSize;
  std::size_t watermark_length = kWatermarkLength;
  BandId band = BandId::LL;
  std::size_t host_channel = 0;
  BandNormalization normalization = default_normalization(BandId::LL);

  static PipelineConfig for_band(BandId band);
  void validate() const;
};

struct ConvLayerSpec {
  const char* name;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t stride;
  bool transposed;
};

struct NormLayerSpec {
  const char* name;
  std::size_t channels;
};

inline constexpr std::array<ConvLayerSpec, 11> kConvLayers{{
    {"host.conv", 1, 64, 1, false},
    {"mark.deconv1", 1, 512, 2, true},
    {"mark.deconv2", 512, 128, 2, true},
    {"mark.deconv3", 128, 1, 2, true},
    {"embed.conv1", 65, 64, 1, false},
    {"embed.conv2", 64, 64, 1, false},
    {"embed.conv3", 64, 64, 1, false},
    {"embed.conv4", 64, 1, 1, false},
    {"extract.conv1", 1, 128, 2, false},
    {"extract.conv2", 128, 256, 2, false},
    {"extract.conv3", 256, 1, 2, false},
}};

inline constexpr std::array<NormLayerSpec, 8> kNormLayers{{
    {"mark.bn1", 512},
    {"mark.bn2", 128},
    {"mark.bn3", 1},
    {"embed.bn1", 64},
    {"embed.bn2", 64},
    {"embed.bn3", 64},
    {"extract.bn1", 128},
    {"extract.bn2", 256},
}};

inline constexpr std::size_t kKernelSize = 3;
inline constexpr std::uint32_t kModelVersion = 1;

/// Gradients (or optimizer moments) keyed "<layer>.kernels", "<layer>.bias",
/// "<layer>.gamma", "<layer>.beta".
using TensorMap = std::map<std::string, Tensor>;

struct ModelParameters {
  std::map<std::string, ConvLayerParams> convs;
  std::map<std::string, BatchNormParams> norms;
  BandId band = BandId::LL;
  std::uint32_t version = kModelVersion;

  const ConvLayerParams& conv(const std::string& name) const;
  const BatchNormParams& norm(const std::string& name) const;
  BatchNormParams& norm(const std::string& name);

  /// Learnable tensors in a fixed (name-sorted) order.
  std::vector<std::pair<std::string, Tensor*>> trainable();
  std::vector<std::pair<std::string, const Tensor*>> trainable() const;

  /// Every stored tensor, learnable or not, in a fixed order.
  std::vector<std::pair<std::string, const Tensor*>> all_tensors() const;
  Tensor* find_tensor(const std::string& name);

  friend bool operator==(const ModelParameters&, const ModelParameters&);
};

/// Deterministic He-uniform kernels, zero biases, identity batch norms.
ModelParameters init_parameters(std::uint64_t seed, BandId band = BandId::LL);

TensorMap zero_gradients(const ModelParameters& params);

/// One sequential stretch of the graph whose forward pass can be replayed
/// backwards. Saves what each step needs for its vector-Jacobian product.
class Stage {
 public:
  enum class Op { Conv, ConvTranspose, BatchNorm, Relu, Tanh, Sigmoid, AvgPool };
  struct Step {
    Op op;
    std::string layer;
    std::size_t stride = 1;
  };

  Stage(std::string name, std::vector<Step> steps);

  Tensor forward(const ModelParameters& params, Mode mode, const Tensor& input);
  Tensor backward(const ModelParameters& params, TensorMap& grads, const Tensor& grad_output) const;

  /// Fold train-mode batch statistics into `params`.
  void commit_running_stats(ModelParameters& params) const;

  const std::string& name() const { return name_; }
  bool recorded() const { return recorded_; }
  const std::vector<Step>& steps() const { return steps_; }
  /// Input shape of the last forward pass, then the shape after every step.
  std::vector<Shape> shape_trace() const;
  /// Name of the first step whose output contains NaN/Inf, or empty.
  std::string first_non_finite() const;

 private:
  std::string name_;
  std::vector<Step> steps_;
  std::vector<Tensor> saved_;  // input of each step, plus the final output
  std::vector<BatchNormCache> caches_;
  Mode mode_ = Mode::Infer;
  bool recorded_ = false;
};

/// One recorded forward pass through the four networks. Backward calls
/// must follow the matching forward call on the same pass.
class NetworkPass {
 public:
  NetworkPass(const ModelParameters& params, Mode mode);

  Tensor preprocess_host(const Tensor& band);       // [N,1,h,w] -> [N,64,h,w]
  Tensor preprocess_watermark(const Tensor& grid);  // [N,1,16,16] -> [N,1,128,128]
  Tensor embed(const Tensor& host_features, const Tensor& mark_features);  // -> [N,1,h,w]
  Tensor extract(const Tensor& band);               // [N,1,128,128] -> [N,1,16,16]

  struct EmbedInputGrads {
    Tensor host_features;
    Tensor mark_features;
  };
  Tensor backward_preprocess_host(const Tensor& grad_output);
  Tensor backward_preprocess_watermark(const Tensor& grad_output);
  EmbedInputGrads backward_embed(const Tensor& grad_output);
  Tensor backward_extract(const Tensor& grad_output);

  const TensorMap& gradients() const { return grads_; }
  TensorMap& gradients() { return grads_; }

  void commit_running_stats(ModelParameters& params) const;

  const Stage& host_stage() const { return host_; }
  const Stage& mark_stage() const { return mark_; }
  const Stage& embed_stage() const { return embed_; }
  const Stage& extract_stage() const { return extract_; }

  /// "<stage>/<step>" of the first non-finite recorded activation, or empty.
  std::string first_non_finite() const;

 private:
  const ModelParameters& params_;
  Mode mode_;
  TensorMap grads_;
  Stage host_;
  Stage mark_;
  Stage embed_;
  Stage extract_;
  std::size_t host_channels_ = 0;
};

// Channel plumbing for [H,W,C] images.
Tensor select_channel(const Tensor& image, std::size_t channel);
Tensor with_channel(const Tensor& image, std::size_t channel, const Tensor& values);

/// Stacks [h,w] planes into an [N,1,h,w] batch, applying `norm`.
Tensor stack_normalized(std::span<const Tensor> planes, const BandNormalization& norm);

/// Embeds `mark` into the configured band of the host channel. Output is
/// clamped to [0,1]; untouched channels are copied verbatim.
Tensor embed_pipeline(const Tensor& image, const WatermarkBits& mark,
                      const ModelParameters& params, const PipelineConfig& config);

/// Sigmoid outputs of the extractor, row-major, 256 values.
std::vector<float> extract_soft(const Tensor& image, const ModelParameters& params,
                                const PipelineConfig& config);
WatermarkBits extract_pipeline(const Tensor& image, const ModelParameters& params,
                               const PipelineConfig& config);

/// Throws unless `image` is an [size,size,C] tensor with values in [0,1].
void validate_pipeline_image(const Tensor& image, const PipelineConfig& config);

}  // namespace wmnet
