#include "wmnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wmnet/error.hpp"

namespace wmnet {

WatermarkBits::WatermarkBits(std::span<const std::uint8_t> bits) {
  if (bits.size() != kWatermarkLength) {
    throw Error(ErrorKind::InvalidArgument, "watermark must have " +
                                                std::to_string(kWatermarkLength) +
                                                " bits, got " + std::to_string(bits.size()));
  }
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) {
      throw Error(ErrorKind::InvalidArgument,
                  "watermark bit " + std::to_string(i) + " is not binary");
    }
    bits_[i] = bits[i];
  }
}

WatermarkBits WatermarkBits::from_soft(std::span<const float> soft, float threshold) {
  if (soft.size() != kWatermarkLength) {
    throw Error(ErrorKind::InvalidArgument,
                "expected " + std::to_string(kWatermarkLength) + " soft bits, got " +
                    std::to_string(soft.size()));
  }
  WatermarkBits out;
  for (std::size_t i = 0; i < soft.size(); ++i) out.bits_[i] = soft[i] > threshold ? 1 : 0;
  return out;
}

Tensor WatermarkBits::grid() const {
  Tensor g({kWatermarkSide, kWatermarkSide});
  for (std::size_t i = 0; i < kWatermarkLength; ++i) g[i] = static_cast<float>(bits_[i]);
  return g;
}

WatermarkBits random_watermark(Rng& rng) {
  WatermarkBits bits;
  for (std::size_t i = 0; i < kWatermarkLength; ++i) bits.set(i, (rng() >> 63) != 0);
  return bits;
}

BandNormalization default_normalization(BandId band) {
  if (band == BandId::LL) return {1.0f, -1.0f};
  return {1.0f, 0.0f};
}

PipelineConfig PipelineConfig::for_band(BandId band) {
  PipelineConfig c;
  c.band = band;
  c.normalization = default_normalization(band);
  return c;
}

void PipelineConfig::validate() const {
  if (image_size == 0 || image_size % 16 != 0) {
    throw Error(ErrorKind::InvalidArgument,
                "image size must be a positive multiple of 16, got " + std::to_string(image_size));
  }
  if (watermark_length != kWatermarkLength) {
    throw Error(ErrorKind::InvalidArgument, "watermark length is fixed at 256 bits");
  }
  if (normalization.scale == 0.0f) {
    throw Error(ErrorKind::InvalidArgument, "band normalization scale must be nonzero");
  }
}

// ---------------------------------------------------------------------------
// Parameters

const ConvLayerParams& ModelParameters::conv(const std::string& name) const {
  auto it = convs.find(name);
  if (it == convs.end()) throw Error(ErrorKind::InvalidArgument, "no conv layer " + name);
  return it->second;
}

const BatchNormParams& ModelParameters::norm(const std::string& name) const {
  auto it = norms.find(name);
  if (it == norms.end()) throw Error(ErrorKind::InvalidArgument, "no batch-norm layer " + name);
  return it->second;
}

BatchNormParams& ModelParameters::norm(const std::string& name) {
  return const_cast<BatchNormParams&>(static_cast<const ModelParameters&>(*this).norm(name));
}

std::vector<std::pair<std::string, Tensor*>> ModelParameters::trainable() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, p] : convs) {
    out.emplace_back(name + ".bias", &p.bias);
    out.emplace_back(name + ".kernels", &p.kernels);
  }
  for (auto& [name, p] : norms) {
    out.emplace_back(name + ".beta", &p.beta);
    out.emplace_back(name + ".gamma", &p.gamma);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParameters::trainable() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParameters&>(*this).trainable()) out.emplace_back(name, t);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParameters::all_tensors() const {
  auto out = trainable();
  for (auto& [name, p] : norms) {
    out.emplace_back(name + ".running_mean", &p.running_mean);
    out.emplace_back(name + ".running_var", &p.running_var);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

Tensor* ModelParameters::find_tensor(const std::string& name) {
  for (auto& [n, t] : all_tensors()) {
    if (n == name) return const_cast<Tensor*>(t);
  }
  return nullptr;
}

bool operator==(const ModelParameters& a, const ModelParameters& b) {
  if (a.band != b.band || a.version != b.version) return false;
  const auto ta = a.all_tensors(), tb = b.all_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first || !(*ta[i].second == *tb[i].second)) return false;
  }
  return a.norms.size() == b.norms.size() &&
         std::equal(a.norms.begin(), a.norms.end(), b.norms.begin(), [](auto& x, auto& y) {
           return x.second.epsilon == y.second.epsilon && x.second.momentum == y.second.momentum;
         });
}

ModelParameters init_parameters(std::uint64_t seed, BandId band) {
  ModelParameters params;
  params.band = band;
  std::mt19937_64 rng(seed);
  for (const ConvLayerSpec& spec : kConvLayers) {
    const std::size_t fan_in = spec.in_channels * kKernelSize * kKernelSize;
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-limit, limit);
    ConvLayerParams p{Tensor({spec.out_channels, spec.in_channels, kKernelSize, kKernelSize}),
                      Tensor({spec.out_channels})};
    for (float& w : p.kernels.values()) w = dist(rng);
    params.convs.emplace(spec.name, std::move(p));
  }
  for (const NormLayerSpec& spec : kNormLayers) {
    params.norms.emplace(spec.name, BatchNormParams::identity(spec.channels));
  }
  return params;
}

TensorMap zero_gradients(const ModelParameters& params) {
  TensorMap grads;
  for (const auto& [name, t] : params.trainable()) grads.emplace(name, Tensor(t->shape()));
  return grads;
}

// ---------------------------------------------------------------------------
// Stage

namespace {

void add_into(TensorMap& grads, const std::string& key, const Tensor& g) {
  auto it = grads.find(key);
  if (it == grads.end()) {
    grads.emplace(key, g);
    return;
  }
  require_same_shape(it->second, g, key.c_str());
  for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
}

const char* op_name(Stage::Op op) {
  switch (op) {
    case Stage::Op::Conv: return "conv";
    case Stage::Op::ConvTranspose: return "conv_transpose";
    case Stage::Op::BatchNorm: return "batchnorm";
    case Stage::Op::Relu: return "relu";
    case Stage::Op::Tanh: return "tanh";
    case Stage::Op::Sigmoid: return "sigmoid";
    case Stage::Op::AvgPool: return "avgpool";
  }
  return "?";
}

}  // namespace

Stage::Stage(std::string name, std::vector<Step> steps)
    : name_(std::move(name)), steps_(std::move(steps)) {}

Tensor Stage::forward(const ModelParameters& params, Mode mode, const Tensor& input) {
  mode_ = mode;
  saved_.clear();
  caches_.assign(steps_.size(), BatchNormCache{});
  Tensor x = input;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    const Step& s = steps_[i];
    saved_.push_back(x);
    switch (s.op) {
      case Op::Conv: x = conv2d(x, params.conv(s.layer), s.stride, Padding::Same); break;
      case Op::ConvTranspose: x = conv_transpose2d(x, params.conv(s.layer), s.stride); break;
      case Op::BatchNorm: x = batchnorm(x, params.norm(s.layer), mode, &caches_[i]); break;
      case Op::Relu: x = relu(x); break;
      case Op::Tanh: x = tanh(x); break;
      case Op::Sigmoid: x = sigmoid(x); break;
      case Op::AvgPool: x = avgpool2d(x); break;
    }
  }
  saved_.push_back(x);
  recorded_ = true;
  return x;
}

Tensor Stage::backward(const ModelParameters& params, TensorMap& grads,
                       const Tensor& grad_output) const {
  if (!recorded_) {
    throw Error(ErrorKind::NotRecorded, "backward requested for stage '" + name_ +
                                            "' before its forward pass was recorded");
  }
  require_same_shape(saved_.back(), grad_output, ("backward of stage " + name_).c_str());
  Tensor g = grad_output;
  for (std::size_t i = steps_.size(); i-- > 0;) {
    const Step& s = steps_[i];
    const Tensor& in = saved_[i];
    const Tensor& out = saved_[i + 1];
    switch (s.op) {
      case Op::Conv: {
        ConvGrads cg = conv2d_backward(in, params.conv(s.layer), s.stride, Padding::Same, g);
        add_into(grads, s.layer + ".kernels", cg.kernels);
        add_into(grads, s.layer + ".bias", cg.bias);
        g = std::move(cg.input);
        break;
      }
      case Op::ConvTranspose: {
        ConvGrads cg = conv_transpose2d_backward(in, params.conv(s.layer), s.stride, g);
        add_into(grads, s.layer + ".kernels", cg.kernels);
        add_into(grads, s.layer + ".bias", cg.bias);
        g = std::move(cg.input);
        break;
      }
      case Op::BatchNorm: {
        BatchNormGrads bg = batchnorm_backward(caches_[i], params.norm(s.layer), g);
        add_into(grads, s.layer + ".gamma", bg.gamma);
        add_into(grads, s.layer + ".beta", bg.beta);
        g = std::move(bg.input);
        break;
      }
      case Op::Relu: g = relu_backward(in, g); break;
      case Op::Tanh: g = tanh_backward(out, g); break;
      case Op::Sigmoid: g = sigmoid_backward(out, g); break;
      case Op::AvgPool: g = avgpool2d_backward(g); break;
    }
  }
  return g;
}

void Stage::commit_running_stats(ModelParameters& params) const {
  if (!recorded_ || mode_ != Mode::Train) return;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (steps_[i].op == Op::BatchNorm) update_running_stats(params.norm(steps_[i].layer), caches_[i]);
  }
}

std::vector<Shape> Stage::shape_trace() const {
  std::vector<Shape> out;
  for (const Tensor& t : saved_) out.push_back(t.shape());
  return out;
}

std::string Stage::first_non_finite() const {
  for (std::size_t i = 1; i < saved_.size(); ++i) {
    if (!saved_[i].all_finite()) {
      const Step& s = steps_[i - 1];
      return s.layer.empty() ? std::string(op_name(s.op)) + "#" + std::to_string(i - 1)
                             : s.layer + " (" + op_name(s.op) + ")";
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// NetworkPass

namespace {

using Op = Stage::Op;

Stage make_host_stage() { return Stage("host", {{Op::Conv, "host.conv", 1}}); }

Stage make_mark_stage() {
  std::vector<Stage::Step> steps;
  for (int b = 1; b <= 3; ++b) {
    const std::string i = std::to_string(b);
    steps.push_back({Op::ConvTranspose, "mark.deconv" + i, 2});
    steps.push_back({Op::BatchNorm, "mark.bn" + i, 1});
    steps.push_back({Op::Relu, "", 1});
    steps.push_back({Op::AvgPool, "", 1});
  }
  return Stage("mark", std::move(steps));
}

Stage make_embed_stage() {
  std::vector<Stage::Step> steps;
  for (int b = 1; b <= 3; ++b) {
    const std::string i = std::to_string(b);
    steps.push_back({Op::Conv, "embed.conv" + i, 1});
    steps.push_back({Op::BatchNorm, "embed.bn" + i, 1});
    steps.push_back({Op::Relu, "", 1});
  }
  steps.push_back({Op::Conv, "embed.conv4", 1});
  steps.push_back({Op::Tanh, "", 1});
  return Stage("embed", std::move(steps));
}

Stage make_extract_stage() {
  return Stage("extract", {{Op::Conv, "extract.conv1", 2},
                           {Op::BatchNorm, "extract.bn1", 1},
                           {Op::Relu, "", 1},
                           {Op::Conv, "extract.conv2", 2},
                           {Op::BatchNorm, "extract.bn2", 1},
                           {Op::Relu, "", 1},
                           {Op::Conv, "extract.conv3", 2},
                           {Op::Sigmoid, "", 1}});
}

void require_single_channel(const Tensor& t, const char* what) {
  if (t.rank() != 4 || t.dim(1) != 1) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + " expects [N,1,H,W], got " + shape_to_string(t.shape()));
  }
}

}  // namespace

NetworkPass::NetworkPass(const ModelParameters& params, Mode mode)
    : params_(params),
      mode_(mode),
      grads_(zero_gradients(params)),
      host_(make_host_stage()),
      mark_(make_mark_stage()),
      embed_(make_embed_stage()),
      extract_(make_extract_stage()) {}

Tensor NetworkPass::preprocess_host(const Tensor& band) {
  require_single_channel(band, "preprocess_host");
  return host_.forward(params_, mode_, band);
}

Tensor NetworkPass::preprocess_watermark(const Tensor& grid) {
  require_single_channel(grid, "preprocess_watermark");
  if (grid.dim(2) != kWatermarkSide || grid.dim(3) != kWatermarkSide) {
    throw Error(ErrorKind::ShapeMismatch,
                "preprocess_watermark expects 16x16 grids, got " + shape_to_string(grid.shape()));
  }
  return mark_.forward(params_, mode_, grid);
}

Tensor NetworkPass::embed(const Tensor& host_features, const Tensor& mark_features) {
  host_channels_ = host_features.rank() == 4 ? host_features.dim(1) : 0;
  return embed_.forward(params_, mode_, concat_channels(host_features, mark_features));
}

Tensor NetworkPass::extract(const Tensor& band) {
  require_single_channel(band, "extract");
  return extract_.forward(params_, mode_, band);
}

Tensor NetworkPass::backward_preprocess_host(const Tensor& grad_output) {
  return host_.backward(params_, grads_, grad_output);
}

Tensor NetworkPass::backward_preprocess_watermark(const Tensor& grad_output) {
  return mark_.backward(params_, grads_, grad_output);
}

NetworkPass::EmbedInputGrads NetworkPass::backward_embed(const Tensor& grad_output) {
  Tensor g = embed_.backward(params_, grads_, grad_output);
  const std::size_t total = g.dim(1);
  return {slice_channels(g, 0, host_channels_),
          slice_channels(g, host_channels_, total - host_channels_)};
}

Tensor NetworkPass::backward_extract(const Tensor& grad_output) {
  return extract_.backward(params_, grads_, grad_output);
}

void NetworkPass::commit_running_stats(ModelParameters& params) const {
  host_.commit_running_stats(params);
  mark_.commit_running_stats(params);
  embed_.commit_running_stats(params);
  extract_.commit_running_stats(params);
}

std::string NetworkPass::first_non_finite() const {
  for (const Stage* s : {&host_, &mark_, &embed_, &extract_}) {
    const std::string where = s->first_non_finite();
    if (!where.empty()) return s->name() + "/" + where;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Pipelines

Tensor select_channel(const Tensor& image, std::size_t channel) {
  if (image.rank() != 3 || channel >= image.dim(2)) {
    throw Error(ErrorKind::ShapeMismatch, "cannot select channel " + std::to_string(channel) +
                                              " of " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = image[i * c + channel];
  return out;
}

Tensor with_channel(const Tensor& image, std::size_t channel, const Tensor& values) {
  if (image.rank() != 3 || channel >= image.dim(2) ||
      values.shape() != Shape{image.dim(0), image.dim(1)}) {
    throw Error(ErrorKind::ShapeMismatch, "cannot write " + shape_to_string(values.shape()) +
                                              " into channel " + std::to_string(channel) +
                                              " of " + shape_to_string(image.shape()));
  }
  Tensor out = image;
  const std::size_t c = image.dim(2);
  for (std::size_t i = 0; i < values.size(); ++i) out[i * c + channel] = values[i];
  return out;
}

Tensor stack_normalized(std::span<const Tensor> planes, const BandNormalization& norm) {
  if (planes.empty()) throw Error(ErrorKind::InvalidArgument, "cannot stack zero planes");
  const Shape& s = planes.front().shape();
  if (s.size() != 2) {
    throw Error(ErrorKind::ShapeMismatch, "planes must be [h,w], got " + shape_to_string(s));
  }
  Tensor out({planes.size(), 1, s[0], s[1]});
  const std::size_t plane = s[0] * s[1];
  for (std::size_t i = 0; i < planes.size(); ++i) {
    require_same_shape(planes[i], planes.front(), "stack_normalized");
    for (std::size_t j = 0; j < plane; ++j) out[i * plane + j] = norm.apply(planes[i][j]);
  }
  return out;
}

void validate_pipeline_image(const Tensor& image, const PipelineConfig& config) {
  config.validate();
  if (image.rank() != 3 || image.dim(0) != config.image_size ||
      image.dim(1) != config.image_size || image.dim(2) <= config.host_channel) {
    throw Error(ErrorKind::ShapeMismatch,
                "pipeline expects a " + std::to_string(config.image_size) + "x" +
                    std::to_string(config.image_size) + " image with at least " +
                    std::to_string(config.host_channel + 1) + " channels, got " +
                    shape_to_string(image.shape()));
  }
  constexpr float tol = 1e-6f;
  for (float v : image.values()) {
    if (!(v >= -tol && v <= 1.0f + tol)) {
      throw Error(ErrorKind::InvalidArgument,
                  "pipeline image values must lie in [0,1], found " + std::to_string(v));
    }
  }
}

Tensor embed_pipeline(const Tensor& image, const WatermarkBits& mark,
                      const ModelParameters& params, const PipelineConfig& config) {
  validate_pipeline_image(image, config);
  const Tensor host = select_channel(image, config.host_channel);
  const SubbandSet bands = dwt2_haar(host);
  const Tensor& band = bands.band(config.band);

  NetworkPass pass(params, Mode::Infer);
  const Tensor host_features = pass.preprocess_host(stack_normalized({&band, 1}, config.normalization));
  const Tensor grid = mark.grid();
  const Tensor mark_features = pass.preprocess_watermark(grid.reshaped({1, 1, kWatermarkSide, kWatermarkSide}));
  const Tensor marked = pass.embed(host_features, mark_features);

  Tensor replacement(band.shape());
  for (std::size_t i = 0; i < replacement.size(); ++i) {
    replacement[i] = config.normalization.invert(marked[i]);
  }
  Tensor channel = idwt2_haar(replace_band(bands, config.band, std::move(replacement)));
  for (float& v : channel.values()) v = std::clamp(v, 0.0f, 1.0f);
  return with_channel(image, config.host_channel, channel);
}

std::vector<float> extract_soft(const Tensor& image, const ModelParameters& params,
                                const PipelineConfig& config) {
  validate_pipeline_image(image, config);
  const SubbandSet bands = dwt2_haar(select_channel(image, config.host_channel));
  const Tensor& band = bands.band(config.band);
  NetworkPass pass(params, Mode::Infer);
  const Tensor soft = pass.extract(stack_normalized({&band, 1}, config.normalization));
  if (soft.size() != kWatermarkLength) {
    throw Error(ErrorKind::ShapeMismatch,
                "extractor produced " + shape_to_string(soft.shape()) + ", expected 16x16");
  }
  return {soft.values().begin(), soft.values().end()};
}

WatermarkBits extract_pipeline(const Tensor& image, const ModelParameters& params,
                               const PipelineConfig& config) {
  return WatermarkBits::from_soft(extract_soft(image, params, config));
}

}  // namespace wmnet
