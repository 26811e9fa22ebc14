#include "wmnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "wmnet/error.hpp"
#include "wmnet/metrics.hpp"

namespace wmnet {

void TrainingConfig::validate() const {
  if (batch_size < 2) {
    throw Error(ErrorKind::InvalidArgument, "batch size must be at least 2 for batch statistics");
  }
  if (epochs < 1) throw Error(ErrorKind::InvalidArgument, "epoch count must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || lambda1 + lambda2 <= 0.0) {
    throw Error(ErrorKind::InvalidArgument, "loss weights must be non-negative and not both zero");
  }
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  attacks.validate();
}

TrainState TrainState::fresh(ModelParameters params) {
  TrainState s;
  s.first_moment = zero_gradients(params);
  s.second_moment = zero_gradients(params);
  s.params = std::move(params);
  return s;
}

double loss_image(const Tensor& host, const Tensor& watermarked) {
  require_same_shape(host, watermarked, "loss_image");
  if (host.empty()) throw Error(ErrorKind::InvalidArgument, "loss_image of empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < host.size(); ++i) {
    const double d = static_cast<double>(host[i]) - watermarked[i];
    sum += d * d;
  }
  return sum / static_cast<double>(host.size());
}

double loss_watermark(std::span<const float> original, std::span<const float> extracted) {
  if (original.size() != extracted.size()) {
    throw Error(ErrorKind::ShapeMismatch, "loss_watermark: lengths " +
                                              std::to_string(original.size()) + " and " +
                                              std::to_string(extracted.size()));
  }
  if (original.empty()) throw Error(ErrorKind::InvalidArgument, "loss_watermark of empty sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    sum += std::abs(static_cast<double>(original[i]) - extracted[i]);
  }
  return sum / static_cast<double>(original.size());
}

double loss_total(double l1, double l2, double lambda1, double lambda2) {
  return lambda1 * l1 + lambda2 * l2;
}

LossValues batch_forward_backward(const ModelParameters& params,
                                  std::span<const TrainingItem> batch, double lambda1,
                                  double lambda2, const PipelineConfig& pipeline,
                                  TensorMap* grads, ModelParameters* stats) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty training batch");
  pipeline.validate();
  const std::size_t n = batch.size();
  const BandId band = pipeline.band;
  const BandNormalization& norm = pipeline.normalization;

  std::vector<SubbandSet> host_bands;
  std::vector<Tensor> planes;
  Tensor grids({n, 1, kWatermarkSide, kWatermarkSide});
  for (std::size_t i = 0; i < n; ++i) {
    host_bands.push_back(dwt2_haar(batch[i].host));
    planes.push_back(host_bands.back().band(band));
    const Tensor g = batch[i].mark.grid();
    std::copy_n(g.data(), g.size(), grids.data() + i * g.size());
  }

  NetworkPass pass(params, Mode::Train);
  const Tensor host_features = pass.preprocess_host(stack_normalized(planes, norm));
  const Tensor mark_features = pass.preprocess_watermark(grids);
  const Tensor embedded = pass.embed(host_features, mark_features);
  const std::size_t band_size = planes.front().size();

  // Invert the band normalization, resynthesize, clamp, attack.
  std::vector<Tensor> marked(n), clamp_masks(n);
  std::vector<AttackTrace> traces(n);
  std::vector<Tensor> attacked_planes(n);
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor replacement(planes[i].shape());
    for (std::size_t j = 0; j < band_size; ++j) {
      replacement[j] = norm.invert(embedded[i * band_size + j]);
    }
    Tensor channel = idwt2_haar(replace_band(host_bands[i], band, std::move(replacement)));
    clamp_masks[i] = Tensor(channel.shape());
    for (std::size_t j = 0; j < channel.size(); ++j) {
      const float v = channel[j];
      clamp_masks[i][j] = (v >= 0.0f && v <= 1.0f) ? 1.0f : 0.0f;
      channel[j] = std::clamp(v, 0.0f, 1.0f);
    }
    l1 += loss_image(batch[i].host, channel);
    Rng attack_rng(batch[i].attack_seed);
    const Tensor attacked =
        apply_attack(batch[i].attack, channel, batch[i].host, attack_rng, &traces[i]);
    attacked_planes[i] = dwt2_haar(attacked).band(band);
    marked[i] = std::move(channel);
  }
  l1 /= static_cast<double>(n);

  const Tensor soft = pass.extract(stack_normalized(attacked_planes, norm));
  double l2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor g = batch[i].mark.grid();
    l2 += loss_watermark(g.values(), soft.values().subspan(i * kWatermarkLength, kWatermarkLength));
  }
  l2 /= static_cast<double>(n);

  LossValues losses{l1, l2, loss_total(l1, l2, lambda1, lambda2)};
  if (!std::isfinite(losses.l3)) {
    const std::string where = pass.first_non_finite();
    throw Error(ErrorKind::NonFinite,
                "non-finite loss (l1=" + std::to_string(l1) + ", l2=" + std::to_string(l2) +
                    "); first non-finite activation: " + (where.empty() ? "none" : where));
  }

  if (grads != nullptr) {
    Tensor soft_grad(soft.shape());
    const float mae_scale = static_cast<float>(lambda2 / static_cast<double>(n * kWatermarkLength));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < kWatermarkLength; ++j) {
        const std::size_t k = i * kWatermarkLength + j;
        const float diff = soft[k] - static_cast<float>(batch[i].mark[j]);
        soft_grad[k] = diff > 0.0f ? mae_scale : (diff < 0.0f ? -mae_scale : 0.0f);
      }
    }
    const Tensor attacked_grad = pass.backward_extract(soft_grad);

    Tensor embedded_grad(embedded.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const Shape& bs = planes[i].shape();
      SubbandSet g{Tensor(bs), Tensor(bs), Tensor(bs), Tensor(bs)};
      for (std::size_t j = 0; j < band_size; ++j) {
        g.band(band)[j] = attacked_grad[i * band_size + j] * norm.scale;
      }
      // dwt is orthonormal, so its adjoint is idwt (and vice versa).
      Tensor channel_grad = attack_backward(traces[i], idwt2_haar(g));
      const float mse_scale =
          static_cast<float>(2.0 * lambda1 / static_cast<double>(n * marked[i].size()));
      for (std::size_t j = 0; j < channel_grad.size(); ++j) {
        channel_grad[j] += mse_scale * (marked[i][j] - batch[i].host[j]);
        channel_grad[j] *= clamp_masks[i][j];
      }
      const Tensor band_grad = dwt2_haar(channel_grad).band(band);
      for (std::size_t j = 0; j < band_size; ++j) {
        embedded_grad[i * band_size + j] = band_grad[j] / norm.scale;
      }
    }
    const auto split = pass.backward_embed(embedded_grad);
    pass.backward_preprocess_host(split.host_features);
    pass.backward_preprocess_watermark(split.mark_features);
    *grads = std::move(pass.gradients());
  }
  if (stats != nullptr) pass.commit_running_stats(*stats);
  return losses;
}

void adam_update(TrainState& state, const TensorMap& grads, double learning_rate,
                 const AdamConfig& adam) {
  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(adam.beta1, t);
  const double correction2 = 1.0 - std::pow(adam.beta2, t);
  const float b1 = static_cast<float>(adam.beta1), b2 = static_cast<float>(adam.beta2);
  const float step_size = static_cast<float>(learning_rate / correction1);
  const float root_c2 = static_cast<float>(std::sqrt(correction2));
  const float eps = static_cast<float>(adam.epsilon);

  for (auto& [name, param] : state.params.trainable()) {
    auto g = grads.find(name);
    if (g == grads.end()) throw Error(ErrorKind::InvalidArgument, "missing gradient for " + name);
    require_same_shape(*param, g->second, ("adam_update " + name).c_str());
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    require_same_shape(*param, m, ("adam moments " + name).c_str());
    for (std::size_t i = 0; i < param->size(); ++i) {
      const float gi = g->second[i];
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      (*param)[i] -= step_size * m[i] / (std::sqrt(v[i]) / root_c2 + eps);
    }
  }
  ++state.step;
}

namespace {

std::vector<TrainingItem> make_items(std::span<const Tensor> images, Rng& rng,
                                     const TrainingConfig& config, const PipelineConfig& pipeline) {
  std::vector<TrainingItem> batch;
  batch.reserve(images.size());
  for (const Tensor& image : images) {
    validate_pipeline_image(image, pipeline);
    TrainingItem item;
    item.host = select_channel(image, pipeline.host_channel);
    item.mark = random_watermark(rng);
    item.attack = config.attack_simulator ? sample_attack(config.attacks, rng) : AttackSpec::none();
    item.attack_seed = rng();
    batch.push_back(std::move(item));
  }
  return batch;
}

}  // namespace

LossValues train_step(TrainState& state, std::span<const Tensor> images, Rng& rng,
                      const TrainingConfig& config) {
  if (images.empty()) throw Error(ErrorKind::InvalidArgument, "train_step needs images");
  const PipelineConfig pipeline = config.pipeline();
  const std::vector<TrainingItem> batch = make_items(images, rng, config, pipeline);
  TensorMap grads;
  const LossValues losses = batch_forward_backward(state.params, batch, config.lambda1,
                                                   config.lambda2, pipeline, &grads, &state.params);
  adam_update(state, grads, config.learning_rate);
  return losses;
}

void calibrate_batch_norm(ModelParameters& params, std::span<const Tensor> images,
                          const TrainingConfig& config, std::uint64_t seed) {
  if (images.empty()) throw Error(ErrorKind::InvalidArgument, "calibration needs images");
  const PipelineConfig pipeline = config.pipeline();
  const std::size_t n = images.size(), size = std::max<std::size_t>(config.batch_size, 2);
  // Small sets are cycled with fresh watermarks so the average still spans
  // kCalibrationImages samples.
  const std::size_t samples = std::max(n, kCalibrationImages);
  const std::size_t batches = (samples + size - 1) / size;
  std::map<std::string, float> momenta;
  for (const auto& [name, bn] : params.norms) momenta[name] = bn.momentum;
  Rng rng(seed);
  try {
    for (std::size_t b = 0; b < batches; ++b) {
      // Weight b/(b+1) on the old estimate gives a plain average over batches.
      for (auto& [name, bn] : params.norms) {
        bn.momentum = static_cast<float>(b) / static_cast<float>(b + 1);
      }
      std::vector<Tensor> chunk;
      for (std::size_t j = 0; j < size; ++j) chunk.push_back(images[(b * size + j) % n]);
      const auto items = make_items(chunk, rng, config, pipeline);
      batch_forward_backward(params, items, config.lambda1, config.lambda2, pipeline, nullptr,
                             &params);
    }
  } catch (...) {
    for (auto& [name, bn] : params.norms) bn.momentum = momenta[name];
    throw;
  }
  for (auto& [name, bn] : params.norms) bn.momentum = momenta[name];
}

std::string format_log_record(const EpochRecord& r) {
  std::ostringstream out;
  out << r.epoch << '\t' << format_metric(r.loss.l1, 6) << '\t' << format_metric(r.loss.l2, 6)
      << '\t' << format_metric(r.loss.l3, 6) << '\t' << format_metric(r.psnr, 4) << '\t'
      << format_metric(r.ber, 4);
  return out.str();
}

TrainResult train_loop(const TrainingConfig& config, std::span<const Tensor> images,
                       std::span<const Tensor> validation, const CheckpointSink& sink,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (images.empty()) throw Error(ErrorKind::InvalidArgument, "training dataset is empty");

  TrainResult result{TrainState::fresh(init_parameters(config.seed, config.band)), {}};
  Rng rng(derive_seed(config.seed, 1));
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);

  const std::span<const Tensor> held_out =
      validation.empty() ? images.first(std::min<std::size_t>(images.size(), 8)) : validation;
  EvaluationConfig eval{config.pipeline(), derive_seed(config.seed, 2), {AttackSpec::none()}};

  double best_ber = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossValues sum;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<Tensor> batch;
      for (std::size_t k = begin; k < end; ++k) batch.push_back(images[order[k]]);
      const LossValues l = train_step(result.state, batch, rng, config);
      sum.l1 += l.l1;
      sum.l2 += l.l2;
      sum.l3 += l.l3;
      ++steps;
    }
    calibrate_batch_norm(result.state.params,
                         images.first(std::min(images.size(), kCalibrationImages)), config,
                         derive_seed(derive_seed(config.seed, 3), epoch));
    EpochRecord record;
    record.epoch = epoch;
    record.loss = {sum.l1 / steps, sum.l2 / steps, sum.l3 / steps};
    const EvaluationReport report = evaluate(result.state.params, held_out, eval);
    record.psnr = report.mean_psnr;
    record.ber = report.scores.front().mean_ber;
    const bool best = record.ber < best_ber;
    if (best) best_ber = record.ber;
    result.log.push_back(record);
    if (sink) sink(result.state, record, best);
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace wmnet
