#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wmnet/attacks.hpp"
#include "wmnet/model.hpp"
#include "wmnet/random.hpp"

namespace wmnet {

struct TrainingConfig {
  std::size_t batch_size = 10;
  std::size_t epochs = 60;
  double lambda1 = 33.0;  // image (MSE) loss weight
  double lambda2 = 0.2;   // watermark (MAE) loss weight
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  bool attack_simulator = true;
  AttackDistribution attacks = AttackDistribution::standard();
  BandId band = BandId::LL;

  void validate() const;
  PipelineConfig pipeline() const { return PipelineConfig::for_band(band); }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainState {
  ModelParameters params;
  TensorMap first_moment;
  TensorMap second_moment;
  std::uint64_t step = 0;

  static TrainState fresh(ModelParameters params);
};

struct LossValues {
  double l1 = 0.0;  // MSE between host and watermarked channel
  double l2 = 0.0;  // MAE between embedded and extracted soft bits
  double l3 = 0.0;  // lambda1 * l1 + lambda2 * l2
};

/// Mean squared difference of two equally shaped images.
double loss_image(const Tensor& host, const Tensor& watermarked);
/// Mean absolute difference of two equally long bit sequences.
double loss_watermark(std::span<const float> original, std::span<const float> extracted);
double loss_total(double l1, double l2, double lambda1, double lambda2);

/// One training example: host channel plus everything random about it.
struct TrainingItem {
  Tensor host;  // [H,W] host channel in [0,1]
  WatermarkBits mark;
  AttackSpec attack;
  std::uint64_t attack_seed = 0;
};

/// Full differentiable forward (and optionally backward) pass of a batch:
/// embed, attack, extract, losses. Batch norm runs in train mode. When
/// `grads` is non-null it receives d(l3)/d(parameter); when `stats` is
/// non-null the batch statistics are folded into its running estimates.
LossValues batch_forward_backward(const ModelParameters& params,
                                  std::span<const TrainingItem> batch, double lambda1,
                                  double lambda2, const PipelineConfig& pipeline,
                                  TensorMap* grads = nullptr, ModelParameters* stats = nullptr);

void adam_update(TrainState& state, const TensorMap& grads, double learning_rate,
                 const AdamConfig& adam = {});

/// Draws a watermark (and attack, if enabled) per image, runs one forward
/// and backward pass and one Adam update. Throws NonFinite naming the first
/// offending layer if a loss turns NaN/Inf.
LossValues train_step(TrainState& state, std::span<const Tensor> images, Rng& rng,
                      const TrainingConfig& config);

/// Replaces every batch-norm running estimate with the average train-mode
/// batch statistics over `images` (fresh watermarks, training attacks),
/// cycling through them until at least kCalibrationImages samples are seen.
/// Short runs leave the moving averages far from the trained network's
/// actual activations; inference uses the calibrated values.
void calibrate_batch_norm(ModelParameters& params, std::span<const Tensor> images,
                          const TrainingConfig& config, std::uint64_t seed);

/// Samples per calibration; also the image cap in train_loop's end-of-epoch
/// calibration.
inline constexpr std::size_t kCalibrationImages = 64;

struct EpochRecord {
  std::size_t epoch = 0;
  LossValues loss;
  double psnr = 0.0;
  double ber = 0.0;
};

/// "epoch l1 l2 l3 psnr ber", tab separated.
std::string format_log_record(const EpochRecord& record);

using CheckpointSink =
    std::function<void(const TrainState& state, const EpochRecord& record, bool best)>;

struct TrainResult {
  TrainState state;
  std::vector<EpochRecord> log;
};

/// Seeded per-epoch shuffling. After every epoch: batch-norm calibration,
/// validation (no-attack PSNR/BER on `validation`, or on the first training
/// images when it is empty) and the checkpoint callback.
TrainResult train_loop(const TrainingConfig& config, std::span<const Tensor> images,
                       std::span<const Tensor> validation, const CheckpointSink& sink = {},
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace wmnet
