#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wmnet/attacks.hpp"
#include "wmnet/image_io.hpp"
#include "wmnet/model.hpp"

namespace wmnet {

inline constexpr double kMaxPixelValue = 255.0;

/// 10*log10(255^2 / MSE) over all channels; +infinity for identical images.
double psnr(const ByteImage& host, const ByteImage& watermarked);

/// Percentage of positions where the two sequences differ.
double ber(std::span<const std::uint8_t> original, std::span<const std::uint8_t> extracted);
double ber(const WatermarkBits& original, const WatermarkBits& extracted);

/// "inf" for infinite values, otherwise fixed notation.
std::string format_metric(double value, int precision = 4);

struct EvaluationConfig {
  PipelineConfig pipeline;
  std::uint64_t seed = 0;
  std::vector<AttackSpec> attacks = standard_attacks();
};

struct AttackScore {
  AttackSpec attack;
  double mean_ber = 0.0;
};

struct EvaluationReport {
  std::size_t images = 0;
  std::size_t failures = 0;
  double mean_psnr = 0.0;
  std::vector<AttackScore> scores;
  /// Mean BER over every listed attack other than "none"; 0 when absent.
  double attacked_mean_ber = 0.0;

  const AttackScore* find(AttackKind kind) const;
};

/// Per image: fresh random watermark, embed, 8-bit quantize, PSNR against
/// the quantized host; then for each attack: attack, quantize, extract, BER.
/// Image i draws from derive_seed(config.seed, i), so results do not depend
/// on evaluation order. Images that fail are counted, not fatal.
EvaluationReport evaluate(const ModelParameters& params, std::span<const Tensor> images,
                          const EvaluationConfig& config);

/// Two-column tab-separated table: header "attack\tvalue", a "psnr" row, one
/// row per attack (mean BER, percent) and an "attacked-mean" row.
std::string format_report_table(const EvaluationReport& report);
std::string report_to_json(const EvaluationReport& report);

}  // namespace wmnet
