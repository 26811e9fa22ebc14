#pragma once

// Distortions applied to watermarked images, both as a training-time
// attack layer and as a standalone tool. Images are [H,W] or [H,W,C]
// tensors in [0,1]; a "pixel" is one spatial location (all channels).

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wmnet/random.hpp"
#include "wmnet/tensor.hpp"

namespace wmnet {

enum class AttackKind { None, SaltPepper, Gaussian, Jpeg, Dropout };

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double probability = 0.0;  // SaltPepper, Dropout
  double sigma = 0.0;        // Gaussian
  int quality = 50;          // Jpeg

  static AttackSpec none() { return {}; }
  static AttackSpec salt_pepper(double p) { return {AttackKind::SaltPepper, p, 0.0, 50}; }
  static AttackSpec gaussian(double sigma) { return {AttackKind::Gaussian, 0.0, sigma, 50}; }
  static AttackSpec jpeg(int quality) { return {AttackKind::Jpeg, 0.0, 0.0, quality}; }
  static AttackSpec dropout(double p) { return {AttackKind::Dropout, p, 0.0, 50}; }

  void validate() const;
  /// CLI-facing name: none, salt-pepper, gaussian, jpeg, dropout.
  std::string_view name() const;
  /// Name plus parameter, e.g. "gaussian(sigma=0.15)".
  std::string label() const;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

std::optional<AttackKind> parse_attack_kind(std::string_view name);
std::string_view attack_kind_name(AttackKind kind);

struct WeightedAttack {
  AttackSpec spec;
  double weight = 0.0;
};

struct AttackDistribution {
  std::vector<WeightedAttack> entries;

  /// No attack 1/3; salt & pepper p=0.1, Gaussian sigma=0.15, JPEG q=50 and
  /// dropout p=0.3 at 1/6 each.
  static AttackDistribution standard();
  static AttackDistribution only(const AttackSpec& spec);
  void validate() const;
};

/// The five attacks of the standard distribution with their parameters.
std::vector<AttackSpec> standard_attacks();

/// Pass-through multipliers recorded by an attack for its backward pass.
/// An empty mask means the gradient passes through unchanged.
struct AttackTrace {
  Tensor pass_mask;
};

Tensor salt_pepper(const Tensor& image, double p, Rng& rng);
Tensor gaussian_noise(const Tensor& image, double sigma, Rng& rng, AttackTrace* trace = nullptr);
/// 8x8 block DCT quantization round trip with the libjpeg-scaled luminance
/// table, applied to each channel. Entropy coding is lossless and omitted.
Tensor jpeg_attack(const Tensor& image, int quality);
/// Straight-through: returns the upstream gradient unchanged.
Tensor jpeg_attack_backward(const Tensor& grad_output);
/// Each pixel reverts to the host pixel with probability p.
Tensor dropout_attack(const Tensor& watermarked, const Tensor& original, double p, Rng& rng,
                      AttackTrace* trace = nullptr);

AttackSpec sample_attack(const AttackDistribution& dist, Rng& rng);

/// `original` is only read by the dropout attack.
Tensor apply_attack(const AttackSpec& spec, const Tensor& watermarked, const Tensor& original,
                    Rng& rng, AttackTrace* trace = nullptr);
Tensor attack_backward(const AttackTrace& trace, const Tensor& grad_output);

/// The quantization table actually used for a JPEG quality, row-major 8x8.
std::vector<int> jpeg_quant_table(int quality);

}  // namespace wmnet
