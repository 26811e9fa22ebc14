#include "wmnet/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "wmnet/error.hpp"

namespace wmnet {

double psnr(const ByteImage& host, const ByteImage& watermarked) {
  if (host.height != watermarked.height || host.width != watermarked.width ||
      host.channels != watermarked.channels || host.pixels.size() != watermarked.pixels.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "psnr: " + shape_to_string({host.height, host.width, host.channels}) + " vs " +
                    shape_to_string({watermarked.height, watermarked.width, watermarked.channels}));
  }
  if (host.pixels.empty()) throw Error(ErrorKind::InvalidArgument, "psnr of an empty image");
  double sq = 0.0;
  for (std::size_t i = 0; i < host.pixels.size(); ++i) {
    const double d = static_cast<double>(host.pixels[i]) - watermarked.pixels[i];
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sq / static_cast<double>(host.pixels.size());
  return 10.0 * std::log10(kMaxPixelValue * kMaxPixelValue / mse);
}

double ber(std::span<const std::uint8_t> original, std::span<const std::uint8_t> extracted) {
  if (original.size() != extracted.size()) {
    throw Error(ErrorKind::ShapeMismatch, "ber: lengths " + std::to_string(original.size()) +
                                              " and " + std::to_string(extracted.size()));
  }
  if (original.empty()) throw Error(ErrorKind::InvalidArgument, "ber of empty sequences");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < original.size(); ++i) errors += original[i] != extracted[i];
  return 100.0 * static_cast<double>(errors) / static_cast<double>(original.size());
}

double ber(const WatermarkBits& original, const WatermarkBits& extracted) {
  return ber(original.bits(), extracted.bits());
}

std::string format_metric(double value, int precision) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << value;
  return out.str();
}

const AttackScore* EvaluationReport::find(AttackKind kind) const {
  for (const auto& s : scores) {
    if (s.attack.kind == kind) return &s;
  }
  return nullptr;
}

EvaluationReport evaluate(const ModelParameters& params, std::span<const Tensor> images,
                          const EvaluationConfig& config) {
  if (images.empty()) throw Error(ErrorKind::InvalidArgument, "evaluate needs at least one image");
  for (const auto& a : config.attacks) a.validate();

  EvaluationReport report;
  std::vector<double> ber_sums(config.attacks.size(), 0.0);
  double psnr_sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::uint64_t image_seed = derive_seed(config.seed, i);
    Rng rng(image_seed);
    const WatermarkBits mark = random_watermark(rng);
    try {
      const Tensor host = quantize_8bit(images[i]);
      const Tensor marked = quantize_8bit(embed_pipeline(host, mark, params, config.pipeline));
      const double p = psnr(to_bytes(host), to_bytes(marked));
      std::vector<double> bers;
      for (std::size_t a = 0; a < config.attacks.size(); ++a) {
        Rng attack_rng(derive_seed(image_seed, a + 1));
        const Tensor attacked =
            quantize_8bit(apply_attack(config.attacks[a], marked, host, attack_rng));
        bers.push_back(ber(mark, extract_pipeline(attacked, params, config.pipeline)));
      }
      psnr_sum += p;
      for (std::size_t a = 0; a < bers.size(); ++a) ber_sums[a] += bers[a];
      ++report.images;
    } catch (const Error& e) {
      std::cerr << "warning: image " << i << " skipped: " << e.what() << '\n';
      ++report.failures;
    }
  }
  if (report.images == 0) {
    throw Error(ErrorKind::InvalidArgument, "evaluate: every image failed");
  }
  const double n = static_cast<double>(report.images);
  report.mean_psnr = psnr_sum / n;
  double attacked = 0.0;
  std::size_t attacked_count = 0;
  for (std::size_t a = 0; a < config.attacks.size(); ++a) {
    report.scores.push_back({config.attacks[a], ber_sums[a] / n});
    if (config.attacks[a].kind != AttackKind::None) {
      attacked += ber_sums[a] / n;
      ++attacked_count;
    }
  }
  report.attacked_mean_ber = attacked_count ? attacked / static_cast<double>(attacked_count) : 0.0;
  return report;
}

std::string format_report_table(const EvaluationReport& report) {
  std::ostringstream out;
  out << "attack\tvalue\n";
  out << "psnr\t" << format_metric(report.mean_psnr) << '\n';
  for (const auto& s : report.scores) out << s.attack.label() << '\t' << format_metric(s.mean_ber) << '\n';
  out << "attacked-mean\t" << format_metric(report.attacked_mean_ber) << '\n';
  return out.str();
}

std::string report_to_json(const EvaluationReport& report) {
  nlohmann::ordered_json j;
  j["images"] = report.images;
  j["failures"] = report.failures;
  if (std::isinf(report.mean_psnr)) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = report.mean_psnr;
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& s : report.scores) {
    rows.push_back({{"attack", std::string(s.attack.name())},
                    {"label", s.attack.label()},
                    {"ber", s.mean_ber}});
  }
  j["ber"] = rows;
  j["attacked_mean_ber"] = report.attacked_mean_ber;
  return j.dump(2) + "\n";
}

}  // namespace wmnet
