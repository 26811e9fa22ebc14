#include "wmnet/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "wmnet/error.hpp"

namespace wmnet {
namespace {

constexpr std::array<int, 64> kLuminanceTable{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

struct PixelLayout {
  std::size_t height;
  std::size_t width;
  std::size_t channels;
};

PixelLayout layout_of(const Tensor& image, const char* what) {
  if (image.rank() == 2) return {image.dim(0), image.dim(1), 1};
  if (image.rank() == 3) return {image.dim(0), image.dim(1), image.dim(2)};
  throw Error(ErrorKind::ShapeMismatch,
              std::string(what) + " expects an [H,W] or [H,W,C] image, got " +
                  shape_to_string(image.shape()));
}

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument,
                std::string(what) + " probability must lie in [0,1], got " + std::to_string(p));
  }
}

float uniform01(Rng& rng) { return std::uniform_real_distribution<float>(0.0f, 1.0f)(rng); }

// Orthonormal 8-point DCT-II basis, basis[u][x].
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) {
        b[u][x] = alpha * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return basis;
}

void jpeg_block(std::array<double, 64>& block, const std::vector<int>& table) {
  const auto& c = dct_basis();
  std::array<double, 64> tmp{};
  std::array<double, 64> coef{};
  // rows then columns
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += c[u][x] * block[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += c[v][y] * tmp[y * 8 + u];
      const double q = table[v * 8 + u];
      coef[v * 8 + u] = std::round(s / q) * q;
    }
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += c[v][y] * coef[v * 8 + u];
      tmp[y * 8 + u] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u][x] * tmp[y * 8 + u];
      block[y * 8 + x] = s;
    }
}

}  // namespace

std::string_view attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::SaltPepper: return "salt-pepper";
    case AttackKind::Gaussian: return "gaussian";
    case AttackKind::Jpeg: return "jpeg";
    case AttackKind::Dropout: return "dropout";
  }
  return "?";
}

std::optional<AttackKind> parse_attack_kind(std::string_view name) {
  for (AttackKind k : {AttackKind::None, AttackKind::SaltPepper, AttackKind::Gaussian,
                       AttackKind::Jpeg, AttackKind::Dropout}) {
    if (attack_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view AttackSpec::name() const { return attack_kind_name(kind); }

std::string AttackSpec::label() const {
  std::ostringstream out;
  out << name();
  switch (kind) {
    case AttackKind::SaltPepper:
    case AttackKind::Dropout: out << "(p=" << probability << ')'; break;
    case AttackKind::Gaussian: out << "(sigma=" << sigma << ')'; break;
    case AttackKind::Jpeg: out << "(quality=" << quality << ')'; break;
    case AttackKind::None: break;
  }
  return out.str();
}

void AttackSpec::validate() const {
  switch (kind) {
    case AttackKind::SaltPepper:
    case AttackKind::Dropout: check_probability(probability, "attack"); break;
    case AttackKind::Gaussian:
      if (!(sigma >= 0.0 && std::isfinite(sigma))) {
        throw Error(ErrorKind::InvalidArgument, "gaussian sigma must be >= 0");
      }
      break;
    case AttackKind::Jpeg:
      if (quality < 1 || quality > 100) {
        throw Error(ErrorKind::InvalidArgument,
                    "jpeg quality must lie in [1,100], got " + std::to_string(quality));
      }
      break;
    case AttackKind::None: break;
  }
}

AttackDistribution AttackDistribution::standard() {
  return {{{AttackSpec::none(), 1.0 / 3.0},
           {AttackSpec::salt_pepper(0.1), 1.0 / 6.0},
           {AttackSpec::gaussian(0.15), 1.0 / 6.0},
           {AttackSpec::jpeg(50), 1.0 / 6.0},
           {AttackSpec::dropout(0.3), 1.0 / 6.0}}};
}

AttackDistribution AttackDistribution::only(const AttackSpec& spec) { return {{{spec, 1.0}}}; }

void AttackDistribution::validate() const {
  if (entries.empty()) throw Error(ErrorKind::InvalidArgument, "attack distribution is empty");
  double total = 0.0;
  for (const auto& e : entries) {
    e.spec.validate();
    if (!(e.weight >= 0.0)) throw Error(ErrorKind::InvalidArgument, "attack weight must be >= 0");
    total += e.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument,
                "attack weights must sum to 1, got " + std::to_string(total));
  }
}

std::vector<AttackSpec> standard_attacks() {
  return {AttackSpec::none(), AttackSpec::salt_pepper(0.1), AttackSpec::gaussian(0.15),
          AttackSpec::jpeg(50), AttackSpec::dropout(0.3)};
}

Tensor salt_pepper(const Tensor& image, double p, Rng& rng) {
  check_probability(p, "salt_pepper");
  const PixelLayout l = layout_of(image, "salt_pepper");
  Tensor out = image;
  for (std::size_t px = 0; px < l.height * l.width; ++px) {
    if (uniform01(rng) >= p) continue;
    const float value = uniform01(rng) < 0.5f ? 0.0f : 1.0f;
    for (std::size_t c = 0; c < l.channels; ++c) out[px * l.channels + c] = value;
  }
  return out;
}

Tensor gaussian_noise(const Tensor& image, double sigma, Rng& rng, AttackTrace* trace) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "gaussian sigma must be >= 0");
  layout_of(image, "gaussian_noise");
  Tensor out(image.shape());
  Tensor mask(image.shape());
  std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma));
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = image[i] + (sigma > 0.0 ? noise(rng) : 0.0f);
    out[i] = std::clamp(v, 0.0f, 1.0f);
    mask[i] = (v >= 0.0f && v <= 1.0f) ? 1.0f : 0.0f;
  }
  if (trace != nullptr) trace->pass_mask = std::move(mask);
  return out;
}

std::vector<int> jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorKind::InvalidArgument,
                "jpeg quality must lie in [1,100], got " + std::to_string(quality));
  }
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::vector<int> table(64);
  for (int i = 0; i < 64; ++i) {
    table[i] = std::clamp((kLuminanceTable[i] * scale + 50) / 100, 1, 255);
  }
  return table;
}

Tensor jpeg_attack(const Tensor& image, int quality) {
  const std::vector<int> table = jpeg_quant_table(quality);
  const PixelLayout l = layout_of(image, "jpeg_attack");
  Tensor out(image.shape());
  std::array<double, 64> block{};
  for (std::size_t c = 0; c < l.channels; ++c) {
    const auto sample = [&](std::size_t y, std::size_t x) {
      // edge replication for partial blocks
      y = std::min(y, l.height - 1);
      x = std::min(x, l.width - 1);
      const float v = std::clamp(image[(y * l.width + x) * l.channels + c], 0.0f, 1.0f);
      return std::round(static_cast<double>(v) * 255.0);
    };
    for (std::size_t by = 0; by < l.height; by += 8) {
      for (std::size_t bx = 0; bx < l.width; bx += 8) {
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) block[y * 8 + x] = sample(by + y, bx + x) - 128.0;
        jpeg_block(block, table);
        for (std::size_t y = 0; y < 8 && by + y < l.height; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < l.width; ++x) {
            const double v = std::clamp(std::round(block[y * 8 + x] + 128.0), 0.0, 255.0);
            out[((by + y) * l.width + bx + x) * l.channels + c] = static_cast<float>(v / 255.0);
          }
      }
    }
  }
  return out;
}

Tensor jpeg_attack_backward(const Tensor& grad_output) { return grad_output; }

Tensor dropout_attack(const Tensor& watermarked, const Tensor& original, double p, Rng& rng,
                      AttackTrace* trace) {
  check_probability(p, "dropout");
  require_same_shape(watermarked, original, "dropout_attack");
  const PixelLayout l = layout_of(watermarked, "dropout_attack");
  Tensor out = watermarked;
  Tensor mask(watermarked.shape(), 1.0f);
  for (std::size_t px = 0; px < l.height * l.width; ++px) {
    if (uniform01(rng) >= p) continue;
    for (std::size_t c = 0; c < l.channels; ++c) {
      out[px * l.channels + c] = original[px * l.channels + c];
      mask[px * l.channels + c] = 0.0f;
    }
  }
  if (trace != nullptr) trace->pass_mask = std::move(mask);
  return out;
}

AttackSpec sample_attack(const AttackDistribution& dist, Rng& rng) {
  if (dist.entries.empty()) throw Error(ErrorKind::InvalidArgument, "attack distribution is empty");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (const auto& e : dist.entries) {
    acc += e.weight;
    if (u < acc) return e.spec;
  }
  return dist.entries.back().spec;
}

Tensor apply_attack(const AttackSpec& spec, const Tensor& watermarked, const Tensor& original,
                    Rng& rng, AttackTrace* trace) {
  spec.validate();
  if (trace != nullptr) trace->pass_mask = Tensor();
  switch (spec.kind) {
    case AttackKind::None: return watermarked;
    case AttackKind::SaltPepper: return salt_pepper(watermarked, spec.probability, rng);
    case AttackKind::Gaussian: return gaussian_noise(watermarked, spec.sigma, rng, trace);
    case AttackKind::Jpeg: return jpeg_attack(watermarked, spec.quality);
    case AttackKind::Dropout:
      return dropout_attack(watermarked, original, spec.probability, rng, trace);
  }
  return watermarked;
}

Tensor attack_backward(const AttackTrace& trace, const Tensor& grad_output) {
  if (trace.pass_mask.empty()) return grad_output;
  require_same_shape(trace.pass_mask, grad_output, "attack_backward");
  Tensor g(grad_output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_output[i] * trace.pass_mask[i];
  return g;
}

}  // namespace wmnet
