#include "wmnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "wmnet/error.hpp"
#include "wmnet/image_io.hpp"
#include "wmnet/random.hpp"

namespace wmnet {

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::Io, dir.string() + ": not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  Dataset data;
  for (const auto& path : files) {
    if (!is_supported_image(path)) {
      ++data.skipped_non_image;
      continue;
    }
    try {
      data.images.push_back(resize_to_256(load_image(path)));
      data.paths.push_back(path);
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << e.what() << '\n';
      ++data.skipped_unreadable;
    }
  }
  return data;
}

Tensor synthetic_image(std::uint64_t seed, std::size_t size) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  constexpr float two_pi = 2.0f * std::numbers::pi_v<float>;

  struct Wave { float fx, fy, phase, amp; };
  struct Blob { float cx, cy, r, softness; float color[3]; };
  float base[3], grad_x[3], grad_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.25f + 0.5f * u(rng);
    grad_x[c] = 0.3f * (u(rng) - 0.5f);
    grad_y[c] = 0.3f * (u(rng) - 0.5f);
  }
  std::vector<Wave> waves(4);
  for (auto& w : waves) w = {1.0f + 5.0f * u(rng), 1.0f + 5.0f * u(rng), two_pi * u(rng), 0.04f + 0.08f * u(rng)};
  std::vector<Blob> blobs(3 + static_cast<int>(4 * u(rng)));
  for (auto& b : blobs) {
    b = {u(rng), u(rng), 0.05f + 0.2f * u(rng), 0.01f + 0.05f * u(rng), {u(rng), u(rng), u(rng)}};
  }

  Tensor img({size, size, 3});
  const float inv = 1.0f / static_cast<float>(size);
  for (std::size_t y = 0; y < size; ++y) {
    const float fy = static_cast<float>(y) * inv;
    for (std::size_t x = 0; x < size; ++x) {
      const float fx = static_cast<float>(x) * inv;
      float texture = 0.0f;
      for (const auto& w : waves) texture += w.amp * std::sin(two_pi * (w.fx * fx + w.fy * fy) + w.phase);
      for (int c = 0; c < 3; ++c) {
        float v = base[c] + grad_x[c] * (fx - 0.5f) + grad_y[c] * (fy - 0.5f) + texture;
        for (const auto& b : blobs) {
          const float d = std::hypot(fx - b.cx, fy - b.cy);
          const float inside = 1.0f / (1.0f + std::exp((d - b.r) / b.softness));
          v += inside * (b.color[c] - v) * 0.7f;
        }
        img[(y * size + x) * 3 + c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return img;
}

std::vector<Tensor> synthetic_dataset(std::uint64_t seed, std::size_t count, std::size_t size) {
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(derive_seed(seed, i), size));
  return out;
}

}  // namespace wmnet
