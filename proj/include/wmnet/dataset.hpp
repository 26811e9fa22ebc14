#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmnet/tensor.hpp"

namespace wmnet {

struct Dataset {
  std::vector<Tensor> images;  // [256,256,3] in [0,1]
  std::vector<std::filesystem::path> paths;
  std::size_t skipped_non_image = 0;
  std::size_t skipped_unreadable = 0;
};

/// Loads every supported image in `dir` (sorted by file name, not
/// recursive) and resizes it to 256x256. Non-image files and unreadable
/// images are skipped and counted.
Dataset load_dataset(const std::filesystem::path& dir);

/// Smooth procedural color image in [0,1]: low-frequency waves, a color
/// gradient and a few soft-edged shapes. Deterministic in `seed`.
Tensor synthetic_image(std::uint64_t seed, std::size_t size = 256);
std::vector<Tensor> synthetic_dataset(std::uint64_t seed, std::size_t count, std::size_t size = 256);

}  // namespace wmnet
