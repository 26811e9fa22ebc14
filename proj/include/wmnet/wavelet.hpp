#pragma once

// Single-level orthonormal 2D Haar transform. For every 2x2 block
// [a b; c d] of the source channel:
//   LL = (a+b+c+d)/2   HL = (a-b+c-d)/2
//   LH = (a+b-c-d)/2   HH = (a-b-c+d)/2
// The transform is orthonormal, so synthesis is also its adjoint.

#include <array>
#include <optional>
#include <string_view>

#include "wmnet/tensor.hpp"

namespace wmnet {

enum class BandId { LL, LH, HL, HH };

inline constexpr std::array<BandId, 4> kAllBands{BandId::LL, BandId::LH, BandId::HL, BandId::HH};

std::string_view to_string(BandId band);
std::optional<BandId> parse_band(std::string_view text);

struct SubbandSet {
  Tensor ll;
  Tensor lh;
  Tensor hl;
  Tensor hh;

  const Tensor& band(BandId id) const;
  Tensor& band(BandId id);
};

SubbandSet dwt2_haar(const Tensor& channel);
Tensor idwt2_haar(const SubbandSet& bands);

/// Copy of `bands` with `which` swapped for `replacement` (shapes must match).
SubbandSet replace_band(const SubbandSet& bands, BandId which, Tensor replacement);

}  // namespace wmnet
