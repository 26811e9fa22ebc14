#include "wmnet/wavelet.hpp"

#include <cctype>
#include <string>

#include "wmnet/error.hpp"

namespace wmnet {

std::string_view to_string(BandId band) {
  switch (band) {
    case BandId::LL: return "LL";
    case BandId::LH: return "LH";
    case BandId::HL: return "HL";
    case BandId::HH: return "HH";
  }
  return "?";
}

std::optional<BandId> parse_band(std::string_view text) {
  std::string upper(text);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (BandId b : kAllBands) {
    if (to_string(b) == upper) return b;
  }
  return std::nullopt;
}

const Tensor& SubbandSet::band(BandId id) const {
  switch (id) {
    case BandId::LL: return ll;
    case BandId::LH: return lh;
    case BandId::HL: return hl;
    case BandId::HH: return hh;
  }
  return ll;
}

Tensor& SubbandSet::band(BandId id) {
  return const_cast<Tensor&>(static_cast<const SubbandSet&>(*this).band(id));
}

SubbandSet dwt2_haar(const Tensor& channel) {
  if (channel.rank() != 2) {
    throw Error(ErrorKind::ShapeMismatch,
                "dwt2_haar expects an [H,W] channel, got " + shape_to_string(channel.shape()));
  }
  const std::size_t h = channel.dim(0), w = channel.dim(1);
  if (h % 2 != 0 || w % 2 != 0) {
    throw Error(ErrorKind::InvalidArgument,
                "dwt2_haar needs even dimensions, got " + shape_to_string(channel.shape()));
  }
  const std::size_t bh = h / 2, bw = w / 2;
  SubbandSet out{Tensor({bh, bw}), Tensor({bh, bw}), Tensor({bh, bw}), Tensor({bh, bw})};
  for (std::size_t y = 0; y < bh; ++y) {
    const float* top = channel.data() + (2 * y) * w;
    const float* bottom = top + w;
    for (std::size_t x = 0; x < bw; ++x) {
      const float a = top[2 * x], b = top[2 * x + 1];
      const float c = bottom[2 * x], d = bottom[2 * x + 1];
      const std::size_t i = y * bw + x;
      out.ll[i] = 0.5f * ((a + b) + (c + d));
      out.hl[i] = 0.5f * ((a - b) + (c - d));
      out.lh[i] = 0.5f * ((a + b) - (c + d));
      out.hh[i] = 0.5f * ((a - b) - (c - d));
    }
  }
  return out;
}

Tensor idwt2_haar(const SubbandSet& bands) {
  const Shape& s = bands.ll.shape();
  if (s.size() != 2 || bands.lh.shape() != s || bands.hl.shape() != s || bands.hh.shape() != s) {
    throw Error(ErrorKind::ShapeMismatch,
                "idwt2_haar bands disagree: LL " + shape_to_string(s) + ", LH " +
                    shape_to_string(bands.lh.shape()) + ", HL " +
                    shape_to_string(bands.hl.shape()) + ", HH " +
                    shape_to_string(bands.hh.shape()));
  }
  const std::size_t bh = s[0], bw = s[1], w = 2 * bw;
  Tensor out({2 * bh, w});
  for (std::size_t y = 0; y < bh; ++y) {
    float* top = out.data() + (2 * y) * w;
    float* bottom = top + w;
    for (std::size_t x = 0; x < bw; ++x) {
      const std::size_t i = y * bw + x;
      const float ll = bands.ll[i], lh = bands.lh[i], hl = bands.hl[i], hh = bands.hh[i];
      top[2 * x] = 0.5f * ((ll + hl) + (lh + hh));
      top[2 * x + 1] = 0.5f * ((ll - hl) + (lh - hh));
      bottom[2 * x] = 0.5f * ((ll + hl) - (lh + hh));
      bottom[2 * x + 1] = 0.5f * ((ll - hl) - (lh - hh));
    }
  }
  return out;
}

SubbandSet replace_band(const SubbandSet& bands, BandId which, Tensor replacement) {
  const Tensor& current = bands.band(which);
  if (replacement.shape() != current.shape()) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string("replace_band ") + std::string(to_string(which)) + ": replacement " +
                    shape_to_string(replacement.shape()) + " vs band " +
                    shape_to_string(current.shape()));
  }
  SubbandSet out = bands;
  out.band(which) = std::move(replacement);
  return out;
}

}  // namespace wmnet
