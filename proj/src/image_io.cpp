#include "wmnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wmnet/error.hpp"

namespace wmnet {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Error io_error(const std::filesystem::path& path, const std::string& what) {
  return Error(ErrorKind::Io, path.string() + ": " + what);
}

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

ByteImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open");
  const std::string magic = pnm_token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw io_error(path, "not a PPM/PGM file");
  }
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  ByteImage img;
  int maxval = 0;
  try {
    img.width = std::stoul(pnm_token(in));
    img.height = std::stoul(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw io_error(path, "malformed PNM header");
  }
  if (img.width == 0 || img.height == 0 || maxval <= 0 || maxval > 255) {
    throw io_error(path, "unsupported PNM geometry or maxval");
  }
  img.channels = color ? 3 : 1;
  img.pixels.resize(img.width * img.height * img.channels);
  if (binary) {
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
      throw io_error(path, "truncated pixel data");
    }
  } else {
    for (auto& p : img.pixels) {
      const std::string tok = pnm_token(in);
      if (tok.empty()) throw io_error(path, "truncated pixel data");
      p = static_cast<std::uint8_t>(std::clamp(std::stoi(tok), 0, maxval));
    }
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
    }
  }
  return img;
}

ByteImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw io_error(path, std::string("cannot read PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  ByteImage out;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw io_error(path, "corrupt PNG: " + msg);
  }
  return out;
}

void write_png(const ByteImage& img, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (img.channels != 1 && img.channels != 3) {
    throw io_error(path, "PNG output needs 1 or 3 channels");
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw io_error(path, std::string("cannot write PNG: ") + image.message);
  }
}

void write_pnm(const ByteImage& img, const std::filesystem::path& path, bool gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path, "cannot open for writing");
  out << (gray ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  const std::size_t per_pixel = gray ? 1 : 3;
  std::vector<std::uint8_t> data(img.width * img.height * per_pixel);
  for (std::size_t px = 0; px < img.width * img.height; ++px) {
    for (std::size_t c = 0; c < per_pixel; ++c) {
      const std::size_t src = std::min(c, img.channels - 1);
      data[px * per_pixel + c] = img.pixels[px * img.channels + src];
    }
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw io_error(path, "write failed");
}

}  // namespace

std::uint8_t quantize_unit(float value) {
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(v));  // std::round: halves away from zero
}

ByteImage to_bytes(const Tensor& image) {
  if (image.rank() != 2 && image.rank() != 3) {
    throw Error(ErrorKind::ShapeMismatch,
                "expected an [H,W] or [H,W,C] image, got " + shape_to_string(image.shape()));
  }
  ByteImage out{image.dim(0), image.dim(1), image.rank() == 3 ? image.dim(2) : 1, {}};
  out.pixels.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out.pixels[i] = quantize_unit(image[i]);
  return out;
}

Tensor from_bytes(const ByteImage& image) {
  Tensor out({image.height, image.width, image.channels});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(image.pixels[i]) / 255.0f;
  return out;
}

Tensor quantize_8bit(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i] = static_cast<float>(quantize_unit(image[i])) / 255.0f;
  }
  return out;
}

bool is_supported_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

Tensor load_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  ByteImage bytes;
  if (ext == ".png") {
    bytes = read_png(path);
  } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    bytes = read_pnm(path);
  } else {
    throw io_error(path, "unsupported image format '" + ext + "'");
  }
  if (bytes.channels == 1) {
    ByteImage rgb{bytes.height, bytes.width, 3, {}};
    rgb.pixels.reserve(bytes.pixels.size() * 3);
    for (auto p : bytes.pixels) rgb.pixels.insert(rgb.pixels.end(), 3, p);
    bytes = std::move(rgb);
  }
  return from_bytes(bytes);
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  const ByteImage bytes = to_bytes(image);
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    write_png(bytes, path);
  } else if (ext == ".ppm" || ext == ".pnm") {
    write_pnm(bytes, path, false);
  } else if (ext == ".pgm") {
    write_pnm(bytes, path, true);
  } else {
    throw io_error(path, "unsupported output format '" + ext + "'");
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || height == 0 || width == 0) {
    throw Error(ErrorKind::InvalidArgument, "resize needs an [H,W,C] image and positive size");
  }
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  if (ih == height && iw == width) return image;
  Tensor out({height, width, c});
  const double sy = height > 1 ? static_cast<double>(ih - 1) / static_cast<double>(height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(iw - 1) / static_cast<double>(width - 1) : 0.0;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) * sy;
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), ih - 1);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) * sx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), iw - 1);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = image[(y0 * iw + x0) * c + ch], b = image[(y0 * iw + x1) * c + ch];
        const double d = image[(y1 * iw + x0) * c + ch], e = image[(y1 * iw + x1) * c + ch];
        const double top = a + (b - a) * wx, bottom = d + (e - d) * wx;
        out[(y * width + x) * c + ch] = static_cast<float>(top + (bottom - top) * wy);
      }
    }
  }
  return out;
}

Tensor resize_to_256(const Tensor& image) { return resize_bilinear(image, kImageSize, kImageSize); }

std::string to_hex(const WatermarkBits& bits) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(kWatermarkLength / 4);
  for (std::size_t nibble = 0; nibble < kWatermarkLength / 4; ++nibble) {
    int v = 0;
    for (std::size_t b = 0; b < 4; ++b) v = (v << 1) | bits[nibble * 4 + b];
    out.push_back(kDigits[v]);
  }
  return out;
}

WatermarkBits from_hex(std::string_view hex) {
  if (hex.size() != kWatermarkLength / 4) {
    throw Error(ErrorKind::InvalidArgument, "watermark hex must be 64 digits, got " +
                                                std::to_string(hex.size()));
  }
  WatermarkBits bits;
  for (std::size_t i = 0; i < hex.size(); ++i) {
    const char ch = hex[i];
    int v;
    if (ch >= '0' && ch <= '9') v = ch - '0';
    else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
    else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
    else throw Error(ErrorKind::InvalidArgument, std::string("invalid hex digit '") + ch + "'");
    for (std::size_t b = 0; b < 4; ++b) bits.set(i * 4 + b, (v >> (3 - b)) & 1);
  }
  return bits;
}

}  // namespace wmnet
