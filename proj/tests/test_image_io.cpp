#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "wmnet/dataset.hpp"
#include "wmnet/error.hpp"
#include "wmnet/image_io.hpp"

using namespace wmnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("wmnet_image_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_SUITE("image_io") {
  TEST_CASE("quantization rounds half away from zero and clamps") {
    CHECK(quantize_unit(0.0f) == 0);
    CHECK(quantize_unit(1.0f) == 255);
    CHECK(quantize_unit(-0.3f) == 0);
    CHECK(quantize_unit(7.0f) == 255);
    CHECK(quantize_unit(0.5f) == 128);  // 127.5 -> 128
    CHECK(quantize_unit(100.0f / 255.0f) == 100);
    const Tensor q = quantize_8bit(Tensor({2, 2}, 0.3f));
    CHECK(q[0] == doctest::Approx(77.0 / 255.0));
  }

  TEST_CASE("hand-written ppm decodes to known values") {
    const fs::path dir = scratch("ppm");
    write_bytes(dir / "a.ppm", "P3\n# comment\n2 2\n255\n255 0 0  0 255 0\n0 0 255  51 102 204\n");
    const Tensor t = load_image(dir / "a.ppm");
    CHECK(t.shape() == Shape{2, 2, 3});
    CHECK(t.at({0, 0, 0}) == 1.0f);
    CHECK(t.at({0, 1, 1}) == 1.0f);
    CHECK(t.at({1, 0, 2}) == 1.0f);
    CHECK(t.at({1, 1, 0}) == doctest::Approx(0.2));
    CHECK(t.at({1, 1, 1}) == doctest::Approx(0.4));
    CHECK(t.at({1, 1, 2}) == doctest::Approx(0.8));

    std::string binary = "P6\n2 1\n255\n";
    binary += std::string("\x0a\x14\x1e\x28\x32\x3c", 6);
    write_bytes(dir / "b.ppm", binary);
    const Tensor b = load_image(dir / "b.ppm");
    CHECK(b.at({0, 1, 2}) == doctest::Approx(60.0 / 255.0));
  }

  TEST_CASE("grayscale replicates into three channels") {
    const fs::path dir = scratch("gray");
    write_bytes(dir / "g.pgm", "P2\n2 1\n255\n0 255\n");
    const Tensor t = load_image(dir / "g.pgm");
    CHECK(t.shape() == Shape{1, 2, 3});
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(t.at({0, 0, c}) == 0.0f);
      CHECK(t.at({0, 1, c}) == 1.0f);
    }
  }

  TEST_CASE("png and ppm round trips are lossless at 8 bits") {
    const fs::path dir = scratch("roundtrip");
    const Tensor img = quantize_8bit(synthetic_image(3, 64));
    for (const char* name : {"x.png", "x.ppm"}) {
      save_image(img, dir / name);
      CHECK(load_image(dir / name) == img);
    }
  }

  TEST_CASE("unreadable files raise Io errors") {
    const fs::path dir = scratch("bad");
    write_bytes(dir / "broken.png", "not a png");
    write_bytes(dir / "short.ppm", "P6\n4 4\n255\nabc");
    CHECK_THROWS_AS(load_image(dir / "broken.png"), Error);
    CHECK_THROWS_AS(load_image(dir / "short.ppm"), Error);
    CHECK_THROWS_AS(load_image(dir / "missing.png"), Error);
    CHECK_THROWS_AS(load_image(dir / "x.gif"), Error);
    CHECK_THROWS_AS(save_image(Tensor({2, 2, 3}), dir / "x.bmp"), Error);
  }

  TEST_CASE("bilinear resize") {
    Tensor ramp({4, 4, 1});
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) ramp.at({y, x, 0}) = static_cast<float>(x) / 3.0f;
    const Tensor up = resize_bilinear(ramp, 7, 7);
    // Corner aligned: a horizontal ramp stays a ramp.
    for (std::size_t x = 0; x < 7; ++x) CHECK(up.at({3, x, 0}) == doctest::Approx(x / 6.0));

    Rng rng(4);
    const Tensor src = oracle::uniform({5, 9, 3}, rng, 0.0f, 1.0f);
    const Tensor out = resize_bilinear(src, 12, 4);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 4; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          CHECK(out.at({y, x, c}) ==
                doctest::Approx(oracle::bilinear(src, c, y * 4.0 / 11.0, x * 8.0 / 3.0)).epsilon(1e-5));
    CHECK(resize_bilinear(src, 5, 9) == src);
    CHECK(resize_to_256(src).shape() == Shape{256, 256, 3});
  }

  TEST_CASE("hex watermarks") {
    std::vector<std::uint8_t> raw(256, 0);
    raw[0] = 1;    // first digit 8
    raw[255] = 1;  // last digit 1
    const WatermarkBits w(raw);
    const std::string hex = to_hex(w);
    CHECK(hex.size() == 64);
    CHECK(hex.front() == '8');
    CHECK(hex.back() == '1');
    CHECK(from_hex(hex) == w);
    CHECK(from_hex(std::string(64, 'F')) == WatermarkBits(std::vector<std::uint8_t>(256, 1)));
    CHECK_THROWS_AS(from_hex("abc"), Error);
    CHECK_THROWS_AS(from_hex(std::string(64, 'g')), Error);
  }

  TEST_CASE("dataset loading skips and counts what it cannot use") {
    const fs::path dir = scratch("dataset");
    save_image(synthetic_image(1, 32), dir / "b.png");
    save_image(synthetic_image(2, 300), dir / "a.ppm");
    write_bytes(dir / "notes.txt", "hello");
    write_bytes(dir / "c.png", "garbage");
    const Dataset d = load_dataset(dir);
    CHECK(d.images.size() == 2);
    CHECK(d.paths[0].filename() == "a.ppm");
    CHECK(d.skipped_non_image == 1);
    CHECK(d.skipped_unreadable == 1);
    for (const Tensor& t : d.images) CHECK(t.shape() == Shape{256, 256, 3});
    CHECK_THROWS_AS(load_dataset(dir / "nope"), Error);
  }

  TEST_CASE("synthetic images") {
    const Tensor a = synthetic_image(5);
    CHECK(a.shape() == Shape{256, 256, 3});
    CHECK(a == synthetic_image(5));
    CHECK_FALSE(a == synthetic_image(6));
    for (float v : a.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
}
