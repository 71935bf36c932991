#include <doctest.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "dynkit/image.hpp"
#include "dynkit/metrics.hpp"
#include "dynkit/rng.hpp"

using namespace dynkit;

static Image random_image(int w, int h, int c, Rng& rng, double lo = 0.0,
                          double hi = 1.0) {
  Image im = Image::create(w, h, c);
  for (auto& p : im.pixels) p = static_cast<float>(rng.uniform(lo, hi));
  return im;
}

TEST_CASE("pfm round trip is bit exact") {
  Rng rng(21);
  for (int c : {1, 3}) {
    Image im = random_image(13, 9, c, rng, -4.0, 4.0);
    im.pixels[0] = 0.0f;
    im.pixels[1] = -0.0f;
    im.pixels[2] = 1e-30f;
    std::string path = "roundtrip.pfm";
    write_pfm(path, im);
    Image back = read_pfm(path);
    REQUIRE(back.width == im.width);
    REQUIRE(back.height == im.height);
    REQUIRE(back.channels == im.channels);
    CHECK(std::memcmp(back.pixels.data(), im.pixels.data(),
                      im.pixels.size() * sizeof(float)) == 0);
    std::remove(path.c_str());
  }
  CHECK_THROWS_AS(read_pfm("missing.pfm"), DataError);
}

TEST_CASE("png round trip preserves 8-bit data") {
  Rng rng(22);
  for (int c : {1, 3}) {
    Image im = Image::create(17, 11, c);
    for (auto& p : im.pixels)
      p = static_cast<float>(rng.uniform_int(256)) / 255.0f;
    std::string path = "roundtrip.png";
    write_png(path, im);
    Image back = read_png(path);
    REQUIRE(back.width == im.width);
    REQUIRE(back.channels == c);
    for (size_t i = 0; i < im.pixels.size(); ++i)
      CHECK(back.pixels[i] == im.pixels[i]);
    std::remove(path.c_str());
  }
}

TEST_CASE("png writer clamps out-of-range values") {
  Image im = Image::create(16, 16, 1);
  im.pixels[0] = -0.5f;
  im.pixels[1] = 1.5f;
  write_png("clamp.png", im);
  Image back = read_png("clamp.png");
  CHECK(back.pixels[0] == 0.0f);
  CHECK(back.pixels[1] == 1.0f);
  std::remove("clamp.png");
}

// Builds a PNG by hand with a chosen filter type per scanline, so the
// decoder's unfilter paths are exercised against an independent encoder.
static void write_filtered_png(const std::string& path, const Image& im,
                               int filter) {
  int w = im.width, h = im.height, ch = im.channels;
  size_t stride = static_cast<size_t>(w) * ch;
  std::vector<uint8_t> quant(stride * h);
  for (size_t i = 0; i < quant.size(); ++i)
    quant[i] = static_cast<uint8_t>(std::lround(im.pixels[i] * 255.0f));

  auto paeth = [](int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
  };
  std::vector<uint8_t> raw((stride + 1) * h);
  for (int y = 0; y < h; ++y) {
    uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    row[0] = static_cast<uint8_t>(filter);
    for (size_t i = 0; i < stride; ++i) {
      int x = quant[y * stride + i];
      int a = i >= static_cast<size_t>(ch) ? quant[y * stride + i - ch] : 0;
      int b = y > 0 ? quant[(y - 1) * stride + i] : 0;
      int c = (y > 0 && i >= static_cast<size_t>(ch))
                  ? quant[(y - 1) * stride + i - ch]
                  : 0;
      int f;
      switch (filter) {
        case 1: f = x - a; break;
        case 2: f = x - b; break;
        case 3: f = x - (a + b) / 2; break;
        case 4: f = x - paeth(a, b, c); break;
        default: f = x;
      }
      row[1 + i] = static_cast<uint8_t>(f & 0xff);
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(bound);
  REQUIRE(compress2(comp.data(), &bound, raw.data(),
                    static_cast<uLong>(raw.size()), 6) == Z_OK);

  std::ofstream os(path, std::ios::binary);
  const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);
  auto be32 = [](uint32_t v) {
    std::string s;
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
    return s;
  };
  auto chunk = [&](const char* type, const std::string& data) {
    os << be32(static_cast<uint32_t>(data.size()));
    os.write(type, 4);
    os << data;
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
                static_cast<uInt>(data.size()));
    os << be32(static_cast<uint32_t>(crc));
  };
  std::string ihdr = be32(w) + be32(h);
  ihdr.push_back(8);
  ihdr.push_back(ch == 3 ? 2 : 0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk("IHDR", ihdr);
  chunk("IDAT", std::string(reinterpret_cast<char*>(comp.data()), bound));
  chunk("IEND", "");
}

TEST_CASE("png decoder handles all five filter types") {
  Rng rng(23);
  Image im = Image::create(12, 8, 3);
  for (auto& p : im.pixels)
    p = static_cast<float>(rng.uniform_int(256)) / 255.0f;
  for (int filter = 0; filter <= 4; ++filter) {
    CAPTURE(filter);
    write_filtered_png("filtered.png", im, filter);
    Image back = read_png("filtered.png");
    REQUIRE(back.pixels.size() == im.pixels.size());
    for (size_t i = 0; i < im.pixels.size(); ++i)
      CHECK(back.pixels[i] == im.pixels[i]);
  }
  std::remove("filtered.png");
}

TEST_CASE("psnr") {
  Rng rng(24);
  Image a = random_image(20, 15, 3, rng);
  SUBCASE("identical images hit the cap") { CHECK(psnr(a, a) == 99.0); }
  SUBCASE("constant offset gives the closed-form value") {
    Image b = a;
    for (auto& p : b.pixels) p += 0.1f;
    // mse = 0.01 -> 10*log10(100) = 20, up to float32 rounding of the offset
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4));
  }
  SUBCASE("mask restricts the error region") {
    Image b = a;
    // corrupt only the left half; mask out the right half
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width / 2; ++x)
        for (int c = 0; c < 3; ++c) b.at(y, x, c) += 0.25f;
    std::vector<uint8_t> left(static_cast<size_t>(a.width) * a.height, 0);
    std::vector<uint8_t> right = left;
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        (x < a.width / 2 ? left : right)[y * a.width + x] = 1;
    CHECK(psnr(a, b, right) == 99.0);
    CHECK(psnr(a, b, left) == doctest::Approx(10 * std::log10(1.0 / 0.0625)).epsilon(1e-3));
    CHECK(psnr(a, b) > psnr(a, b, left));
  }
  SUBCASE("empty mask selection returns the cap") {
    std::vector<uint8_t> none(static_cast<size_t>(a.width) * a.height, 0);
    CHECK(psnr(a, a, none) == 99.0);
  }
}

TEST_CASE("ssim") {
  Rng rng(25);
  Image a = random_image(32, 24, 3, rng);
  SUBCASE("self similarity is one") {
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("constant images follow the closed form") {
    Image u = Image::create(16, 16, 1, 0.5f);
    Image v = Image::create(16, 16, 1, 0.6f);
    double c1 = 1e-4;
    double expect = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
    CHECK(ssim(u, v) == doctest::Approx(expect).epsilon(1e-6));
  }
  SUBCASE("noise lowers similarity") {
    Image noisy = a;
    for (auto& p : noisy.pixels)
      p = std::min(1.0, std::max(0.0, p + rng.uniform(-0.2, 0.2)));
    double s = ssim(a, noisy);
    CHECK(s < 0.99);
    CHECK(s > 0.0);
  }
  SUBCASE("structural change hurts more than brightness shift") {
    Image bright = a;
    for (auto& p : bright.pixels) p = std::min(1.0f, p + 0.05f);
    Image shuffled = a;
    Rng perm(4);
    for (size_t i = shuffled.pixels.size(); i > 1; --i)
      std::swap(shuffled.pixels[i - 1],
                shuffled.pixels[perm.uniform_int(static_cast<int64_t>(i))]);
    CHECK(ssim(a, bright) > ssim(a, shuffled));
  }
}
