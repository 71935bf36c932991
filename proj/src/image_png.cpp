#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "dynkit/image.hpp"

namespace dynkit {

static void put_be32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

static uint32_t get_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) |
         (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

static void write_chunk(std::ofstream& os, const char type[4],
                        const std::string& data) {
  std::string hdr;
  put_be32(hdr, static_cast<uint32_t>(data.size()));
  os.write(hdr.data(), 4);
  os.write(type, 4);
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size()));
  std::string tail;
  put_be32(tail, static_cast<uint32_t>(crc));
  os.write(tail.data(), 4);
}

static const uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw DataError("png writer supports 1 or 3 channels, got " +
                    std::to_string(img.channels));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open png for writing: " + path);
  os.write(reinterpret_cast<const char*>(kSig), 8);

  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(img.width));
  put_be32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                               // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);       // color type
  ihdr.push_back(0);                               // compression
  ihdr.push_back(0);                               // filter method
  ihdr.push_back(0);                               // no interlace
  write_chunk(os, "IHDR", ihdr);

  size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    row[0] = 0;  // filter: none
    for (size_t i = 0; i < stride; ++i) {
      float v = img.pixels[static_cast<size_t>(y) * stride + i];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      row[1 + i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(bound);
  if (compress2(comp.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError("png compression failed for " + path);
  write_chunk(os, "IDAT",
              std::string(reinterpret_cast<char*>(comp.data()), bound));
  write_chunk(os, "IEND", "");
  if (!os) throw DataError("failed writing png: " + path);
}

static uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

Image read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open png: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw DataError("bad png signature in " + path);

  int w = 0, h = 0, channels = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool done = false;
  while (pos + 12 <= bytes.size() && !done) {
    uint32_t len = get_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size())
      throw DataError("truncated png chunk in " + path);
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* data = bytes.data() + pos + 8;
    uLong crc = crc32(0L, bytes.data() + pos + 4, 4 + len);
    if (crc != get_be32(bytes.data() + pos + 8 + len))
      throw DataError("png crc mismatch in " + path);
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw DataError("bad IHDR in " + path);
      w = static_cast<int>(get_be32(data));
      h = static_cast<int>(get_be32(data + 4));
      int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
        throw DataError("unsupported png variant in " + path +
                        " (need 8-bit gray or rgb, no interlace)");
      channels = color == 2 ? 3 : 1;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      done = true;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty())
    throw DataError("png missing image data: " + path);

  size_t stride = static_cast<size_t>(w) * channels;
  std::vector<uint8_t> raw((stride + 1) * h);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw DataError("png inflate failed for " + path);

  Image img = Image::create(w, h, channels);
  std::vector<uint8_t> prev(stride, 0), cur(stride);
  int bpp = channels;
  for (int y = 0; y < h; ++y) {
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1);
    uint8_t filter = src[0];
    const uint8_t* in = src + 1;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = in[i]; break;
        case 1: v = in[i] + a; break;
        case 2: v = in[i] + b; break;
        case 3: v = in[i] + (a + b) / 2; break;
        case 4: v = in[i] + paeth(a, b, c); break;
        default: throw DataError("bad png filter type in " + path);
      }
      cur[i] = static_cast<uint8_t>(v);
    }
    for (size_t i = 0; i < stride; ++i)
      img.pixels[static_cast<size_t>(y) * stride + i] = cur[i] / 255.0f;
    prev = cur;
  }
  return img;
}

}  // namespace dynkit
