#include <cstring>
#include <fstream>
#include <sstream>

#include "dynkit/image.hpp"

namespace dynkit {

Image read_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open pfm: " + path);
  std::string magic;
  is >> magic;
  int channels;
  if (magic == "PF")
    channels = 3;
  else if (magic == "Pf")
    channels = 1;
  else
    throw DataError("bad pfm magic in " + path);
  int w, h;
  double scale;
  is >> w >> h >> scale;
  if (!is || w <= 0 || h <= 0 || scale == 0.0)
    throw DataError("bad pfm header in " + path);
  is.get();  // single whitespace byte after the scale line
  Image img = Image::create(w, h, channels);
  size_t row_floats = static_cast<size_t>(w) * channels;
  std::vector<float> row(row_floats);
  // PFM stores rows bottom-up.
  for (int y = h - 1; y >= 0; --y) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row_floats * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(row_floats * sizeof(float)))
      throw DataError("truncated pfm payload in " + path);
    if (scale > 0) {  // big-endian payload
      for (auto& f : row) {
        uint32_t u;
        std::memcpy(&u, &f, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&f, &u, 4);
      }
    }
    std::memcpy(img.pixels.data() + static_cast<size_t>(y) * row_floats,
                row.data(), row_floats * sizeof(float));
  }
  return img;
}

void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw DataError("pfm supports 1 or 3 channels, got " +
                    std::to_string(img.channels));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open pfm for writing: " + path);
  os << (img.channels == 3 ? "PF" : "Pf") << "\n"
     << img.width << " " << img.height << "\n"
     << "-1.0\n";  // negative scale marks little-endian
  size_t row_floats = static_cast<size_t>(img.width) * img.channels;
  for (int y = img.height - 1; y >= 0; --y)
    os.write(reinterpret_cast<const char*>(img.pixels.data() +
                                           static_cast<size_t>(y) * row_floats),
             static_cast<std::streamsize>(row_floats * sizeof(float)));
  if (!os) throw DataError("failed writing pfm: " + path);
}

}  // namespace dynkit
