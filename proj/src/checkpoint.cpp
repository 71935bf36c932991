#include "dynkit/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace dynkit {

static constexpr char kMagic[8] = {'D', 'Y', 'N', 'K', 'I', 'T', '0', '1'};

// This codebase only targets little-endian hosts; the format is LE on disk.
static void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

static bool get_u32(std::istream& is, uint32_t& v) {
  is.read(reinterpret_cast<char*>(&v), 4);
  return is.gcount() == 4;
}

void save_checkpoint(const std::string& path,
                     const std::vector<NamedBlob>& blobs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  for (const auto& b : blobs) {
    if (diff::numel(b.shape) != static_cast<int64_t>(b.data.size()))
      throw DataError("checkpoint blob '" + b.name + "' shape/data mismatch");
    put_u32(os, static_cast<uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_u32(os, static_cast<uint32_t>(b.shape.size()));
    for (int64_t d : b.shape) put_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(b.data.data()),
             static_cast<std::streamsize>(b.data.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

std::vector<NamedBlob> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("bad checkpoint magic in " + path);
  std::vector<NamedBlob> out;
  uint32_t name_len;
  while (get_u32(is, name_len)) {
    NamedBlob b;
    if (name_len > 4096) throw DataError("corrupt checkpoint entry in " + path);
    b.name.resize(name_len);
    is.read(b.name.data(), name_len);
    uint32_t rank;
    if (is.gcount() != static_cast<std::streamsize>(name_len) ||
        !get_u32(is, rank) || rank > 16)
      throw DataError("corrupt checkpoint entry in " + path);
    int64_t n = 1;
    b.shape.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t d;
      if (!get_u32(is, d)) throw DataError("corrupt checkpoint entry in " + path);
      b.shape[i] = d;
      n *= d;
    }
    b.data.resize(n);
    is.read(reinterpret_cast<char*>(b.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
      throw DataError("truncated checkpoint payload in " + path);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace dynkit
