#pragma once

#include <string>
#include <vector>

#include "dynkit/tensor.hpp"

namespace dynkit {

// Binary checkpoint: magic "DYNKIT01", then for each entry
//   u32 name_len, name bytes, u32 rank, u32 dims[rank], f64 data (all LE).
struct NamedBlob {
  std::string name;
  diff::Shape shape;
  std::vector<double> data;
};

void save_checkpoint(const std::string& path,
                     const std::vector<NamedBlob>& blobs);
std::vector<NamedBlob> load_checkpoint(const std::string& path);

}  // namespace dynkit
