#include "dynkit/tensor.hpp"

#include <unordered_map>

namespace dynkit::diff {

thread_local Tape* Tape::active_ = nullptr;

namespace {

// Recycles tensor buffers between steps. Training repeats the same graph, so
// freed buffers are re-acquired at identical sizes; an exact-size hit skips
// both the allocation and the zero-fill of a fresh std::vector. Leaked on
// thread exit so releases from late-dying tensors stay safe.
struct BufferPool {
  static constexpr size_t kMaxPerClass = 64;
  static constexpr size_t kMaxBytes = 256ull << 20;
  size_t bytes = 0;
  std::unordered_map<size_t, std::vector<std::vector<double>>> classes;
};

BufferPool& pool() {
  thread_local BufferPool* p = new BufferPool();
  return *p;
}

}  // namespace

std::vector<double> buffer_acquire(size_t n) {
  if (n) {
    BufferPool& bp = pool();
    auto it = bp.classes.find(n);
    if (it != bp.classes.end() && !it->second.empty()) {
      std::vector<double> v = std::move(it->second.back());
      it->second.pop_back();
      bp.bytes -= n * sizeof(double);
      return v;
    }
  }
  return std::vector<double>(n);
}

void buffer_release(std::vector<double>&& v) {
  size_t n = v.size();
  if (!n) return;
  BufferPool& bp = pool();
  if (bp.bytes + n * sizeof(double) > BufferPool::kMaxBytes) return;
  auto& cls = bp.classes[n];
  if (cls.size() >= BufferPool::kMaxPerClass) return;
  bp.bytes += n * sizeof(double);
  cls.push_back(std::move(v));
}

}  // namespace dynkit::diff
