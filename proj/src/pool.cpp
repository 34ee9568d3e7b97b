#include "voxcast/pool.hpp"

#include <mutex>
#include <unordered_map>
#include <vector>

namespace voxcast::memory {

namespace {

constexpr std::size_t kMaxCached = std::size_t(2) << 30;

struct Cache {
  std::mutex mu;
  std::unordered_map<std::size_t, std::vector<void*>> free;
  std::size_t bytes = 0;
};

Cache& cache() {
  static Cache* c = new Cache;  // outlives static tensors destroyed at exit
  return *c;
}

}  // namespace

void* acquire(std::size_t bytes) {
  auto& c = cache();
  {
    std::lock_guard lock(c.mu);
    auto it = c.free.find(bytes);
    if (it != c.free.end() && !it->second.empty()) {
      void* p = it->second.back();
      it->second.pop_back();
      c.bytes -= bytes;
      return p;
    }
  }
  return ::operator new(bytes);
}

void release(void* p, std::size_t bytes) noexcept {
  if (p == nullptr) return;
  auto& c = cache();
  {
    std::lock_guard lock(c.mu);
    if (c.bytes + bytes <= kMaxCached) {
      try {
        c.free[bytes].push_back(p);
        c.bytes += bytes;
        return;
      } catch (...) {
      }
    }
  }
  ::operator delete(p);
}

void trim() noexcept {
  auto& c = cache();
  std::lock_guard lock(c.mu);
  for (auto& [size, blocks] : c.free)
    for (void* p : blocks) ::operator delete(p);
  c.free.clear();
  c.bytes = 0;
}

std::size_t cached_bytes() noexcept {
  auto& c = cache();
  std::lock_guard lock(c.mu);
  return c.bytes;
}

}  // namespace voxcast::memory
