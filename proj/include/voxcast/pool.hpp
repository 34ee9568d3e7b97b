#pragma once

// Size-keyed block cache for tensor storage. Training allocates the same set of
// large activation buffers every step; recycling them exactly avoids the
// page-fault cost of fresh heap growth.

#include <cstddef>
#include <new>

namespace voxcast::memory {

inline constexpr std::size_t kPoolThreshold = std::size_t(1) << 16;

void* acquire(std::size_t bytes);
void release(void* p, std::size_t bytes) noexcept;
// Frees every cached block.
void trim() noexcept;
std::size_t cached_bytes() noexcept;

template <typename T>
struct PoolAllocator {
  using value_type = T;

  PoolAllocator() noexcept = default;
  template <typename U>
  PoolAllocator(const PoolAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    if (bytes < kPoolThreshold) return static_cast<T*>(::operator new(bytes));
    return static_cast<T*>(acquire(bytes));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    const std::size_t bytes = n * sizeof(T);
    if (bytes < kPoolThreshold)
      ::operator delete(p);
    else
      release(p, bytes);
  }

  // Value-less construction leaves trivial elements uninitialized; callers
  // that need zeros pass an explicit value.
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(static_cast<Args&&>(args)...);
  }

  template <typename U>
  bool operator==(const PoolAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace voxcast::memory
