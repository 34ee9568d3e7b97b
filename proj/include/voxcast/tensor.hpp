#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "voxcast/error.hpp"
#include "voxcast/pool.hpp"

namespace voxcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Tag for tensors whose every element is written before it is read.
struct Uninitialized {};

template <typename T>
using Storage = std::vector<T, memory::PoolAllocator<T>>;

// Dense row-major array with an optional same-shape gradient buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, Uninitialized);
  Tensor(Shape shape, std::span<const T> data);
  Tensor(Shape shape, Storage<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  // Allocates a zeroed gradient slot if absent.
  std::span<T> ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  void fill(T value);
  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  // Offset of a multi-index; bounds are the caller's responsibility.
  std::size_t offset(std::initializer_list<std::size_t> index) const noexcept;

  bool all_finite() const noexcept;

  template <typename U>
  Tensor<U> cast() const {
    Storage<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  Storage<T> data_;
  Storage<T> grad_;
};

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    fail(ErrorKind::ShapeMismatch, what + ": got " + shape_string(t.shape()) + ", expected " + shape_string(expected));
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const std::string& what) {
  if (t.rank() != rank)
    fail(ErrorKind::ShapeMismatch, what + ": rank " + std::to_string(t.rank()) + ", expected " + std::to_string(rank));
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

// Debug dump: "VFTN", u8 rank, u32 dims, f64 data.
template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
Tensor<double> read_tensor(std::istream& in);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace voxcast
