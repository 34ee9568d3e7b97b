#include "voxcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "voxcast/binio.hpp"

namespace voxcast {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) fail(ErrorKind::ShapeMismatch, "tensor dimensions must be positive");
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Uninitialized) : shape_(std::move(shape)), data_(shape_size(shape_)) {
  for (auto d : shape_)
    if (d == 0) fail(ErrorKind::ShapeMismatch, "tensor dimensions must be positive");
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::span<const T> data) : Tensor(std::move(shape), Storage<T>(data.begin(), data.end())) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) fail(ErrorKind::ShapeMismatch, "tensor dimensions must be positive");
  if (data_.size() != shape_size(shape_))
    fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const noexcept {
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) off = off * shape_[axis++] + i;
  return off;
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); }) &&
         std::all_of(grad_.begin(), grad_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  binio::put_magic(out, "VFTN");
  binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (auto v : t.data()) binio::put<double>(out, static_cast<double>(v));
}

Tensor<double> read_tensor(std::istream& in) {
  binio::expect_magic(in, "VFTN");
  const auto rank = binio::get<std::uint8_t>(in);
  Shape shape(rank);
  for (auto& d : shape) d = binio::get<std::uint32_t>(in);
  Storage<double> data(shape_size(shape));
  binio::get_span<double>(in, data);
  return Tensor<double>(std::move(shape), std::move(data));
}

template class Tensor<float>;
template class Tensor<double>;
template double dot(const Tensor<float>&, const Tensor<float>&);
template double dot(const Tensor<double>&, const Tensor<double>&);
template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);

}  // namespace voxcast
