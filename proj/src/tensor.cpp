#include "dlmbir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace dlmbir {

std::string to_string(Precision p) { return p == Precision::f32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& name) {
  if (name == "float32" || name == "f32" || name == "32") return Precision::f32;
  if (name == "float64" || name == "f64" || name == "64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + name + "' (expected float32 or float64)");
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Shape& a, const Shape& b, const char* context) {
  if (a == b) return;
  throw ShapeError(std::string(context) + ": shape " + shape_to_string(a) + " does not match " + shape_to_string(b));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (std::size_t i = 0; i < shape_.size(); ++i)
    if (shape_[i] == 0) throw ShapeError("tensor axis " + std::to_string(i) + " has zero length");
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_product(shape_) != data_.size())
    throw ShapeError("tensor shape " + shape_to_string(shape_) + " needs " + std::to_string(shape_product(shape_)) +
                     " values, got " + std::to_string(data_.size()));
}

template <typename T>
Tensor<T> Tensor<T>::slice(std::size_t i) const {
  if (shape_.empty() || i >= shape_[0]) throw std::out_of_range("slice index out of range");
  auto part = outer(i);
  return Tensor(Shape(shape_.begin() + 1, shape_.end()), std::vector<T>(part.begin(), part.end()));
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_product(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  shape_ = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor copy = *this;
  copy.reshape(std::move(shape));
  return copy;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "subtract");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
T sum_of_squares(std::span<const T> values) {
  T acc = 0;
  for (T v : values) acc += v * v;
  return acc;
}

template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("stack: no tensors");
  Shape shape = parts[0].shape();
  std::vector<T> data;
  data.reserve(parts.size() * parts[0].size());
  for (const auto& p : parts) {
    require_same_shape(p.shape(), shape, "stack");
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape.insert(shape.begin(), parts.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

#define DLMBIR_INSTANTIATE(T)                                          \
  template class Tensor<T>;                                            \
  template bool all_finite(const Tensor<T>&);                          \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> subtract(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> scaled(const Tensor<T>&, T);                      \
  template T sum_of_squares(std::span<const T>);                       \
  template Tensor<T> stack(std::span<const Tensor<T>>);

DLMBIR_INSTANTIATE(float)
DLMBIR_INSTANTIATE(double)

}  // namespace dlmbir
