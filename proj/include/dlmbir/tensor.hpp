#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "dlmbir/errors.hpp"

namespace dlmbir {

using Shape = std::vector<std::size_t>;

/// Allocator with 64-byte aligned blocks. Fixed alignment keeps vectorized
/// kernels on the same code path for every allocation, so results do not
/// depend on where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

std::string shape_to_string(const Shape& shape);
std::size_t shape_product(const Shape& shape);

/// Dense row-major n-dimensional array. The scalar type is float or double;
/// both are instantiated and selected by Precision at the call sites that
/// need a runtime switch.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Stride of axis 0, i.e. the element count of one sub-tensor.
  std::size_t outer_stride() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  std::span<T> outer(std::size_t i) { return std::span<T>(data_).subspan(i * outer_stride(), outer_stride()); }
  std::span<const T> outer(std::size_t i) const {
    return std::span<const T>(data_).subspan(i * outer_stride(), outer_stride());
  }

  /// Copy of the i-th sub-tensor along axis 0.
  Tensor slice(std::size_t i) const;

  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;

  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// a - b, elementwise.
template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T factor);

template <typename T>
T sum_of_squares(std::span<const T> values);

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> parts);

void require_same_shape(const Shape& a, const Shape& b, const char* context);

}  // namespace dlmbir
