#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tripletforge/error.hpp"

namespace tforge::diff {

using Shape = std::vector<std::size_t>;

/// Allocator handing out 64-byte aligned blocks. Eigen's vectorized
/// reductions split work by pointer alignment, so tensor buffers are aligned
/// to keep results independent of where the heap places them.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Storage {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient accumulator.
///
/// A Tensor is a shared handle: copies refer to the same storage, which is what
/// lets the graph write gradients back into parameters. Use clone() for a deep
/// copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, const std::vector<double>& values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(values.begin(), values.end()), requires_grad) {}

  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(values), requires_grad) {}

  Tensor(Shape shape, Buffer values, bool requires_grad = false) : s_(std::make_shared<detail::Storage>()) {
    for (auto extent : shape) {
      if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), Buffer(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, Buffer{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t size() const { return s_->value.size(); }

  std::span<double> values() { return s_->value; }
  std::span<const double> values() const { return s_->value; }
  double* data() { return s_->value.data(); }
  const double* data() const { return s_->value.data(); }

  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on) s_->ensure_grad();
  }

  // The accumulator is writable through const handles: the graph captures
  // inputs by const reference and still has to deposit gradients.
  std::span<double> grad() const {
    s_->ensure_grad();
    return s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
  }

  Tensor clone() const {
    Tensor t(shape(), s_->value, requires_grad());
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  detail::Storage& storage() const { return *s_; }
  const std::shared_ptr<detail::Storage>& handle() const { return s_; }

 private:
  std::shared_ptr<detail::Storage> s_;
};

}  // namespace tforge::diff
