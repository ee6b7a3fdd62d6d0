#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spinet/error.hpp"

namespace spinet {

enum class DType : std::uint8_t { f32, f64 };

const char* to_string(DType dtype);

// Extents, outermost first.
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string to_string(const Shape& shape);

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

namespace detail {

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer data;
  Buffer grad;
  bool has_grad = false;
  bool requires_grad = false;
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// Calls f.template operator()<float>() or <double>() depending on dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Dense row-major array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage. Values produced by
// operations are never modified afterwards; only leaves (parameters, inputs)
// are written through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor from(Shape shape, std::span<const double> values, DType dtype);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl().shape.size(); }
  std::int64_t numel() const { return shape_numel(impl().shape); }
  DType dtype() const { return impl().dtype; }

  template <class T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(checked_buffer<T>(impl().data));
  }
  template <class T>
  std::span<T> mutable_data() {
    return std::get<std::vector<T>>(checked_buffer<T>(impl().data));
  }

  // Flat element access, converted to double.
  double value(std::int64_t flat_index) const;
  double item() const;
  std::vector<double> values() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl().has_grad; }
  // Gradient as a fresh tensor (zeros when none has been accumulated).
  Tensor grad() const;
  std::vector<double> grad_values() const;
  template <class T>
  std::span<const T> grad_data() const {
    if (!impl().has_grad) throw StateError("tensor has no gradient");
    return std::get<std::vector<T>>(checked_buffer<T>(impl().grad));
  }
  template <class T>
  std::span<T> mutable_grad_data() {
    ensure_grad();
    return std::get<std::vector<T>>(checked_buffer<T>(impl().grad));
  }
  void zero_grad();
  void ensure_grad();

  // Deep copy without gradient or history.
  Tensor clone() const;
  Tensor to(DType dtype) const;

  const detail::ImplPtr& impl_ptr() const { return impl_; }

 private:
  detail::TensorImpl& impl() const;

  template <class T>
  Buffer& checked_buffer(Buffer& buffer) const {
    if (!std::holds_alternative<std::vector<T>>(buffer)) {
      throw UsageError(std::string("tensor dtype is ") + to_string(impl().dtype));
    }
    return buffer;
  }
  template <class T>
  const Buffer& checked_buffer(const Buffer& buffer) const {
    if (!std::holds_alternative<std::vector<T>>(buffer)) {
      throw UsageError(std::string("tensor dtype is ") + to_string(impl().dtype));
    }
    return buffer;
  }

  detail::ImplPtr impl_;
};

// Ordered record of differentiable operations.
//
// Operations record themselves on the tape installed by the innermost live
// TapeScope of the calling thread, and only when at least one input requires
// a gradient. backward() replays the records in reverse order; every record is
// visited once per call.
class Tape {
 public:
  struct Entry {
    std::vector<detail::ImplPtr> inputs;
    detail::ImplPtr output;
    std::function<void(const Entry&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Entry entry) { entries_.push_back(std::move(entry)); }

  // Populates gradients of every requires_grad leaf reachable from `loss`.
  // Leaf gradients accumulate across calls; intermediate ones are rebuilt.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Tape of the innermost TapeScope on this thread, or nullptr.
Tape* active_tape();

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// Clears the gradient of each tensor.
void zero_grad(std::span<Tensor> tensors);

}  // namespace spinet
