#pragma once

// Shared plumbing for operation implementations.

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "spinet/tensor.hpp"

namespace spinet::detail {

inline ImplPtr new_impl(Shape shape, DType dtype) { return Tensor::zeros(std::move(shape), dtype).impl_ptr(); }

template <class T>
std::vector<T>& values_of(TensorImpl& t) {
  return std::get<std::vector<T>>(t.data);
}
template <class T>
const std::vector<T>& values_of(const TensorImpl& t) {
  return std::get<std::vector<T>>(t.data);
}

// Gradient buffer of `t`, allocated and zeroed on first use.
template <class T>
std::vector<T>& grad_of(TensorImpl& t) {
  if (!t.has_grad) {
    t.grad = std::vector<T>(std::get<std::vector<T>>(t.data).size(), T(0));
    t.has_grad = true;
  }
  return std::get<std::vector<T>>(t.grad);
}
template <class T>
const std::vector<T>& out_grad(const TensorImpl& t) {
  return std::get<std::vector<T>>(t.grad);
}

inline bool wants_grad(const ImplPtr& t) { return t && t->requires_grad; }

inline const Tensor& require_defined(const Tensor& t, const char* op, const char* name) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor '" + name + "'");
  return t;
}

void require_same_dtype(const char* op, std::initializer_list<const Tensor*> tensors);
void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* name);

// Throws NumericError if the forward result contains NaN/Inf.
void check_finite(const TensorImpl& out, const char* op);

// Finalizes an op: checks finiteness, propagates requires_grad and records
// the backward rule on the active tape when any input needs a gradient.
Tensor finish(ImplPtr out, const char* op, std::vector<ImplPtr> inputs,
              std::function<void(const Tape::Entry&)> backward);

}  // namespace spinet::detail
