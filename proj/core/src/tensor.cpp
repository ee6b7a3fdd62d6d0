#include "spinet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace spinet {

const char* to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) {
    if (extent < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= extent;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

Buffer make_buffer(DType dtype, std::size_t n, double fill = 0.0) {
  if (dtype == DType::f32) return std::vector<float>(n, static_cast<float>(fill));
  return std::vector<double>(n, fill);
}

std::size_t buffer_size(const Buffer& b) {
  return std::visit([](const auto& v) { return v.size(); }, b);
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  auto impl = std::make_shared<detail::TensorImpl>();
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = make_buffer(dtype, n, value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = DType::f32;
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = DType::f64;
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
  if (dtype == DType::f64) return from(std::move(shape), std::vector<double>(values.begin(), values.end()));
  std::vector<float> converted(values.size());
  std::transform(values.begin(), values.end(), converted.begin(),
                 [](double v) { return static_cast<float>(v); });
  return from(std::move(shape), std::move(converted));
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return impl().shape[axis];
}

double Tensor::value(std::int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) throw ShapeError("flat index out of range");
  return std::visit([&](const auto& v) { return static_cast<double>(v[static_cast<std::size_t>(flat_index)]); },
                    impl().data);
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return value(0);
}

std::vector<double> Tensor::values() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, impl().data);
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl().has_grad) return zeros(shape(), dtype());
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = impl().shape;
  out->dtype = impl().dtype;
  out->data = impl().grad;
  return Tensor(std::move(out));
}

std::vector<double> Tensor::grad_values() const { return grad().values(); }

void Tensor::ensure_grad() {
  auto& i = impl();
  if (!i.has_grad || buffer_size(i.grad) != buffer_size(i.data)) {
    i.grad = make_buffer(i.dtype, buffer_size(i.data));
    i.has_grad = true;
  }
}

void Tensor::zero_grad() {
  auto& i = impl();
  if (!i.has_grad) return;
  std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, i.grad);
}

Tensor Tensor::clone() const {
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = impl().shape;
  out->dtype = impl().dtype;
  out->data = impl().data;
  return Tensor(std::move(out));
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == this->dtype()) return clone();
  const auto vals = values();
  return from(shape(), std::span<const double>(vals), dtype);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  // Intermediate gradients are rebuilt from scratch on every call.
  for (auto& e : entries_) e.output->has_grad = false;

  const auto& root = loss.impl_ptr();
  const bool root_recorded =
      std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.output == root; });
  if (!root_recorded && !root->requires_grad) return;

  Tensor handle(root);
  handle.ensure_grad();
  std::visit([](auto& g) { g[0] += 1; }, root->grad);

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->has_grad) it->backward(*it);
  }
  // Release intermediate gradient buffers; leaves keep theirs.
  for (auto& e : entries_) {
    e.output->has_grad = false;
    e.output->grad = Buffer{};
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void zero_grad(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

}  // namespace spinet
