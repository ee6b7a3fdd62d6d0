#include "spinet/optim.hpp"

#include <algorithm>
#include <cmath>

namespace spinet {

Parameter& ParameterSet::add(std::string name, Tensor tensor) {
  if (name.empty()) throw ValidationError("parameter name must be nonempty");
  if (find(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  if (!tensor.defined()) throw UsageError("parameter '" + name + "' is undefined");
  tensor.set_requires_grad(true);
  Parameter p;
  p.name = std::move(name);
  p.adam_m = Tensor::zeros(tensor.shape(), tensor.dtype());
  p.adam_v = Tensor::zeros(tensor.shape(), tensor.dtype());
  p.tensor = std::move(tensor);
  items_.push_back(std::move(p));
  return items_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = std::find_if(items_.begin(), items_.end(), [&](const Parameter& p) { return p.name == name; });
  return it == items_.end() ? nullptr : &*it;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = std::find_if(items_.begin(), items_.end(), [&](const Parameter& p) { return p.name == name; });
  return it == items_.end() ? nullptr : &*it;
}

std::int64_t ParameterSet::element_count() const {
  std::int64_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

double ParameterSet::value_norm() const {
  double acc = 0.0;
  for (const auto& p : items_)
    for (double v : p.tensor.values()) acc += v * v;
  return std::sqrt(acc);
}

void adam_step(ParameterSet& params, const AdamOptions& options) {
  if (!(options.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  for (const auto& p : params.items()) {
    if (!p.tensor.has_grad()) throw StateError("adam: parameter '" + p.name + "' has no gradient");
  }
  for (auto& p : params.items()) {
    ++p.step_count;
    const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(p.step_count));
    const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(p.step_count));
    dispatch(p.tensor.dtype(), [&]<class T>() {
      auto w = p.tensor.mutable_data<T>();
      auto m = p.adam_m.mutable_data<T>();
      auto v = p.adam_v.mutable_data<T>();
      const auto g = p.tensor.grad_data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<T>(options.beta1 * m[i] + (1.0 - options.beta1) * gi);
        v[i] = static_cast<T>(options.beta2 * v[i] + (1.0 - options.beta2) * gi * gi);
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
      }
    });
  }
}

}  // namespace spinet
