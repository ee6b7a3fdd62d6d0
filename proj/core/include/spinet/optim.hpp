#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spinet/tensor.hpp"

namespace spinet {

// A trainable tensor plus its Adam moments.
struct Parameter {
  std::string name;
  Tensor tensor;
  Tensor adam_m;
  Tensor adam_v;
  std::int64_t step_count = 0;
};

// Ordered collection of uniquely named parameters. Tensors are held by handle,
// so updates are visible to whichever module owns the same tensor.
class ParameterSet {
 public:
  // Registers `tensor` (marked requires_grad) with zero moment buffers.
  Parameter& add(std::string name, Tensor tensor);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::int64_t element_count() const;

  void zero_grad();

  // Euclidean norm over every parameter value.
  double value_norm() const;

 private:
  std::vector<Parameter> items_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of every parameter. Throws StateError if any
// parameter has no gradient.
void adam_step(ParameterSet& params, const AdamOptions& options);

}  // namespace spinet
