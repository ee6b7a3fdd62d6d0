#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spinet/tensor.hpp"

namespace spinet {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// max |a - b| / max(max |b|, floor)
double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::int64_t evaluated = 0;
  // Elements whose stencil changed the sign pattern of a relu/leaky_relu
  // input; the function is not differentiable across them.
  std::int64_t skipped = 0;
};

// Compares the tape gradient of `loss` with central finite differences over
// every element of every target: max |analytic - numeric| divided by the
// largest |numeric|. `loss` must return a scalar and is re-evaluated with the
// targets perturbed in place.
GradientCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& targets,
                              double step = 1e-5);
double gradient_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& targets, double step = 1e-5);

struct CheckOptions {
  std::uint64_t seed = 0;
  int gradient_seeds = 3;
  int permutations = 20;
};

std::vector<CheckResult> run_equivariance_checks(const CheckOptions& options = {});
std::vector<CheckResult> run_gradient_checks(const CheckOptions& options = {});
std::vector<CheckResult> run_oracle_checks(const CheckOptions& options = {});

// "equivariance", "gradients", "oracles" or "all". Throws ConfigError for an
// unknown suite name.
std::vector<CheckResult> run_check_suite(const std::string& suite, const CheckOptions& options = {});

}  // namespace spinet
