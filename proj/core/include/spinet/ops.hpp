#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spinet/tensor.hpp"

namespace spinet {

enum class Mode { train, eval };

// ---- elementwise and shape ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// x * gate where gate's shape is a leading prefix of x's shape; each trailing
// block of x is multiplied by one gate value.
Tensor scale_blocks(const Tensor& x, const Tensor& gate);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Gathers slices of `x` along `axis` in the given order (duplicates allowed).
Tensor take(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);

Tensor sum(const Tensor& x);
// Mean over the listed axes; those axes are removed from the result.
Tensor mean(const Tensor& x, std::vector<std::size_t> axes);
// Mean over the last two axes.
Tensor global_avg_pool(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
// x[M,K] * weight[O,K]^T + bias[O]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- nonlinearities ---------------------------------------------------------

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// x if x >= 0 else slope * x; derivative at 0 is taken as 1.
Tensor leaky_relu(const Tensor& x, double slope);
Tensor softmax(const Tensor& x, std::size_t axis);

// While alive, relu and leaky_relu calls on this thread fold the sign pattern
// of their inputs into signature(). Finite-difference checks compare
// signatures to detect stencils that straddle a kink.
class ActivationPatternScope {
 public:
  ActivationPatternScope();
  ~ActivationPatternScope();
  ActivationPatternScope(const ActivationPatternScope&) = delete;
  ActivationPatternScope& operator=(const ActivationPatternScope&) = delete;

  std::uint64_t signature() const { return hash_; }
  void absorb(const Tensor& pre_activation);

  static ActivationPatternScope* current();

 private:
  ActivationPatternScope* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

// ---- convolution ------------------------------------------------------------

// Zero-padded cross-correlation. bias may be undefined (no bias).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Six-nested-loop reference with a fixed summation order (bias first, then
// input channel, kernel row, kernel column). Forward only.
Tensor conv2d_reference(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Applies one K*K filter per leading item, shared across channels:
// x[M,C,H,W], taps[M,K*K] with K odd, zero padding K/2.
Tensor dynamic_depthwise_conv(const Tensor& x, const Tensor& taps);

// ---- normalization ----------------------------------------------------------

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized = false;
  double momentum = 0.1;
};

inline constexpr double kBatchNormEps = 1e-5;

// Per-channel normalization of [N,C,H,W] or [N,T,C,H,W] (channel axis 1 or 2).
// Train mode uses batch statistics over every non-channel axis and updates the
// running statistics (unbiased variance); eval mode uses running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps = kBatchNormEps);

// ---- attention --------------------------------------------------------------

// Single-head scaled dot-product attention over axis 1 of q, k, v with shape
// [N,T,D] or [N,T,D,H,W]; trailing axes index independent sites.
Tensor temporal_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---- resampling -------------------------------------------------------------

Tensor pixel_shuffle(const Tensor& x, int r);
Tensor space_to_depth(const Tensor& x, int r);

// Half-pixel centers, edge clamping.
Tensor bilinear_resample(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
// Catmull-Rom (a = -0.5) with half-pixel centers and edge clamping.
Tensor bicubic_resample(const Tensor& x, int scale);

// Box-filter average over non-overlapping factor x factor windows.
Tensor box_downsample(const Tensor& x, int factor);

// ---- losses -----------------------------------------------------------------

// Mean of max(z,0) - z*t + log(1 + exp(-|z|)); targets must be 0 or 1.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace spinet
