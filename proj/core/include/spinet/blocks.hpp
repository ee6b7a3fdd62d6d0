#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>

#include "spinet/ops.hpp"
#include "spinet/rng.hpp"
#include "spinet/tensor.hpp"

namespace spinet {

// Hyperparameters shared by the building blocks.
struct BlockConfig {
  int channels = 16;
  int attention_bottleneck = 6;
  int tern_kernel = 3;
  double leaky_slope = 0.2;
  int n_tefa = 4;
  int upscale = 4;

  void validate() const;
};

// Relative resolution of each fusion branch: 1, 1/2, 1/4, 1/8.
inline constexpr std::array<int, 4> kFusionStrides{1, 2, 4, 8};

// Receives every trainable tensor and normalization state of a block tree.
class ParamVisitor {
 public:
  virtual ~ParamVisitor() = default;
  virtual void param(const std::string& name, Tensor& tensor) = 0;
  virtual void norm_state(const std::string& name, BatchNormState& state) = 0;
};

inline constexpr double kOutputGain = 0.1;

struct ConvParams {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out] or undefined

  static ConvParams make(int in, int out, int kernel, bool with_bias, DType dtype, Rng& rng);
  // Logit projection: small weights so fresh models predict close to 0.5.
  static ConvParams make_output(int in, int out, int kernel, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
  Tensor apply(const Tensor& x, int stride, int pad) const { return conv2d(x, weight, bias, stride, pad); }
};

struct LinearParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static LinearParams make(int in, int out, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
  Tensor apply(const Tensor& x) const { return linear(x, weight, bias); }
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  // gamma = 1, beta = 0, running statistics primed to mean 0 / variance 1.
  static NormParams make(int channels, DType dtype);
  void visit(const std::string& prefix, ParamVisitor& v);
  Tensor apply(const Tensor& x, Mode mode) { return batch_norm(x, gamma, beta, state, mode); }
};

// Temporally shared conv -> batch norm -> leaky ReLU -> residual temporal
// self-attention.
struct TebParams {
  ConvParams conv;
  NormParams norm;
  ConvParams query, key, value;

  static TebParams make(const BlockConfig& cfg, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
};

// Two TEB units, a squeeze/excite channel gate computed per frame, and an
// outer residual connection.
struct TefaParams {
  TebParams first, second;
  LinearParams squeeze, excite;

  static TefaParams make(const BlockConfig& cfg, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
};

// Per-frame registration filter predictor: pooled features -> bottleneck ->
// K*K filter logits.
struct TernParams {
  LinearParams squeeze, taps;
  int kernel = 3;

  static TernParams make(const BlockConfig& cfg, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
};

struct UpsampleParams {
  ConvParams expand;
  int factor = 4;

  static UpsampleParams make(const BlockConfig& cfg, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
};

// Four-scale fusion head. exchange[from][to] resamples branch `from` to the
// resolution of branch `to` (strided 3x3 conv downwards, bilinear + 1x1 conv
// upwards); the diagonal is unused.
struct MrfParams {
  std::array<ConvParams, 4> branch;
  std::array<std::array<ConvParams, 4>, 4> exchange;
  std::array<ConvParams, 4> fuse;
  ConvParams logits;

  static MrfParams make(const BlockConfig& cfg, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
};

// Full-resolution replacement head: 3x3 conv -> batch norm -> ReLU -> 3x3 conv.
struct AblationHeadParams {
  ConvParams first;
  NormParams norm;
  ConvParams second;

  static AblationHeadParams make(const BlockConfig& cfg, DType dtype, Rng& rng);
  void visit(const std::string& prefix, ParamVisitor& v);
};

// Hidden width of the ablation head that best matches the fusion head's
// parameter count for `channels` feature channels.
int ablation_width(int channels);
std::int64_t mrf_parameter_count(int channels);
std::int64_t ablation_head_parameter_count(int channels);

// x: [N,T,F,H,W] for the temporal blocks.
Tensor teb_forward(const Tensor& x, TebParams& p, const BlockConfig& cfg, Mode mode);
Tensor tefa_forward(const Tensor& x, TefaParams& p, const BlockConfig& cfg, Mode mode);
Tensor tern_forward(const Tensor& x, TernParams& p, const BlockConfig& cfg);
// Filter taps TERN would apply, [N*T, K*K]; rows are non-negative and sum to 1.
Tensor tern_filters(const Tensor& x, TernParams& p, const BlockConfig& cfg);

// Mean over the temporal axis: [N,T,F,H,W] -> [N,F,H,W].
Tensor temporal_mean(const Tensor& x);

// [N,F,H,W] -> [N,F,rH,rW] via 3x3 conv to F*r^2 channels and pixel shuffle.
Tensor upsample_head(const Tensor& x, UpsampleParams& p, const BlockConfig& cfg);

// [N,F,H,W] -> logits [N,1,H,W]; H and W must be divisible by 8.
Tensor mrf_forward(const Tensor& x, MrfParams& p, const BlockConfig& cfg);
Tensor mrf_ablation_head(const Tensor& x, AblationHeadParams& p, const BlockConfig& cfg, Mode mode);

// Spatial extents of the four fusion branches for an H x W input.
std::array<std::pair<std::int64_t, std::int64_t>, 4> mrf_branch_extents(std::int64_t h, std::int64_t w);

// Collects (name, tensor) pairs; handy for tests and registries.
class CollectingVisitor : public ParamVisitor {
 public:
  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<std::pair<std::string, BatchNormState*>> states;

  void param(const std::string& name, Tensor& tensor) override { params.emplace_back(name, &tensor); }
  void norm_state(const std::string& name, BatchNormState& state) override { states.emplace_back(name, &state); }
};

}  // namespace spinet
