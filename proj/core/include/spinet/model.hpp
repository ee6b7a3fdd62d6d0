#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spinet/blocks.hpp"
#include "spinet/optim.hpp"

namespace spinet {

struct SPInetConfig {
  int bands = 4;
  int channels = 16;
  int n_tefa = 4;
  int attention_bottleneck = 6;
  int upscale = 4;
  int tern_kernel = 3;
  double leaky_slope = 0.2;
  bool use_mrf = true;

  // 12 bands, 48 channels, 16 TEFA blocks.
  static SPInetConfig paper_scale();
  // 4 synthetic bands, 16 channels, 4 TEFA blocks.
  static SPInetConfig desk_scale() { return {}; }

  BlockConfig blocks() const;
  void validate() const;

  // Canonical JSON text (sorted keys, no whitespace).
  std::string to_json() const;
  static SPInetConfig from_json(const std::string& text);

  bool operator==(const SPInetConfig&) const = default;
};

// Closed-form trainable parameter count.
std::int64_t parameter_count(const SPInetConfig& config);

// Input conv over all bands -> TEFA trunk -> TERN -> temporal mean ->
// pixel-shuffle head -> fusion (or ablation) head -> logits.
class SPInet {
 public:
  SPInet(const SPInetConfig& config, std::uint64_t seed, DType dtype = DType::f32);

  SPInet(const SPInet&) = delete;
  SPInet& operator=(const SPInet&) = delete;
  SPInet(SPInet&&) = delete;
  SPInet& operator=(SPInet&&) = delete;

  // x: [N,T,bands,H,W] -> logits [N,1,rH,rW].
  Tensor forward(const Tensor& x, Mode mode);

  // sigmoid(logit) >= threshold -> 1 else 0, evaluated in eval mode.
  Tensor predict(const Tensor& x, double threshold = 0.5);

  // Trunk output before the temporal mean, [N,T,F,H,W].
  Tensor encode(const Tensor& x, Mode mode);

  const SPInetConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const std::vector<std::pair<std::string, BatchNormState*>>& norm_states() const { return states_; }

  // Direct block access for tests and diagnostics.
  ConvParams& input_conv() { return input_conv_; }
  std::vector<TefaParams>& trunk() { return trunk_; }
  TernParams& tern() { return tern_; }
  UpsampleParams& upsampler() { return upsample_; }
  MrfParams& fusion_head() { return mrf_; }
  AblationHeadParams& ablation_head() { return ablation_; }

 private:
  SPInetConfig config_;
  BlockConfig blocks_;
  DType dtype_;
  ConvParams input_conv_;
  std::vector<TefaParams> trunk_;
  TernParams tern_;
  UpsampleParams upsample_;
  MrfParams mrf_;
  AblationHeadParams ablation_;
  ParameterSet params_;
  std::vector<std::pair<std::string, BatchNormState*>> states_;
};

// Converts logits to a {0,1} map with the >= threshold tie rule.
Tensor threshold_logits(const Tensor& logits, double threshold = 0.5);

}  // namespace spinet
