#include "spinet/model.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace spinet {

SPInetConfig SPInetConfig::paper_scale() {
  SPInetConfig c;
  c.bands = 12;
  c.channels = 48;
  c.n_tefa = 16;
  return c;
}

BlockConfig SPInetConfig::blocks() const {
  BlockConfig b;
  b.channels = channels;
  b.attention_bottleneck = attention_bottleneck;
  b.tern_kernel = tern_kernel;
  b.leaky_slope = leaky_slope;
  b.n_tefa = n_tefa;
  b.upscale = upscale;
  return b;
}

void SPInetConfig::validate() const {
  if (bands < 1) throw ConfigError("bands must be >= 1");
  if (channels < attention_bottleneck + 1) throw ConfigError("channels must exceed the attention bottleneck");
  blocks().validate();
}

std::string SPInetConfig::to_json() const {
  nlohmann::json j;
  j["bands"] = bands;
  j["channels"] = channels;
  j["n_tefa"] = n_tefa;
  j["attention_bottleneck"] = attention_bottleneck;
  j["upscale"] = upscale;
  j["tern_kernel"] = tern_kernel;
  j["leaky_slope"] = leaky_slope;
  j["use_mrf"] = use_mrf;
  return j.dump();
}

SPInetConfig SPInetConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SPInetConfig c;
    c.bands = j.at("bands").get<int>();
    c.channels = j.at("channels").get<int>();
    c.n_tefa = j.at("n_tefa").get<int>();
    c.attention_bottleneck = j.at("attention_bottleneck").get<int>();
    c.upscale = j.at("upscale").get<int>();
    c.tern_kernel = j.at("tern_kernel").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.use_mrf = j.at("use_mrf").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model config JSON: ") + e.what());
  }
}

std::int64_t parameter_count(const SPInetConfig& config) {
  config.validate();
  const std::int64_t f = config.channels;
  const std::int64_t b = config.attention_bottleneck;
  const std::int64_t k2 = std::int64_t{config.tern_kernel} * config.tern_kernel;
  const std::int64_t r2 = std::int64_t{config.upscale} * config.upscale;

  const std::int64_t input_conv = 9 * config.bands * f + f;
  const std::int64_t teb = 9 * f * f + 2 * f + 3 * (f * f + f);
  const std::int64_t tefa = 2 * teb + (f * b + b) + (b * f + f);
  const std::int64_t tern = (f * b + b) + (b * k2 + k2);
  const std::int64_t upsample = 9 * f * f * r2 + f * r2;
  const std::int64_t head =
      config.use_mrf ? mrf_parameter_count(config.channels) : ablation_head_parameter_count(config.channels);
  return input_conv + config.n_tefa * tefa + tern + upsample + head;
}

namespace {

class Registrar : public ParamVisitor {
 public:
  Registrar(ParameterSet& params, std::vector<std::pair<std::string, BatchNormState*>>& states)
      : params_(params), states_(states) {}

  void param(const std::string& name, Tensor& tensor) override { params_.add(name, tensor); }
  void norm_state(const std::string& name, BatchNormState& state) override { states_.emplace_back(name, &state); }

 private:
  ParameterSet& params_;
  std::vector<std::pair<std::string, BatchNormState*>>& states_;
};

}  // namespace

SPInet::SPInet(const SPInetConfig& config, std::uint64_t seed, DType dtype)
    : config_(config), blocks_(config.blocks()), dtype_(dtype) {
  config_.validate();
  Rng rng = Rng::stream(seed, 0x1a17);
  input_conv_ = ConvParams::make(config_.bands, config_.channels, 3, true, dtype, rng);
  for (int i = 0; i < config_.n_tefa; ++i) trunk_.push_back(TefaParams::make(blocks_, dtype, rng));
  tern_ = TernParams::make(blocks_, dtype, rng);
  upsample_ = UpsampleParams::make(blocks_, dtype, rng);
  if (config_.use_mrf) {
    mrf_ = MrfParams::make(blocks_, dtype, rng);
  } else {
    ablation_ = AblationHeadParams::make(blocks_, dtype, rng);
  }

  Registrar reg(params_, states_);
  input_conv_.visit("input", reg);
  for (std::size_t i = 0; i < trunk_.size(); ++i) trunk_[i].visit("tefa" + std::to_string(i), reg);
  tern_.visit("tern", reg);
  upsample_.visit("upsample", reg);
  if (config_.use_mrf) {
    mrf_.visit("mrf", reg);
  } else {
    ablation_.visit("head", reg);
  }
}

Tensor SPInet::encode(const Tensor& x, Mode mode) {
  if (x.rank() != 5) throw ShapeError("SPInet: expected input [N,T,C,H,W], got " + to_string(x.shape()));
  if (x.dim(2) != config_.bands) {
    throw ShapeError("SPInet: expected " + std::to_string(config_.bands) + " bands, got " + std::to_string(x.dim(2)));
  }
  if (x.dim(1) == 0) throw EmptyInputError("SPInet: T = 0");
  if (x.dtype() != dtype_) throw UsageError("SPInet: input dtype differs from model dtype");
  const std::int64_t n = x.dim(0), t = x.dim(1), h = x.dim(3), w = x.dim(4);
  const Tensor frames = reshape(x, {n * t, x.dim(2), h, w});
  Tensor features = reshape(input_conv_.apply(frames, 1, 1), {n, t, config_.channels, h, w});
  for (auto& block : trunk_) features = tefa_forward(features, block, blocks_, mode);
  return tern_forward(features, tern_, blocks_);
}

Tensor SPInet::forward(const Tensor& x, Mode mode) {
  if (x.rank() == 5) {
    const std::int64_t full_h = x.dim(3) * config_.upscale, full_w = x.dim(4) * config_.upscale;
    if (full_h % 8 != 0 || full_w % 8 != 0) {
      throw ShapeError("SPInet: super-resolved extents must be divisible by 8, got " + std::to_string(full_h) + "x" +
                       std::to_string(full_w));
    }
  }
  const Tensor pooled = temporal_mean(encode(x, mode));
  const Tensor upsampled = upsample_head(pooled, upsample_, blocks_);
  if (config_.use_mrf) return mrf_forward(upsampled, mrf_, blocks_);
  return mrf_ablation_head(upsampled, ablation_, blocks_, mode);
}

Tensor SPInet::predict(const Tensor& x, double threshold) { return threshold_logits(forward(x, Mode::eval), threshold); }

Tensor threshold_logits(const Tensor& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  // sigmoid(z) >= p  <=>  z >= logit(p)
  const double cut = std::log(threshold / (1.0 - threshold));
  return dispatch(logits.dtype(), [&]<class T>() {
    const auto z = logits.data<T>();
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(z[i]) >= cut ? T(1) : T(0);
    return Tensor::from(logits.shape(), std::move(out));
  });
}

}  // namespace spinet
