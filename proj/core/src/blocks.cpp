#include "spinet/blocks.hpp"

#include <cmath>
#include <vector>

namespace spinet {

namespace {

Tensor random_normal(Shape shape, double stddev, DType dtype, Rng& rng) {
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::span<const double>(values), dtype);
}

// He-style scaling for the leaky/plain ReLU activations used throughout.
double fan_in_std(std::int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

void require_temporal(const char* op, const Tensor& x, int channels) {
  if (x.rank() != 5) throw ShapeError(std::string(op) + ": expected [N,T,F,H,W], got " + to_string(x.shape()));
  if (x.dim(1) == 0) throw EmptyInputError(std::string(op) + ": T = 0");
  if (x.dim(2) != channels) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(channels) + " channels, got " +
                     std::to_string(x.dim(2)));
  }
}

Shape frames_shape(const Tensor& x) { return {x.dim(0) * x.dim(1), x.dim(2), x.dim(3), x.dim(4)}; }

Tensor as_frames(const Tensor& x) { return reshape(x, frames_shape(x)); }

Tensor as_temporal(const Tensor& frames, std::int64_t n, std::int64_t t) {
  return reshape(frames, {n, t, frames.dim(1), frames.dim(2), frames.dim(3)});
}

}  // namespace

void BlockConfig::validate() const {
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (attention_bottleneck < 1 || attention_bottleneck >= channels) {
    throw ConfigError("attention bottleneck must lie in [1, channels)");
  }
  if (tern_kernel < 1 || tern_kernel % 2 == 0) throw ConfigError("TERN kernel size must be odd (center tap required)");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope must lie in (0,1)");
  if (n_tefa < 1) throw ConfigError("at least one TEFA block is required");
  if (upscale < 1) throw ConfigError("upscale factor must be >= 1");
}

ConvParams ConvParams::make(int in, int out, int kernel, bool with_bias, DType dtype, Rng& rng) {
  ConvParams p;
  p.weight = random_normal({out, in, kernel, kernel}, fan_in_std(std::int64_t{in} * kernel * kernel), dtype, rng);
  if (with_bias) p.bias = Tensor::zeros({out}, dtype);
  return p;
}

ConvParams ConvParams::make_output(int in, int out, int kernel, DType dtype, Rng& rng) {
  ConvParams p;
  const double fan_in = static_cast<double>(std::int64_t{in} * kernel * kernel);
  p.weight = random_normal({out, in, kernel, kernel}, kOutputGain / std::sqrt(fan_in), dtype, rng);
  p.bias = Tensor::zeros({out}, dtype);
  return p;
}

void ConvParams::visit(const std::string& prefix, ParamVisitor& v) {
  v.param(prefix + ".weight", weight);
  if (bias.defined()) v.param(prefix + ".bias", bias);
}

LinearParams LinearParams::make(int in, int out, DType dtype, Rng& rng) {
  LinearParams p;
  p.weight = random_normal({out, in}, fan_in_std(in), dtype, rng);
  p.bias = Tensor::zeros({out}, dtype);
  return p;
}

void LinearParams::visit(const std::string& prefix, ParamVisitor& v) {
  v.param(prefix + ".weight", weight);
  v.param(prefix + ".bias", bias);
}

NormParams NormParams::make(int channels, DType dtype) {
  NormParams p;
  p.gamma = Tensor::full({channels}, 1.0, dtype);
  p.beta = Tensor::zeros({channels}, dtype);
  p.state.running_mean = Tensor::zeros({channels}, dtype);
  p.state.running_var = Tensor::full({channels}, 1.0, dtype);
  p.state.initialized = true;
  return p;
}

void NormParams::visit(const std::string& prefix, ParamVisitor& v) {
  v.param(prefix + ".gamma", gamma);
  v.param(prefix + ".beta", beta);
  v.norm_state(prefix, state);
}

TebParams TebParams::make(const BlockConfig& cfg, DType dtype, Rng& rng) {
  TebParams p;
  const int f = cfg.channels;
  p.conv = ConvParams::make(f, f, 3, false, dtype, rng);
  p.norm = NormParams::make(f, dtype);
  p.query = ConvParams::make(f, f, 1, true, dtype, rng);
  p.key = ConvParams::make(f, f, 1, true, dtype, rng);
  p.value = ConvParams::make(f, f, 1, true, dtype, rng);
  return p;
}

void TebParams::visit(const std::string& prefix, ParamVisitor& v) {
  conv.visit(prefix + ".conv", v);
  norm.visit(prefix + ".norm", v);
  query.visit(prefix + ".query", v);
  key.visit(prefix + ".key", v);
  value.visit(prefix + ".value", v);
}

TefaParams TefaParams::make(const BlockConfig& cfg, DType dtype, Rng& rng) {
  TefaParams p;
  p.first = TebParams::make(cfg, dtype, rng);
  p.second = TebParams::make(cfg, dtype, rng);
  p.squeeze = LinearParams::make(cfg.channels, cfg.attention_bottleneck, dtype, rng);
  p.excite = LinearParams::make(cfg.attention_bottleneck, cfg.channels, dtype, rng);
  return p;
}

void TefaParams::visit(const std::string& prefix, ParamVisitor& v) {
  first.visit(prefix + ".teb0", v);
  second.visit(prefix + ".teb1", v);
  squeeze.visit(prefix + ".squeeze", v);
  excite.visit(prefix + ".excite", v);
}

TernParams TernParams::make(const BlockConfig& cfg, DType dtype, Rng& rng) {
  if (cfg.tern_kernel % 2 == 0) throw ConfigError("TERN kernel size must be odd (center tap required)");
  TernParams p;
  p.kernel = cfg.tern_kernel;
  p.squeeze = LinearParams::make(cfg.channels, cfg.attention_bottleneck, dtype, rng);
  p.taps = LinearParams::make(cfg.attention_bottleneck, cfg.tern_kernel * cfg.tern_kernel, dtype, rng);
  return p;
}

void TernParams::visit(const std::string& prefix, ParamVisitor& v) {
  squeeze.visit(prefix + ".squeeze", v);
  taps.visit(prefix + ".taps", v);
}

UpsampleParams UpsampleParams::make(const BlockConfig& cfg, DType dtype, Rng& rng) {
  UpsampleParams p;
  p.factor = cfg.upscale;
  p.expand = ConvParams::make(cfg.channels, cfg.channels * cfg.upscale * cfg.upscale, 3, true, dtype, rng);
  return p;
}

void UpsampleParams::visit(const std::string& prefix, ParamVisitor& v) { expand.visit(prefix + ".expand", v); }

MrfParams MrfParams::make(const BlockConfig& cfg, DType dtype, Rng& rng) {
  MrfParams p;
  const int f = cfg.channels;
  for (std::size_t i = 0; i < 4; ++i) p.branch[i] = ConvParams::make(f, f, 3, true, dtype, rng);
  for (std::size_t from = 0; from < 4; ++from)
    for (std::size_t to = 0; to < 4; ++to) {
      if (from == to) continue;
      p.exchange[from][to] = ConvParams::make(f, f, to > from ? 3 : 1, true, dtype, rng);
    }
  for (std::size_t i = 0; i < 4; ++i) p.fuse[i] = ConvParams::make(4 * f, f, 3, true, dtype, rng);
  p.logits = ConvParams::make_output(4 * f, 1, 1, dtype, rng);
  return p;
}

void MrfParams::visit(const std::string& prefix, ParamVisitor& v) {
  for (std::size_t i = 0; i < 4; ++i) branch[i].visit(prefix + ".branch" + std::to_string(i), v);
  for (std::size_t from = 0; from < 4; ++from)
    for (std::size_t to = 0; to < 4; ++to)
      if (from != to) exchange[from][to].visit(prefix + ".exchange" + std::to_string(from) + std::to_string(to), v);
  for (std::size_t i = 0; i < 4; ++i) fuse[i].visit(prefix + ".fuse" + std::to_string(i), v);
  logits.visit(prefix + ".logits", v);
}

AblationHeadParams AblationHeadParams::make(const BlockConfig& cfg, DType dtype, Rng& rng) {
  AblationHeadParams p;
  const int width = ablation_width(cfg.channels);
  p.first = ConvParams::make(cfg.channels, width, 3, false, dtype, rng);
  p.norm = NormParams::make(width, dtype);
  p.second = ConvParams::make_output(width, 1, 3, dtype, rng);
  return p;
}

void AblationHeadParams::visit(const std::string& prefix, ParamVisitor& v) {
  first.visit(prefix + ".conv0", v);
  norm.visit(prefix + ".norm", v);
  second.visit(prefix + ".conv1", v);
}

std::int64_t mrf_parameter_count(int channels) {
  const std::int64_t f = channels;
  const std::int64_t branches = 4 * (9 * f * f + f);
  const std::int64_t down = 6 * (9 * f * f + f);
  const std::int64_t up = 6 * (f * f + f);
  const std::int64_t fuse = 4 * (36 * f * f + f);
  const std::int64_t logits = 4 * f + 1;
  return branches + down + up + fuse + logits;
}

std::int64_t ablation_head_parameter_count(int channels) {
  const std::int64_t f = channels;
  const std::int64_t g = ablation_width(channels);
  return 9 * f * g + 2 * g + 9 * g + 1;
}

int ablation_width(int channels) {
  const double per_unit = 9.0 * channels + 11.0;
  const auto width = static_cast<int>(std::lround(static_cast<double>(mrf_parameter_count(channels) - 1) / per_unit));
  return std::max(width, 1);
}

Tensor teb_forward(const Tensor& x, TebParams& p, const BlockConfig& cfg, Mode mode) {
  require_temporal("teb_forward", x, cfg.channels);
  const std::int64_t n = x.dim(0), t = x.dim(1);
  Tensor h = as_temporal(p.conv.apply(as_frames(x), 1, 1), n, t);
  h = leaky_relu(p.norm.apply(h, mode), cfg.leaky_slope);
  const Tensor frames = as_frames(h);
  const Tensor q = as_temporal(p.query.apply(frames, 1, 0), n, t);
  const Tensor k = as_temporal(p.key.apply(frames, 1, 0), n, t);
  const Tensor v = as_temporal(p.value.apply(frames, 1, 0), n, t);
  return add(h, temporal_attention(q, k, v));
}

Tensor tefa_forward(const Tensor& x, TefaParams& p, const BlockConfig& cfg, Mode mode) {
  require_temporal("tefa_forward", x, cfg.channels);
  const std::int64_t n = x.dim(0), t = x.dim(1);
  const Tensor y = teb_forward(teb_forward(x, p.first, cfg, mode), p.second, cfg, mode);
  const Tensor pooled = reshape(global_avg_pool(y), {n * t, cfg.channels});
  const Tensor gate = sigmoid(p.excite.apply(relu(p.squeeze.apply(pooled))));
  return add(x, scale_blocks(y, reshape(gate, {n, t, cfg.channels})));
}

Tensor tern_filters(const Tensor& x, TernParams& p, const BlockConfig& cfg) {
  require_temporal("tern_forward", x, cfg.channels);
  const std::int64_t n = x.dim(0), t = x.dim(1);
  const Tensor pooled = reshape(global_avg_pool(x), {n * t, cfg.channels});
  const Tensor logits = p.taps.apply(leaky_relu(p.squeeze.apply(pooled), cfg.leaky_slope));
  return softmax(logits, 1);
}

Tensor tern_forward(const Tensor& x, TernParams& p, const BlockConfig& cfg) {
  if (p.kernel % 2 == 0) throw ConfigError("TERN kernel size must be odd (center tap required)");
  const Tensor taps = tern_filters(x, p, cfg);
  return as_temporal(dynamic_depthwise_conv(as_frames(x), taps), x.dim(0), x.dim(1));
}

Tensor temporal_mean(const Tensor& x) {
  if (!x.defined() || x.rank() != 5) {
    throw ShapeError("temporal_mean: expected [N,T,F,H,W]" + (x.defined() ? ", got " + to_string(x.shape()) : std::string()));
  }
  if (x.dim(1) == 0) throw EmptyInputError("temporal_mean: T = 0");
  return mean(x, {1});
}

Tensor upsample_head(const Tensor& x, UpsampleParams& p, const BlockConfig& cfg) {
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeError("upsample_head: expected [N," + std::to_string(cfg.channels) + ",H,W], got " + to_string(x.shape()));
  }
  return pixel_shuffle(p.expand.apply(x, 1, 1), p.factor);
}

std::array<std::pair<std::int64_t, std::int64_t>, 4> mrf_branch_extents(std::int64_t h, std::int64_t w) {
  std::array<std::pair<std::int64_t, std::int64_t>, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = {h / kFusionStrides[i], w / kFusionStrides[i]};
  return out;
}

Tensor mrf_forward(const Tensor& x, MrfParams& p, const BlockConfig& cfg) {
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeError("mrf_forward: expected [N," + std::to_string(cfg.channels) + ",H,W], got " + to_string(x.shape()));
  }
  const std::int64_t h = x.dim(2), w = x.dim(3);
  if (h % 8 != 0 || w % 8 != 0) {
    throw ShapeError("mrf_forward: spatial extents must be divisible by 8 (no padding), got " + to_string(x.shape()));
  }
  const auto extents = mrf_branch_extents(h, w);
  const double slope = cfg.leaky_slope;

  std::array<Tensor, 4> branches;
  for (std::size_t i = 0; i < 4; ++i) branches[i] = leaky_relu(p.branch[i].apply(x, kFusionStrides[i], 1), slope);

  std::array<Tensor, 4> fused;
  for (std::size_t to = 0; to < 4; ++to) {
    std::array<Tensor, 4> versions;
    for (std::size_t from = 0; from < 4; ++from) {
      if (from == to) {
        versions[from] = branches[from];
      } else if (to > from) {
        versions[from] = p.exchange[from][to].apply(branches[from], 1 << (to - from), 1);
      } else {
        const Tensor up = bilinear_resample(branches[from], extents[to].first, extents[to].second);
        versions[from] = p.exchange[from][to].apply(up, 1, 0);
      }
    }
    fused[to] = leaky_relu(p.fuse[to].apply(concat(versions, 1), 1, 1), slope);
  }

  std::array<Tensor, 4> full;
  full[0] = fused[0];
  for (std::size_t i = 1; i < 4; ++i) full[i] = bilinear_resample(fused[i], h, w);
  return p.logits.apply(concat(full, 1), 1, 0);
}

Tensor mrf_ablation_head(const Tensor& x, AblationHeadParams& p, const BlockConfig& cfg, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeError("mrf_ablation_head: expected [N," + std::to_string(cfg.channels) + ",H,W], got " +
                     to_string(x.shape()));
  }
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
    throw ShapeError("mrf_ablation_head: spatial extents must be divisible by 8, got " + to_string(x.shape()));
  }
  const Tensor hidden = relu(p.norm.apply(p.first.apply(x, 1, 1), mode));
  return p.second.apply(hidden, 1, 1);
}

}  // namespace spinet
