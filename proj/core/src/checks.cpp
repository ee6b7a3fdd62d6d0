#include "spinet/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "spinet/blocks.hpp"
#include "spinet/metrics.hpp"
#include "spinet/model.hpp"
#include "spinet/optim.hpp"
#include "spinet/rng.hpp"

namespace spinet {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, DType dtype = DType::f64, double sd = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal() * sd;
  return Tensor::from(std::move(shape), std::span<const double>(v), dtype);
}

// Scalar probe sum(y * w) with a fixed random weight per output shape.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0x70be);
  return sum(mul(y, random_tensor(y.shape(), rng, y.dtype())));
}

std::vector<std::size_t> permute_axis_indices(std::size_t n, Rng& rng) { return random_permutation(n, rng); }

CheckResult make(std::string name, double measured, double tolerance, std::string detail = {}) {
  return {std::move(name), measured <= tolerance, measured, tolerance, std::move(detail)};
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

template <class F>
CheckResult worst_over_seeds(std::string name, int seeds, std::uint64_t base, double tolerance, F&& per_seed) {
  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) worst = std::max(worst, per_seed(base + static_cast<std::uint64_t>(s)));
  return make(std::move(name), worst, tolerance, std::to_string(seeds) + " seeds");
}

BlockConfig tiny_blocks() {
  BlockConfig c;
  c.channels = 4;
  c.attention_bottleneck = 2;
  c.n_tefa = 1;
  c.upscale = 2;
  return c;
}

}  // namespace

double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  if (a.size() != b.size()) throw ShapeError("relative_error: size mismatch");
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

GradientCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& targets, double step) {
  std::vector<Tensor> ts = targets;
  for (auto& t : ts) {
    if (t.dtype() != DType::f64) throw UsageError("gradient check: targets must be f64");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::uint64_t base_pattern = 0;
  {
    Tape tape;
    TapeScope scope(tape);
    ActivationPatternScope pattern;
    const Tensor l = loss();
    tape.backward(l);
    base_pattern = pattern.signature();
  }
  auto evaluate = [&](bool& same_pattern) {
    ActivationPatternScope pattern;
    const double v = loss().item();
    same_pattern = same_pattern && pattern.signature() == base_pattern;
    return v;
  };
  // Errors are measured against the largest finite-difference magnitude over
  // all targets, so targets whose true gradient vanishes (e.g. a bias that
  // softmax cancels) do not turn rounding noise into a huge ratio.
  GradientCheck result;
  std::vector<double> analytic_all;
  std::vector<double> numeric_all;
  for (auto& t : ts) {
    const std::vector<double> analytic =
        t.has_grad() ? t.grad_values() : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
    auto data = t.mutable_data<double>();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = data[i];
      bool smooth = true;
      data[i] = v + step;
      const double up = evaluate(smooth);
      data[i] = v - step;
      const double down = evaluate(smooth);
      data[i] = v;
      ++result.evaluated;
      if (!smooth) {
        ++result.skipped;
        continue;
      }
      analytic_all.push_back(analytic[i]);
      numeric_all.push_back((up - down) / (2.0 * step));
    }
    t.zero_grad();
  }
  result.max_relative_error = relative_error(analytic_all, numeric_all, 1e-8);
  return result;
}

double gradient_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& targets, double step) {
  return check_gradients(loss, targets, step).max_relative_error;
}

std::vector<CheckResult> run_equivariance_checks(const CheckOptions& options) {
  std::vector<CheckResult> out;
  const std::uint64_t seed = options.seed;
  BlockConfig cfg;
  cfg.channels = 8;
  cfg.attention_bottleneck = 3;

  auto equivariance = [&](const char* name, auto&& block) {
    Rng rng = Rng::stream(seed, 0xe0);
    const Tensor x = random_tensor({2, 5, cfg.channels, 8, 8}, rng, DType::f32);
    const Tensor y = block(x);
    double worst = 0.0;
    for (int i = 0; i < options.permutations; ++i) {
      const auto perm = permute_axis_indices(5, rng);
      const Tensor y_perm = block(take(x, 1, perm));
      worst = std::max(worst, relative_error(y_perm.values(), take(y, 1, perm).values()));
    }
    out.push_back(make(name, worst, 1e-5, std::to_string(options.permutations) + " permutations"));
  };

  Rng prng = Rng::stream(seed, 0xe1);
  auto teb = TebParams::make(cfg, DType::f32, prng);
  auto tefa = TefaParams::make(cfg, DType::f32, prng);
  auto tern = TernParams::make(cfg, DType::f32, prng);
  equivariance("teb temporal equivariance", [&](const Tensor& x) { return teb_forward(x, teb, cfg, Mode::train); });
  equivariance("tefa temporal equivariance", [&](const Tensor& x) { return tefa_forward(x, tefa, cfg, Mode::train); });
  equivariance("tern temporal equivariance", [&](const Tensor& x) { return tern_forward(x, tern, cfg); });

  {
    Rng rng = Rng::stream(seed, 0xe2);
    double worst = 0.0;
    for (int s = 0; s < 10; ++s) {
      const Tensor taps = tern_filters(random_tensor({1, 4, cfg.channels, 6, 6}, rng, DType::f32, 3.0), tern, cfg);
      const auto v = taps.values();
      const auto k2 = static_cast<std::size_t>(taps.dim(1));
      for (std::size_t r = 0; r < v.size() / k2; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k2; ++j) {
          if (v[r * k2 + j] < 0.0) worst = std::max(worst, 1.0);
          acc += v[r * k2 + j];
        }
        worst = std::max(worst, std::abs(acc - 1.0));
      }
    }
    out.push_back(make("tern taps non-negative and sum to one", worst, 1e-6));
  }

  {
    SPInetConfig mc = SPInetConfig::desk_scale();
    SPInet model(mc, seed);
    Rng rng = Rng::stream(seed, 0xe3);
    const Tensor x = random_tensor({1, 6, mc.bands, 8, 8}, rng, DType::f32, 0.3);
    const Tensor y = model.forward(x, Mode::eval);
    double worst = 0.0;
    for (int i = 0; i < options.permutations; ++i) {
      const auto perm = permute_axis_indices(6, rng);
      worst = std::max(worst, relative_error(model.forward(take(x, 1, perm), Mode::eval).values(), y.values()));
    }
    out.push_back(make("model temporal permutation invariance", worst, 1e-6,
                       std::to_string(options.permutations) + " permutations"));

    std::vector<std::size_t> bands(static_cast<std::size_t>(mc.bands));
    for (std::size_t b = 0; b < bands.size(); ++b) bands[b] = (b + 1) % bands.size();
    const double diff = relative_error(model.forward(take(x, 2, bands), Mode::eval).values(), y.values());
    CheckResult r = make("band permutation changes the output", 0.0, 0.0, "relative difference " + fmt("%.3g", diff));
    r.passed = diff > 1e-4;
    r.measured = diff;
    out.push_back(r);
  }
  return out;
}

std::vector<CheckResult> run_gradient_checks(const CheckOptions& options) {
  std::vector<CheckResult> out;
  const int seeds = options.gradient_seeds;
  const std::uint64_t base = options.seed;
  constexpr double tol = 1e-4;

  auto op = [&](const char* name, auto&& body) { out.push_back(worst_over_seeds(name, seeds, base, tol, body)); };

  op("add/mul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    return gradient_error([&] { return probe(mul(add(a, b), a), s); }, {a, b});
  });
  op("matmul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
    return gradient_error([&] { return probe(matmul(a, b), s); }, {a, b});
  });
  op("linear", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({4, 3}, rng), w = random_tensor({5, 3}, rng), b = random_tensor({5}, rng);
    return gradient_error([&] { return probe(linear(x, w, b), s); }, {x, w, b});
  });
  op("concat/mean/global_avg_pool", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 1, 3, 3}, rng);
    const Tensor parts[] = {a, b};
    return gradient_error(
        [&] {
          const Tensor c = concat(parts, 1);
          return add(probe(mean(c, {0, 2}), s), probe(global_avg_pool(c), s + 1));
        },
        {a, b});
  });
  op("sigmoid/leaky_relu/softmax", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({3, 5}, rng);
    return gradient_error([&] { return probe(softmax(leaky_relu(sigmoid(x), 0.2), 1), s); }, {x});
  });
  op("conv2d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({2, 3, 6, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    return gradient_error([&] { return probe(conv2d(x, w, b, 2, 1), s); }, {x, w, b});
  });
  op("dynamic_depthwise_conv", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({2, 3, 5, 5}, rng), taps = random_tensor({2, 9}, rng);
    return gradient_error([&] { return probe(dynamic_depthwise_conv(x, taps), s); }, {x, taps});
  });
  op("batch_norm", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({2, 3, 2, 3, 3}, rng), g = random_tensor({2}, rng), b = random_tensor({2}, rng);
    BatchNormState st;
    return gradient_error([&] { return probe(batch_norm(x, g, b, st, Mode::train), s); }, {x, g, b});
  });
  op("temporal_attention", [](std::uint64_t s) {
    Rng rng(s);
    Tensor q = random_tensor({2, 3, 4, 2, 2}, rng), k = random_tensor({2, 3, 4, 2, 2}, rng),
           v = random_tensor({2, 3, 4, 2, 2}, rng);
    return gradient_error([&] { return probe(temporal_attention(q, k, v), s); }, {q, k, v});
  });
  op("pixel_shuffle/resampling", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({1, 4, 3, 4}, rng);
    return gradient_error(
        [&] {
          return add(add(probe(pixel_shuffle(x, 2), s), probe(bilinear_resample(x, 5, 7), s + 1)),
                     add(probe(bicubic_resample(x, 2), s + 2), probe(box_downsample(pixel_shuffle(x, 2), 2), s + 3)));
        },
        {x});
  });
  op("bce_with_logits", [](std::uint64_t s) {
    Rng rng(s);
    Tensor z = random_tensor({2, 7}, rng, DType::f64, 3.0);
    std::vector<double> t(14);
    for (auto& v : t) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const Tensor target = Tensor::from({2, 7}, std::move(t));
    return gradient_error([&] { return bce_with_logits(z, target); }, {z});
  });

  const BlockConfig cfg = tiny_blocks();
  auto block = [&](const char* name, auto&& body) {
    out.push_back(worst_over_seeds(name, seeds, base, tol, [&](std::uint64_t s) {
      Rng rng(s);
      return body(s, rng);
    }));
  };
  auto params_of = [](auto& p, const char* prefix) {
    CollectingVisitor v;
    p.visit(prefix, v);
    std::vector<Tensor> ts;
    for (auto& [n, t] : v.params) ts.push_back(*t);
    return ts;
  };
  block("teb block", [&](std::uint64_t s, Rng& rng) {
    auto p = TebParams::make(cfg, DType::f64, rng);
    Tensor x = random_tensor({1, 2, 4, 5, 5}, rng);
    auto targets = params_of(p, "teb");
    targets.push_back(x);
    return gradient_error([&] { return probe(teb_forward(x, p, cfg, Mode::train), s); }, targets);
  });
  block("tefa block", [&](std::uint64_t s, Rng& rng) {
    auto p = TefaParams::make(cfg, DType::f64, rng);
    Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
    auto targets = params_of(p, "tefa");
    targets.push_back(x);
    return gradient_error([&] { return probe(tefa_forward(x, p, cfg, Mode::train), s); }, targets);
  });
  block("tern block", [&](std::uint64_t s, Rng& rng) {
    auto p = TernParams::make(cfg, DType::f64, rng);
    Tensor x = random_tensor({1, 3, 4, 5, 5}, rng);
    auto targets = params_of(p, "tern");
    targets.push_back(x);
    return gradient_error([&] { return probe(tern_forward(x, p, cfg), s); }, targets);
  });
  block("temporal mean + upsample head", [&](std::uint64_t s, Rng& rng) {
    auto p = UpsampleParams::make(cfg, DType::f64, rng);
    Tensor x = random_tensor({1, 3, 4, 3, 3}, rng);
    auto targets = params_of(p, "up");
    targets.push_back(x);
    return gradient_error([&] { return probe(upsample_head(temporal_mean(x), p, cfg), s); }, targets);
  });
  block("fusion head", [&](std::uint64_t s, Rng& rng) {
    auto p = MrfParams::make(cfg, DType::f64, rng);
    Tensor x = random_tensor({1, 4, 8, 8}, rng);
    auto targets = params_of(p, "mrf");
    targets.push_back(x);
    return gradient_error([&] { return probe(mrf_forward(x, p, cfg), s); }, targets);
  });
  block("ablation head", [&](std::uint64_t s, Rng& rng) {
    BlockConfig small = cfg;
    small.channels = 2;
    small.attention_bottleneck = 1;
    auto p = AblationHeadParams::make(small, DType::f64, rng);
    Tensor x = random_tensor({1, 2, 8, 8}, rng);
    auto targets = params_of(p, "head");
    targets.push_back(x);
    return gradient_error([&] { return probe(mrf_ablation_head(x, p, small, Mode::train), s); }, targets);
  });
  return out;
}

std::vector<CheckResult> run_oracle_checks(const CheckOptions& options) {
  std::vector<CheckResult> out;
  {
    Rng rng = Rng::stream(options.seed, 0x0c);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto n = static_cast<std::int64_t>(1 + rng.below(2));
      const auto cin = static_cast<std::int64_t>(1 + rng.below(4));
      const auto cout = static_cast<std::int64_t>(1 + rng.below(4));
      const auto k = static_cast<std::int64_t>(1 + rng.below(3) * 2);
      const int stride = static_cast<int>(1 + rng.below(3));
      const int pad = static_cast<int>(rng.below(3));
      const auto h = static_cast<std::int64_t>(k + rng.below(6));
      const auto w = static_cast<std::int64_t>(k + rng.below(6));
      const Tensor x = random_tensor({n, cin, h, w}, rng, DType::f32);
      const Tensor wt = random_tensor({cout, cin, k, k}, rng, DType::f32);
      const Tensor b = random_tensor({cout}, rng, DType::f32);
      worst = std::max(worst, relative_error(conv2d(x, wt, b, stride, pad).values(),
                                             conv2d_reference(x, wt, b, stride, pad).values()));
    }
    out.push_back(make("conv2d matches reference (f32, 50 configs)", worst, 1e-6));
  }
  {
    Rng rng = Rng::stream(options.seed, 0x0d);
    const Tensor x = random_tensor({2, 3, 4, 5}, rng, DType::f32);
    const bool exact = space_to_depth(pixel_shuffle(reshape(x, {2, 12, 1, 5}), 2), 2).values() ==
                       reshape(x, {2, 12, 1, 5}).values();
    const Tensor y = random_tensor({1, 8, 3, 3}, rng, DType::f32);
    const bool exact2 = space_to_depth(pixel_shuffle(y, 2), 2).values() == y.values();
    CheckResult r = make("pixel_shuffle inverse is exact", exact && exact2 ? 0.0 : 1.0, 0.0);
    out.push_back(r);
  }
  {
    double worst = 0.0;
    worst = std::max(worst, std::abs(mcc({1, 0, 1, 0}) - 1.0));
    worst = std::max(worst, std::abs(mcc({0, 1, 0, 1}) + 1.0));
    worst = std::max(worst, std::abs(mcc({5, 0, 0, 0})));
    worst = std::max(worst, std::abs(mcc({2, 1, 3, 1}) - 5.0 / 12.0));
    out.push_back(make("mcc closed cases", worst, 0.0));
  }
  {
    const Tensor z = Tensor::from({3}, std::vector<double>{0.0, 50.0, 1.0});
    const Tensor t = Tensor::from({3}, std::vector<double>{1.0, 1.0, 1.0});
    // mean of ln 2, ~0, softplus(-1)
    const double expected = (std::log(2.0) + std::log1p(std::exp(-50.0)) + std::log1p(std::exp(-1.0))) / 3.0;
    out.push_back(make("bce closed values", std::abs(bce_with_logits(z, t).item() - expected), 1e-12));
  }
  {
    const Tensor q = Tensor::from({1, 2, 1}, std::vector<double>{1.0, 0.0});
    const Tensor k = Tensor::from({1, 2, 1}, std::vector<double>{1.0, -1.0});
    const Tensor v = Tensor::from({1, 2, 1}, std::vector<double>{2.0, 0.0});
    const double expected = 2.0 * std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0));
    out.push_back(make("attention scalar case", std::abs(temporal_attention(q, k, v).value(0) - expected), 1e-12));
  }
  {
    ParameterSet ps;
    ps.add("p", Tensor::from({1}, std::vector<double>{0.0}));
    ps.items()[0].tensor.mutable_grad_data<double>()[0] = 1.0;
    adam_step(ps, {.lr = 1e-3});
    out.push_back(make("adam first step", std::abs(ps.items()[0].tensor.value(0) + 1e-3), 1e-6));
  }
  return out;
}

std::vector<CheckResult> run_check_suite(const std::string& suite, const CheckOptions& options) {
  if (suite == "equivariance") return run_equivariance_checks(options);
  if (suite == "gradients") return run_gradient_checks(options);
  if (suite == "oracles") return run_oracle_checks(options);
  if (suite == "all") {
    auto all = run_equivariance_checks(options);
    for (auto& r : run_gradient_checks(options)) all.push_back(std::move(r));
    for (auto& r : run_oracle_checks(options)) all.push_back(std::move(r));
    return all;
  }
  throw ConfigError("unknown check suite '" + suite + "' (expected equivariance, gradients, oracles or all)");
}

}  // namespace spinet
