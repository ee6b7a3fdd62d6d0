#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "spinet/ops.hpp"
#include "spinet/optim.hpp"
#include "spinet/tensor.hpp"

using namespace spinet;
using spinet::testing::finite_difference_error;
using spinet::testing::random_f32;
using spinet::testing::random_f64;

namespace {

Tensor f64(const Shape& shape, std::vector<double> values) { return Tensor::from(shape, std::move(values)); }

double max_rel(const Tensor& a, const Tensor& b) {
  const auto x = a.values(), y = b.values();
  double diff = 0.0, scale = 1e-30;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(x[i] - y[i]));
    scale = std::max(scale, std::abs(y[i]));
  }
  return diff / scale;
}

// Random weighted sum, so every output element carries a distinct gradient.
Tensor probe(const Tensor& y, std::uint64_t seed) { return sum(mul(y, random_f64(y.shape(), seed + 1000))); }

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("numel matches data length and grad mirrors shape") {
    Tensor t = random_f64({2, 3, 4}, 1, 1.0, true);
    CHECK(t.numel() == 24);
    CHECK(t.values().size() == 24);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(t));
    CHECK(t.grad().shape() == t.shape());
    CHECK(t.grad().dtype() == t.dtype());
  }

  TEST_CASE("construction rejects a length that disagrees with the shape") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  }

  TEST_CASE("non-finite forward results raise") {
    const Tensor big = f64({2}, {1e300, -1e300});
    CHECK_THROWS_AS(scale(big, 1e300), NumericError);
  }

  TEST_CASE("identical inputs give bit-identical outputs") {
    const Tensor x = random_f32({2, 3, 9, 9}, 4);
    const Tensor w = random_f32({5, 3, 3, 3}, 5);
    CHECK(conv2d(x, w, Tensor{}, 1, 1).values() == conv2d(x, w, Tensor{}, 1, 1).values());
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("2x2 window dot product") {
    const Tensor y = conv2d(f64({1, 1, 2, 2}, {1, 2, 3, 4}), f64({1, 1, 2, 2}, {1, 0, 0, 1}), f64({1}, {0}), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 5.0);
  }

  TEST_CASE("identity and zero kernels") {
    const Tensor x = random_f64({2, 1, 5, 6}, 2);
    CHECK(conv2d(x, f64({1, 1, 1, 1}, {1}), f64({1}, {0}), 1, 0).values() == x.values());
    const Tensor z = conv2d(x, Tensor::zeros({3, 1, 3, 3}, DType::f64), Tensor::zeros({3}, DType::f64), 1, 1);
    for (double v : z.values()) CHECK(v == 0.0);
  }

  TEST_CASE("output extent formula") {
    const Tensor y = conv2d(random_f64({1, 2, 9, 7}, 3), random_f64({4, 2, 3, 2}, 4), Tensor{}, 2, 1);
    CHECK(y.shape() == Shape{1, 4, (9 + 2 - 3) / 2 + 1, (7 + 2 - 2) / 2 + 1});
  }

  TEST_CASE("errors") {
    const Tensor x = random_f64({1, 3, 5, 5}, 1);
    CHECK_THROWS_AS(conv2d(x, random_f64({2, 2, 3, 3}, 2), Tensor{}, 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, random_f64({2, 3, 3, 3}, 2), Tensor{}, 0, 1), ConfigError);
    CHECK_THROWS_AS(conv2d(x, random_f64({2, 3, 9, 9}, 2), Tensor{}, 1, 1), ShapeError);
  }

  TEST_CASE("matches the reference loops") {
    SUBCASE("seed 17, stride 1") {
      const Tensor x = random_f32({2, 3, 5, 5}, 17), w = random_f32({4, 3, 3, 3}, 117), b = random_f32({4}, 217);
      CHECK(max_rel(conv2d(x, w, b, 1, 1), conv2d_reference(x, w, b, 1, 1)) <= 1e-6);
      CHECK(max_rel(conv2d(x, w, b, 1, 0), conv2d_reference(x, w, b, 1, 0)) <= 1e-6);
    }
    SUBCASE("seed 18, stride 2 pad 1") {
      const Tensor x = random_f32({2, 3, 8, 7}, 18), w = random_f32({4, 3, 3, 3}, 118), b = random_f32({4}, 218);
      CHECK(max_rel(conv2d(x, w, b, 2, 1), conv2d_reference(x, w, b, 2, 1)) <= 1e-6);
    }
    SUBCASE("f64") {
      const Tensor x = random_f64({2, 3, 8, 7}, 19), w = random_f64({4, 3, 3, 3}, 119), b = random_f64({4}, 219);
      CHECK(max_rel(conv2d(x, w, b, 2, 1), conv2d_reference(x, w, b, 2, 1)) <= 1e-13);
    }
  }
}

TEST_SUITE("nonlinearities") {
  TEST_CASE("leaky relu values") {
    CHECK(leaky_relu(f64({3}, {1.0, -1.0, 0.0}), 0.2).values() == std::vector<double>{1.0, -0.2, 0.0});
  }

  TEST_CASE("leaky relu derivative at zero is one") {
    Tensor x = f64({1}, {0.0});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(leaky_relu(x, 0.2)));
    CHECK(x.grad_values()[0] == 1.0);
  }

  TEST_CASE("softmax rows are a distribution") {
    const Tensor s = softmax(random_f64({4, 7}, 9, 5.0), 1);
    const auto v = s.values();
    for (int r = 0; r < 4; ++r) {
      double total = 0.0;
      for (int c = 0; c < 7; ++c) {
        CHECK(v[r * 7 + c] >= 0.0);
        total += v[r * 7 + c];
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_SUITE("batch_norm") {
  BatchNormState fresh_state(int channels) {
    BatchNormState s;
    s.running_mean = Tensor::zeros({channels}, DType::f64);
    s.running_var = Tensor::full({channels}, 1.0, DType::f64);
    return s;
  }

  TEST_CASE("constant input gives beta") {
    BatchNormState s = fresh_state(2);
    const Tensor y = batch_norm(Tensor::full({3, 2, 4, 4}, 7.5, DType::f64), f64({2}, {2.0, -3.0}), f64({2}, {0.25, -1.5}),
                                s, Mode::train);
    const auto v = y.values();
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == (i / 16 % 2 == 0 ? 0.25 : -1.5));
  }

  TEST_CASE("standardized input is scaled by 1/sqrt(1+eps)") {
    // Per channel: values +1 and -1 in equal numbers, so mean 0 and biased variance 1.
    std::vector<double> x(2 * 1 * 2 * 2);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = i % 2 == 0 ? 1.0 : -1.0;
    BatchNormState s = fresh_state(1);
    const Tensor y = batch_norm(f64({2, 1, 2, 2}, x), f64({1}, {1.0}), f64({1}, {0.0}), s, Mode::train);
    const auto v = y.values();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(v[i] == doctest::Approx(x[i] / std::sqrt(1.0 + kBatchNormEps)));
  }

  TEST_CASE("eval with unit running statistics is the identity") {
    BatchNormState s = fresh_state(3);
    s.initialized = true;
    const Tensor x = random_f64({2, 3, 4, 4}, 21);
    const Tensor y = batch_norm(x, Tensor::full({3}, 1.0, DType::f64), Tensor::zeros({3}, DType::f64), s, Mode::eval, 0.0);
    CHECK(max_rel(y, x) <= 1e-15);
  }

  TEST_CASE("eval before any statistics raises") {
    BatchNormState s;
    CHECK_THROWS_AS(batch_norm(random_f64({1, 2, 3, 3}, 1), Tensor::full({2}, 1.0, DType::f64),
                               Tensor::zeros({2}, DType::f64), s, Mode::eval),
                    StateError);
  }

  TEST_CASE("5-D statistics are shared over time") {
    BatchNormState s5 = fresh_state(3), s4 = fresh_state(3);
    const Tensor x = random_f64({2, 4, 3, 5, 5}, 22);
    const Tensor gamma = random_f64({3}, 23), beta = random_f64({3}, 24);
    const Tensor y5 = batch_norm(x, gamma, beta, s5, Mode::train);
    // Same data laid out as [N*T, C, H, W] must normalize identically.
    const Tensor y4 = batch_norm(reshape(x, {8, 3, 5, 5}), gamma, beta, s4, Mode::train);
    CHECK(max_rel(y5, reshape(y4, x.shape())) <= 1e-12);
  }
}

TEST_SUITE("temporal_attention") {
  TEST_CASE("single frame returns v") {
    const Tensor v = random_f64({2, 1, 3}, 2);
    CHECK(max_rel(temporal_attention(random_f64({2, 1, 3}, 1), random_f64({2, 1, 3}, 3), v), v) == 0.0);
  }

  TEST_CASE("equal keys average v over time") {
    std::vector<double> k(1 * 4 * 2, 0.5);
    const Tensor v = random_f64({1, 4, 2}, 5);
    const auto out = temporal_attention(random_f64({1, 4, 2}, 4), f64({1, 4, 2}, k), v).values();
    const auto vv = v.values();
    for (int d = 0; d < 2; ++d) {
      const double mean = (vv[d] + vv[2 + d] + vv[4 + d] + vv[6 + d]) / 4.0;
      for (int t = 0; t < 4; ++t) CHECK(out[t * 2 + d] == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  TEST_CASE("scalar softmax oracle") {
    const Tensor out = temporal_attention(f64({1, 2, 1}, {1.0, 0.0}), f64({1, 2, 1}, {1.0, -1.0}), f64({1, 2, 1}, {2.0, 0.0}));
    CHECK(out.values()[0] == doctest::Approx(2.0 * std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0))).epsilon(1e-12));
    CHECK(out.values()[0] == doctest::Approx(1.7616).epsilon(1e-4));
  }

  TEST_CASE("empty time axis raises") {
    const Tensor e = Tensor::zeros({1, 0, 2}, DType::f64);
    CHECK_THROWS_AS(temporal_attention(e, e, e), EmptyInputError);
  }
}

TEST_SUITE("resampling") {
  TEST_CASE("pixel shuffle layout") {
    const Tensor y = pixel_shuffle(f64({1, 4, 1, 1}, {1, 2, 3, 4}), 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.values() == std::vector<double>{1, 2, 3, 4});
  }

  TEST_CASE("pixel shuffle r=1 and inverse are exact") {
    const Tensor x = random_f64({2, 18, 3, 5}, 5);
    CHECK(pixel_shuffle(x, 1).values() == x.values());
    CHECK(space_to_depth(pixel_shuffle(x, 3), 3).values() == x.values());
  }

  TEST_CASE("pixel shuffle channel check") {
    CHECK_THROWS_AS(pixel_shuffle(random_f64({1, 6, 2, 2}, 1), 2), ShapeError);
  }

  TEST_CASE("bilinear: constants, identity and the coordinate formula") {
    const Tensor c = Tensor::full({1, 2, 3, 5}, 0.3, DType::f64);
    for (double v : bilinear_resample(c, 7, 2).values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
    const Tensor x = random_f64({1, 2, 4, 6}, 6);
    CHECK(max_rel(bilinear_resample(x, 4, 6), x) <= 1e-15);

    const std::vector<double> signal{0.0, 1.0};
    const auto y = bilinear_resample(f64({1, 1, 1, 2}, signal), 1, 4).values();
    for (int o = 0; o < 4; ++o) CHECK(y[o] == doctest::Approx(spinet::testing::bilinear_1d(signal, 4, o)).epsilon(1e-15));
    CHECK(y == std::vector<double>{0.0, 0.25, 0.75, 1.0});
  }

  TEST_CASE("bicubic: constants, identity and linear ramps") {
    for (double v : bicubic_resample(Tensor::full({1, 1, 4, 4}, -0.7, DType::f64), 4).values())
      CHECK(v == doctest::Approx(-0.7).epsilon(1e-14));
    const Tensor x = random_f64({1, 2, 3, 3}, 7);
    CHECK(max_rel(bicubic_resample(x, 1), x) <= 1e-15);

    // Ramp along x: value = 2 * column + 1. Interior outputs (at least two
    // source pixels from either edge) must land on the continuous ramp.
    const std::int64_t n = 10;
    std::vector<double> ramp(n * n);
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t xx = 0; xx < n; ++xx) ramp[y * n + xx] = 2.0 * xx + 1.0;
    const auto up = bicubic_resample(f64({1, 1, n, n}, ramp), 2).values();
    for (std::int64_t ox = 4; ox < 2 * n - 4; ++ox) {
      const double src = (ox + 0.5) / 2.0 - 0.5;
      CHECK(std::abs(up[5 * 2 * n + ox] - (2.0 * src + 1.0)) <= 1e-6);
    }
  }

  TEST_CASE("box downsample averages windows") {
    const Tensor y = box_downsample(f64({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), 2);
    CHECK(y.values() == std::vector<double>{3.5, 5.5});
  }
}

TEST_SUITE("bce_with_logits") {
  TEST_CASE("closed forms") {
    CHECK(bce_with_logits(f64({2}, {0, 0}), f64({2}, {0, 1})).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_with_logits(f64({1}, {50}), f64({1}, {1})).item() < 1e-20);
    CHECK(bce_with_logits(f64({1}, {1}), f64({1}, {1})).item() == doctest::Approx(0.313262).epsilon(1e-6));
    CHECK(bce_with_logits(f64({1}, {1}), f64({1}, {1})).item() == doctest::Approx(std::log1p(std::exp(-1.0))));
  }

  TEST_CASE("stable at extreme logits") {
    const Tensor l = bce_with_logits(f64({4}, {1e6, -1e6, 1e6, -1e6}), f64({4}, {0, 1, 1, 0}));
    CHECK(std::isfinite(l.item()));
    CHECK(l.item() == doctest::Approx(5e5));
  }

  TEST_CASE("gradient is (sigmoid - target) / count") {
    Tensor z = f64({3}, {0.3, -1.2, 2.0});
    z.set_requires_grad(true);
    const std::vector<double> t{1, 0, 0};
    Tape tape;
    TapeScope scope(tape);
    tape.backward(bce_with_logits(z, f64({3}, t)));
    const auto g = z.grad_values();
    const auto zv = z.values();
    for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx((1.0 / (1.0 + std::exp(-zv[i])) - t[i]) / 3.0).epsilon(1e-14));
  }

  TEST_CASE("non-binary target raises") {
    CHECK_THROWS_AS(bce_with_logits(f64({1}, {0}), f64({1}, {0.5})), ValidationError);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum and square") {
    Tensor x = f64({3}, {1, 2, 3});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(x, x)));
    CHECK(x.grad_values() == std::vector<double>{2, 4, 6});
  }

  TEST_CASE("sum gives ones for any shape") {
    Tensor x = random_f64({2, 3, 4}, 1, 1.0, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
    for (double g : x.grad_values()) CHECK(g == 1.0);
  }

  TEST_CASE("second backward doubles, zero_grad resets") {
    Tensor x = f64({2}, {1.5, -2.0});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad_values() == std::vector<double>{6.0, -8.0});
    x.zero_grad();
    CHECK(x.grad_values() == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("fan-out accumulates") {
    Tensor x = f64({1}, {3.0});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(add(add(x, x), mul(x, x))));
    CHECK(x.grad_values()[0] == 2.0 + 6.0);
  }

  TEST_CASE("non-scalar loss raises, empty tape is a no-op") {
    Tensor x = random_f64({3}, 1, 1.0, true);
    Tape tape;
    TapeScope scope(tape);
    CHECK_THROWS_AS(tape.backward(x), UsageError);
    Tape empty;
    const Tensor s = Tensor::scalar(1.0, DType::f64);
    CHECK_NOTHROW(empty.backward(s));
    CHECK(empty.empty());
  }
}

TEST_SUITE("finite differences") {
  // The acceptance binary runs the full multi-seed sweep; three seeds here
  // keep the unit run short.
  constexpr double kTol = 1e-4;

  TEST_CASE("elementwise, shape and reduction ops") {
    for (std::uint64_t s = 0; s < 3; ++s) {
      CAPTURE(s);
      Tensor a = random_f64({2, 3, 4}, s), b = random_f64({2, 3, 4}, s + 50);
      CHECK(finite_difference_error([&] { return probe(add(a, b), s); }, {a, b}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(sub(a, b), s); }, {a, b}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(mul(a, b), s); }, {a, b}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(scale(a, -1.7), s); }, {a}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(sigmoid(a), s); }, {a}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(softmax(a, 1), s); }, {a}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(leaky_relu(a, 0.2), s); }, {a}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(relu(a), s); }, {a}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(mean(a, {0, 2}), s); }, {a}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(global_avg_pool(a), s); }, {a}) <= kTol);
      const Tensor parts[] = {a, b};
      CHECK(finite_difference_error([&] { return probe(concat(parts, 1), s); }, {a, b}) <= kTol);
      Tensor g = random_f64({2, 3}, s + 7);
      CHECK(finite_difference_error([&] { return probe(scale_blocks(a, g), s); }, {a, g}) <= kTol);
    }
  }

  TEST_CASE("matmul and linear") {
    for (std::uint64_t s = 0; s < 3; ++s) {
      Tensor a = random_f64({3, 4}, s), b = random_f64({4, 5}, s + 1), w = random_f64({5, 4}, s + 2),
             bias = random_f64({5}, s + 3);
      CHECK(finite_difference_error([&] { return probe(matmul(a, b), s); }, {a, b}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(linear(a, w, bias), s); }, {a, w, bias}) <= kTol);
    }
  }

  TEST_CASE("convolution, normalization, attention, resampling, loss") {
    for (std::uint64_t s = 0; s < 3; ++s) {
      CAPTURE(s);
      Tensor x = random_f64({2, 3, 6, 5}, s), w = random_f64({4, 3, 3, 3}, s + 1), b = random_f64({4}, s + 2);
      CHECK(finite_difference_error([&] { return probe(conv2d(x, w, b, 2, 1), s); }, {x, w, b}) <= kTol);
      Tensor taps = random_f64({6, 9}, s + 3);
      CHECK(finite_difference_error([&] { return probe(dynamic_depthwise_conv(reshape(x, {6, 1, 6, 5}), taps), s); },
                                    {x, taps}) <= kTol);

      Tensor gamma = random_f64({3}, s + 4), beta = random_f64({3}, s + 5);
      BatchNormState st;
      st.running_mean = Tensor::zeros({3}, DType::f64);
      st.running_var = Tensor::full({3}, 1.0, DType::f64);
      CHECK(finite_difference_error([&] { return probe(batch_norm(x, gamma, beta, st, Mode::train), s); },
                                    {x, gamma, beta}) <= kTol);

      Tensor q = random_f64({2, 4, 3, 2, 2}, s + 6), k = random_f64({2, 4, 3, 2, 2}, s + 7),
             v = random_f64({2, 4, 3, 2, 2}, s + 8);
      CHECK(finite_difference_error([&] { return probe(temporal_attention(q, k, v), s); }, {q, k, v}) <= kTol);

      Tensor ps = random_f64({1, 8, 2, 3}, s + 9);
      CHECK(finite_difference_error([&] { return probe(pixel_shuffle(ps, 2), s); }, {ps}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(bilinear_resample(x, 9, 4), s); }, {x}) <= kTol);
      CHECK(finite_difference_error([&] { return probe(bicubic_resample(x, 2), s); }, {x}) <= kTol);

      Tensor z = random_f64({12}, s + 10, 2.0);
      const Tensor t = f64({12}, {1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1});
      CHECK(finite_difference_error([&] { return bce_with_logits(z, t); }, {z}) <= kTol);
    }
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradient leaves fresh parameters unchanged") {
    ParameterSet params;
    params.add("w", random_f64({4}, 3));
    const auto before = params.items()[0].tensor.values();
    params.items()[0].tensor.ensure_grad();
    adam_step(params, AdamOptions{});
    CHECK(params.items()[0].tensor.values() == before);
    CHECK(params.items()[0].step_count == 1);
  }

  TEST_CASE("first step moves by lr") {
    ParameterSet params;
    params.add("w", f64({1}, {0.0}));
    auto& p = params.items()[0];
    p.tensor.ensure_grad();
    p.tensor.mutable_grad_data<double>()[0] = 1.0;
    AdamOptions o;
    o.lr = 1e-3;
    adam_step(params, o);
    CHECK(std::abs(p.tensor.values()[0] + 0.001) <= 1e-6);
  }

  TEST_CASE("two steps equal the scalar reference exactly") {
    ParameterSet params;
    params.add("w", f64({1}, {0.5}));
    auto& p = params.items()[0];
    spinet::testing::ScalarAdam ref;
    AdamOptions o;
    o.lr = ref.lr;
    double expect = 0.5;
    for (int i = 0; i < 2; ++i) {
      p.tensor.zero_grad();
      p.tensor.mutable_grad_data<double>()[0] = 0.3;
      adam_step(params, o);
      expect = ref.step(expect, 0.3);
    }
    CHECK(p.tensor.values()[0] == expect);
  }

  TEST_CASE("missing gradient raises") {
    ParameterSet params;
    params.add("w", f64({1}, {0.0}));
    CHECK_THROWS_AS(adam_step(params, AdamOptions{}), StateError);
  }

  TEST_CASE("moments start at zero and names are unique") {
    ParameterSet params;
    auto& p = params.add("w", random_f64({2, 2}, 1));
    CHECK(p.tensor.requires_grad());
    for (double v : p.adam_m.values()) CHECK(v == 0.0);
    for (double v : p.adam_v.values()) CHECK(v == 0.0);
    CHECK_THROWS(params.add("w", random_f64({1}, 2)));
    CHECK_THROWS(params.add("", random_f64({1}, 2)));
  }
}
