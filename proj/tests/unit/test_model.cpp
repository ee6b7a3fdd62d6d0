#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "spinet/checkpoint.hpp"
#include "spinet/checks.hpp"
#include "spinet/model.hpp"

using namespace spinet;
using spinet::testing::random_f32;
using spinet::testing::TempDir;

namespace {

SPInetConfig tiny_config() {
  SPInetConfig c;
  c.channels = 6;
  c.attention_bottleneck = 2;
  c.n_tefa = 1;
  return c;
}

Tensor uniform_input(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(dist(engine));
  return Tensor::from(shape, std::move(v));
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), std::mt19937_64(seed));
  return p;
}

double max_rel(const Tensor& a, const Tensor& b) { return relative_error(a.values(), b.values(), 1e-30); }

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FormatError::Kind load_error(const std::filesystem::path& path) {
  try {
    load_checkpoint(path);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("load succeeded");
  return FormatError::Kind::io;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("validation") {
    SPInetConfig c;
    c.bands = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SPInetConfig{};
    c.channels = c.attention_bottleneck;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SPInetConfig{};
    c.n_tefa = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SPInetConfig{};
    c.upscale = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("scales and JSON round trip") {
    const SPInetConfig paper = SPInetConfig::paper_scale();
    CHECK(paper.bands == 12);
    CHECK(paper.channels == 48);
    CHECK(paper.n_tefa == 16);
    CHECK(paper.attention_bottleneck == 6);
    const SPInetConfig desk = SPInetConfig::desk_scale();
    CHECK(desk.bands == 4);
    CHECK(desk.channels == 16);
    CHECK(desk.n_tefa == 4);
    CHECK(SPInetConfig::from_json(paper.to_json()) == paper);
    CHECK_THROWS_AS(SPInetConfig::from_json("{\"bands\":4}"), ConfigError);
  }
}

TEST_SUITE("parameter_count") {
  TEST_CASE("hand count of the minimal config") {
    SPInetConfig c;
    c.bands = 1;
    c.channels = 2;
    c.attention_bottleneck = 1;
    c.n_tefa = 1;
    // input 9*1*2+2; TEFA 2*(36+4+3*6) + (2+1) + (2+2); TERN (2+1) + (9+9);
    // upsample 9*2*2*16 + 2*16; fusion 4*38 + 6*38 + 6*6 + 4*146 + 9.
    const std::int64_t expected = 20 + 123 + 21 + 608 + (152 + 228 + 36 + 584 + 9);
    CHECK(parameter_count(c) == expected);
    SPInet model(c, 0);
    CHECK(model.parameters().element_count() == expected);
  }

  TEST_CASE("registered tensors match the closed form") {
    for (bool mrf : {true, false}) {
      SPInetConfig c;
      c.use_mrf = mrf;
      SPInet model(c, 0);
      CHECK(model.parameters().element_count() == parameter_count(c));
    }
  }

  TEST_CASE("ablation parity and growth in F") {
    SPInetConfig with, without;
    without.use_mrf = false;
    const double a = static_cast<double>(parameter_count(with)), b = static_cast<double>(parameter_count(without));
    CHECK(std::abs(a - b) / a <= 0.15);
    SPInetConfig wide = with;
    wide.channels = 2 * with.channels;
    CHECK(parameter_count(wide) > 2 * parameter_count(with));
  }
}

TEST_SUITE("forward") {
  TEST_CASE("paper-shaped input") {
    SPInetConfig c = tiny_config();
    c.bands = 12;
    SPInet model(c, 1);
    CHECK(model.forward(uniform_input({1, 20, 12, 32, 32}, 1), Mode::eval).shape() == Shape{1, 1, 128, 128});
    CHECK(model.forward(uniform_input({1, 1, 12, 32, 32}, 2), Mode::eval).shape() == Shape{1, 1, 128, 128});
  }

  TEST_CASE("input errors") {
    SPInet model(tiny_config(), 1);
    CHECK_THROWS_AS(model.forward(uniform_input({1, 3, 5, 8, 8}, 1), Mode::eval), ShapeError);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 0, 4, 8, 8}), Mode::eval), EmptyInputError);
    CHECK_THROWS_AS(model.forward(uniform_input({1, 3, 4, 7, 8}, 1), Mode::eval), ShapeError);
  }

  TEST_CASE("temporal permutation invariance, 20 permutations") {
    SPInet model(SPInetConfig::desk_scale(), 3);
    const Tensor x = uniform_input({1, 6, 4, 8, 8}, 3);
    const Tensor ref = model.forward(x, Mode::eval);
    for (std::uint64_t s = 0; s < 20; ++s)
      CHECK(max_rel(model.forward(take(x, 1, shuffled(6, s)), Mode::eval), ref) <= 1e-6);
  }

  TEST_CASE("averaging over permutations adds nothing") {
    SPInet model(SPInetConfig::desk_scale(), 4);
    const Tensor x = uniform_input({1, 5, 4, 8, 8}, 4);
    const Tensor single = model.forward(x, Mode::eval);
    std::vector<double> avg(static_cast<std::size_t>(single.numel()), 0.0);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto v = model.forward(take(x, 1, shuffled(5, s)), Mode::eval).values();
      for (std::size_t i = 0; i < v.size(); ++i) avg[i] += v[i] / 10.0;
    }
    CHECK(relative_error(avg, single.values(), 1e-30) <= 1e-6);
  }

  TEST_CASE("T=1 and T=8 give different outputs") {
    SPInet model(SPInetConfig::desk_scale(), 5);
    const Tensor x = uniform_input({1, 8, 4, 8, 8}, 5);
    const std::vector<std::size_t> first{0};
    CHECK(model.forward(take(x, 1, first), Mode::eval).values() != model.forward(x, Mode::eval).values());
  }

  TEST_CASE("band permutation changes the output") {
    SPInet model(SPInetConfig::desk_scale(), 6);
    const Tensor x = uniform_input({1, 3, 4, 8, 8}, 6);
    const std::vector<std::size_t> bands{1, 0, 3, 2};
    CHECK(max_rel(model.forward(take(x, 2, bands), Mode::eval), model.forward(x, Mode::eval)) > 1e-3);
  }

  TEST_CASE("gradient reaches the first convolution") {
    SPInet model(tiny_config(), 7);
    const Tensor x = uniform_input({2, 3, 4, 8, 8}, 7);
    std::vector<float> y(2 * 32 * 32);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>((i / 7) % 2);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(bce_with_logits(model.forward(x, Mode::train), Tensor::from({2, 1, 32, 32}, std::move(y))));
    double norm = 0.0;
    for (double g : model.input_conv().weight.grad_values()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_SUITE("predict") {
  TEST_CASE("saturated logits and the tie rule") {
    for (double v : threshold_logits(Tensor::full({1, 1, 4, 4}, 10.0), 0.5).values()) CHECK(v == 1.0);
    for (double v : threshold_logits(Tensor::full({1, 1, 4, 4}, -10.0), 0.5).values()) CHECK(v == 0.0);
    CHECK(threshold_logits(Tensor::full({1}, 0.0), 0.5).values()[0] == 1.0);
    CHECK_THROWS_AS(threshold_logits(Tensor::full({1}, 0.0), 1.0), ConfigError);
  }

  TEST_CASE("predict is binary with the forward shape") {
    SPInet model(tiny_config(), 8);
    for (double v : model.predict(uniform_input({1, 2, 4, 8, 8}, 8)).values()) CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save then load is bit-exact") {
    TempDir dir("ckpt");
    SPInet model(tiny_config(), 9);
    TrainingState state{12, 0, 0.5, 10};  // optimizer_steps is derived from the parameters
    save_checkpoint(capture(model, state), dir / "m.ckpt");
    const Checkpoint loaded = load_checkpoint(dir / "m.ckpt");
    CHECK(loaded.config == model.config());
    CHECK(loaded.training == state);
    auto copy = instantiate(loaded);
    for (const auto& p : model.parameters().items()) {
      CAPTURE(p.name);
      CHECK(copy->parameters().find(p.name)->tensor.values() == p.tensor.values());
    }
  }

  TEST_CASE("manifest offsets are contiguous") {
    SPInet model(tiny_config(), 10);
    const Checkpoint c = capture(model);
    const auto bytes = encode_checkpoint(c);
    std::uint64_t floats = 0;
    for (const auto& e : c.entries) floats += e.values.size();
    // Payload is the tail of the file.
    const Checkpoint again = decode_checkpoint(bytes);
    CHECK(again.entries.size() == c.entries.size());
    std::uint64_t again_floats = 0;
    for (const auto& e : again.entries) again_floats += e.values.size();
    CHECK(again_floats == floats);
    CHECK(bytes.size() > floats * 4);
  }

  TEST_CASE("truncation, bad magic, version and config guards") {
    TempDir dir("ckpt-err");
    SPInet model(tiny_config(), 11);
    auto bytes = encode_checkpoint(capture(model));

    auto cut = bytes;
    cut.resize(cut.size() - 5);
    write_bytes(dir / "cut.ckpt", cut);
    CHECK(load_error(dir / "cut.ckpt") == FormatError::Kind::payload_length);

    auto magic = bytes;
    magic[0] ^= 0xff;
    write_bytes(dir / "magic.ckpt", magic);
    CHECK(load_error(dir / "magic.ckpt") == FormatError::Kind::bad_magic);

    auto version = bytes;
    version[8] = 2;
    write_bytes(dir / "version.ckpt", version);
    CHECK(load_error(dir / "version.ckpt") == FormatError::Kind::unsupported_version);

    write_bytes(dir / "stub.ckpt", {'S', 'P', 'I'});
    CHECK(load_error(dir / "stub.ckpt") == FormatError::Kind::truncated);

    write_bytes(dir / "ok.ckpt", bytes);
    SPInetConfig other = tiny_config();
    other.use_mrf = false;
    try {
      load_checkpoint(dir / "ok.ckpt", other);
      FAIL("expected a config mismatch");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::config_mismatch);
    }
    SPInet ablation(other, 0);
    try {
      restore(ablation, load_checkpoint(dir / "ok.ckpt"));
      FAIL("expected a config mismatch");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::config_mismatch);
    }
  }

  TEST_CASE("shape mismatch is reported") {
    SPInet model(tiny_config(), 12);
    Checkpoint c = capture(model);
    c.entries[0].shape.back() += 1;
    c.entries[0].values.resize(static_cast<std::size_t>(shape_numel(c.entries[0].shape)));
    try {
      restore(model, c);
      FAIL("expected a shape mismatch");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::shape_mismatch);
    }
  }
}
