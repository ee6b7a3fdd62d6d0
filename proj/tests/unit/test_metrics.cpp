#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spinet/metrics.hpp"
#include "spinet/ops.hpp"

using namespace spinet;
using spinet::testing::brute_force_tally;
using spinet::testing::mcc_correctly_rounded;

namespace {

BinaryMap random_map(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  BinaryMap m = BinaryMap::zeros(h, w);
  for (auto& v : m.values) v = static_cast<std::uint8_t>(engine() & 1U);
  return m;
}

// One-frame sample with constant red and nir reflectance.
MultiTemporalSample flat_sample(double red, double nir, std::int64_t frames = 1) {
  MultiTemporalSample s;
  s.band_roles = default_band_roles();
  const std::int64_t h = 4, w = 4;
  std::vector<float> v(static_cast<std::size_t>(frames * 4 * h * w), 0.3f);
  for (std::int64_t t = 0; t < frames; ++t)
    for (std::int64_t b = 0; b < 4; ++b)
      for (std::int64_t i = 0; i < h * w; ++i) {
        float& x = v[static_cast<std::size_t>((t * 4 + b) * h * w + i)];
        if (s.band_roles[static_cast<std::size_t>(b)] == BandRole::red) x = static_cast<float>(red);
        if (s.band_roles[static_cast<std::size_t>(b)] == BandRole::nir) x = static_cast<float>(nir);
      }
  s.lr_stack = Tensor::from({frames, 4, h, w}, std::move(v));
  s.frames.assign(static_cast<std::size_t>(frames), FrameMeta{});
  s.label = BinaryMap::zeros(4 * h, 4 * w);
  for (std::int64_t i = 0; i < 4 * h * 4 * w / 2; ++i) s.label.values[static_cast<std::size_t>(i)] = 1;
  return s;
}

Tensor frame_of(const MultiTemporalSample& s, std::int64_t t) {
  const std::vector<std::size_t> index{static_cast<std::size_t>(t)};
  return reshape(take(s.lr_stack, 0, index), {s.band_count(), s.height(), s.width()});
}

SceneRecipe scene(std::uint64_t seed) {
  SceneRecipe r;
  r.seed = seed;
  return r;
}

}  // namespace

TEST_SUITE("confusion") {
  TEST_CASE("perfect and inverted predictions") {
    BinaryMap truth = BinaryMap::zeros(10, 10);
    for (int i = 0; i < 40; ++i) truth.values[static_cast<std::size_t>(i)] = 1;
    CHECK(confusion(truth, truth) == ConfusionCounts{40, 0, 60, 0});
    BinaryMap inv = truth;
    for (auto& v : inv.values) v = static_cast<std::uint8_t>(1 - v);
    const ConfusionCounts c = confusion(inv, truth);
    CHECK(c.tp == 0);
    CHECK(c.tn == 0);
    CHECK(c.fp + c.fn == 100);
  }

  TEST_CASE("matches a per-pixel tally, seed 3") {
    const BinaryMap p = random_map(16, 16, 3), t = random_map(16, 16, 303);
    CHECK(confusion(p, t) == brute_force_tally(p, t));
    CHECK(confusion(p, t).total() == 256);
  }

  TEST_CASE("tiles add up to the whole image") {
    const BinaryMap p = random_map(12, 8, 4), t = random_map(12, 8, 404);
    ConfusionCounts sum;
    for (std::int64_t y0 = 0; y0 < 12; y0 += 4) {
      BinaryMap pt = BinaryMap::zeros(4, 8), tt = BinaryMap::zeros(4, 8);
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 8; ++x) {
          pt.at(y, x) = p.at(y0 + y, x);
          tt.at(y, x) = t.at(y0 + y, x);
        }
      sum += confusion(pt, tt);
    }
    CHECK(sum == confusion(p, t));
  }

  TEST_CASE("validation") {
    CHECK_THROWS_AS(confusion(BinaryMap::zeros(2, 3), BinaryMap::zeros(3, 2)), ValidationError);
    BinaryMap bad = BinaryMap::zeros(2, 2);
    bad.values[0] = 2;
    CHECK_THROWS_AS(confusion(bad, BinaryMap::zeros(2, 2)), ValidationError);
  }
}

TEST_SUITE("mcc") {
  TEST_CASE("closed cases") {
    CHECK(mcc({1, 0, 1, 0}) == 1.0);
    CHECK(mcc({0, 1, 0, 1}) == -1.0);
    CHECK(mcc({5, 0, 0, 0}) == 0.0);
    CHECK(mcc({0, 0, 0, 0}) == 0.0);
    CHECK(mcc({2, 1, 3, 1}) == 5.0 / 12.0);
  }

  TEST_CASE("correctly rounded against rational arithmetic") {
    std::mt19937_64 engine(5);
    for (int i = 0; i < 300; ++i) {
      const std::uint64_t caps[] = {1000, 1ULL << 26, 1ULL << 40};
      const std::uint64_t cap = caps[i % 3];
      const ConfusionCounts c{engine() % cap, engine() % cap, engine() % cap, engine() % cap};
      CAPTURE(c.tp);
      CAPTURE(c.fp);
      CAPTURE(c.tn);
      CAPTURE(c.fn);
      CHECK(mcc_correctly_rounded(c, mcc(c)));
    }
  }

  TEST_CASE("huge counts stay finite and close") {
    const ConfusionCounts c{1ULL << 40, 3ULL << 37, 5ULL << 39, 1ULL << 36};
    const double v = mcc(c);
    CHECK(std::isfinite(v));
    const long double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
    const long double ref = (tp * tn - fp * fn) / std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    CHECK(v == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
  }

  TEST_CASE("symmetry, antisymmetry and bounds") {
    std::mt19937_64 engine(6);
    for (int i = 0; i < 200; ++i) {
      const ConfusionCounts c{engine() % 500, engine() % 500, engine() % 500, engine() % 500};
      const double m = mcc(c);
      CHECK((m >= -1.0 && m <= 1.0));
      CHECK(mcc({c.tn, c.fn, c.tp, c.fp}) == m);
      CHECK(mcc({c.fn, c.tn, c.fp, c.tp}) == -m);
    }
  }
}

TEST_SUITE("ndvi") {
  TEST_CASE("closed forms") {
    const auto roles = default_band_roles();
    for (double v : ndvi(frame_of(flat_sample(0.4, 0.4), 0), roles).values()) CHECK(v == 0.0);
    for (double v : ndvi(frame_of(flat_sample(0.0, 1.0), 0), roles).values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-7));
    const double red = static_cast<float>(0.2), nir = static_cast<float>(0.8);
    for (double v : ndvi(frame_of(flat_sample(0.2, 0.8), 0), roles).values()) {
      CHECK(std::abs(v - 0.6) <= 1e-7);
      CHECK(v == (nir - red) / (nir + red + kNdviEps));
    }
  }

  TEST_CASE("missing role and range") {
    const Tensor f = frame_of(flat_sample(0.1, 0.2), 0);
    CHECK_THROWS_AS(ndvi(f, {BandRole::other, BandRole::nir, BandRole::other, BandRole::other}), ValidationError);
    const MultiTemporalSample s = generate_scene(scene(1));
    for (std::int64_t t = 0; t < s.frame_count(); ++t)
      for (double x : ndvi(frame_of(s, t), s.band_roles).values()) CHECK((x >= -1.0 && x <= 1.0));
  }
}

TEST_SUITE("ndvi_baseline") {
  TEST_CASE("saturated vegetation is all ones") {
    for (double th : {-0.9, 0.0, 0.99}) {
      const BinaryMap m = ndvi_baseline(flat_sample(0.0, 1.0), th);
      CHECK(m.positives() == m.height * m.width);
    }
  }

  TEST_CASE("constant NDVI at the threshold is positive") {
    const MultiTemporalSample s = flat_sample(0.2, 0.6, 3);
    const double at = upsampled_mean_ndvi(s)[0];
    const BinaryMap m = ndvi_baseline(s, at);
    CHECK(m.positives() == m.height * m.width);
  }

  TEST_CASE("threshold outside (-1,1)") {
    CHECK_THROWS_AS(ndvi_baseline(flat_sample(0.2, 0.6), 1.0), ValidationError);
  }

  TEST_CASE("empty stack") {
    MultiTemporalSample s = flat_sample(0.2, 0.6);
    s.lr_stack = Tensor::zeros({0, 4, 4, 4});
    s.frames.clear();
    CHECK_THROWS_AS(ndvi_baseline(s, 0.3), SelectionError);
  }

  TEST_CASE("synthetic scene 21 at threshold 0.3") {
    const MultiTemporalSample s = select_frames(generate_scene(scene(21)));
    const double m = mcc(confusion(ndvi_baseline(s, 0.3), s.label));
    CHECK(m > 0.2);
    // Pinned on the frozen generator.
    CHECK(m == doctest::Approx(0.6551103527800558).epsilon(1e-9));
  }
}

TEST_SUITE("threshold_sweep") {
  std::vector<MultiTemporalSample> scenes(int n, std::uint64_t base) {
    std::vector<MultiTemporalSample> out;
    for (int i = 0; i < n; ++i) out.push_back(select_frames(generate_scene(scene(base + static_cast<std::uint64_t>(i)))));
    return out;
  }

  TEST_CASE("single point and default grid") {
    const auto s = scenes(1, 40);
    CHECK(threshold_sweep(s, {0.2}).best_threshold == 0.2);
    const auto grid = default_threshold_grid();
    CHECK(grid.size() == 29);
    CHECK(grid.front() == -0.5);
    CHECK(grid.back() == doctest::Approx(0.9));
  }

  TEST_CASE("ties go to the lower threshold") {
    // Every pixel of this scene is above -0.9 and -0.8 alike.
    const std::vector<MultiTemporalSample> s{flat_sample(0.1, 0.5)};
    const SweepResult r = threshold_sweep(s, {-0.8, -0.9});
    CHECK(r.mean_mcc[0] == r.mean_mcc[1]);
    CHECK(r.best_threshold == -0.9);
  }

  TEST_CASE("per-threshold means match direct re-evaluation") {
    const auto s = scenes(10, 50);
    std::vector<double> grid;
    for (int i = 0; i <= 14; ++i) grid.push_back(-0.5 + 0.1 * i);
    const SweepResult r = threshold_sweep(s, grid);
    REQUIRE(r.mean_mcc.size() == grid.size());
    std::size_t best = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double total = 0.0;
      for (const auto& x : s) total += mcc(confusion(ndvi_baseline(x, grid[g]), x.label));
      CHECK(r.mean_mcc[g] == doctest::Approx(total / 10.0).epsilon(1e-12));
      if (r.mean_mcc[g] > r.mean_mcc[best]) best = g;
    }
    CHECK(r.best_threshold == grid[best]);
    CHECK(r.best_mcc == r.mean_mcc[best]);
  }

  TEST_CASE("empty inputs") {
    CHECK_THROWS_AS(threshold_sweep({}, {0.1}), ValidationError);
    CHECK_THROWS_AS(threshold_sweep(scenes(1, 1), {}), ValidationError);
  }
}

TEST_SUITE("report") {
  TEST_CASE("text layout") {
    EvaluationReport r;
    r.methods = {"Model-based", "SPInet"};
    r.add_scene("scene-0000", {0.5, 0.75});
    r.add_scene("scene-0001", {0.25, 0.5});
    const std::string expected =
        "            Model-based  SPInet\n"
        "===============================\n"
        "scene-0000        0.500   0.750\n"
        "scene-0001        0.250   0.500\n"
        "-------------------------------\n"
        "Avg. MCC          0.375   0.625\n";
    CHECK(r.to_text() == expected);
    CHECK(r.averages() == std::vector<double>{0.375, 0.625});
  }

  TEST_CASE("canonical JSON") {
    EvaluationReport r;
    r.methods = {"SPInet"};
    r.add_scene("a", {0.5});
    CHECK(r.to_json() == R"({"average_mcc":{"SPInet":0.5},"methods":["SPInet"],"scenes":[{"mcc":{"SPInet":0.5},"name":"a"}]})");
  }
}
