#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "spinet/trainer.hpp"

using namespace spinet;

namespace {

SPInetConfig tiny_model(bool mrf = true) {
  SPInetConfig c;
  c.channels = 8;
  c.n_tefa = 1;
  c.attention_bottleneck = 2;
  c.use_mrf = mrf;
  return c;
}

TrainConfig tiny_train(std::int64_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.patch = 8;
  t.train_frames = 3;
  t.seed = 11;
  return t;
}

std::vector<MultiTemporalSample> scenes(int n, std::uint64_t base) {
  std::vector<MultiTemporalSample> out;
  for (int i = 0; i < n; ++i) {
    SceneRecipe r;
    r.seed = base + static_cast<std::uint64_t>(i);
    r.height = 16;
    r.width = 16;
    r.frames = 4;
    r.cloud_probability = 0.0;
    out.push_back(generate_scene(r));
  }
  return out;
}

bool same_entries(const Checkpoint& a, const Checkpoint& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& x = a.entries[i];
    const auto& y = b.entries[i];
    if (x.name != y.name || x.shape != y.shape || x.values != y.values) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("TrainConfig") {
  TEST_CASE("defaults") {
    const TrainConfig t;
    CHECK(t.lr == 1e-4);
    CHECK(t.patch == 32);
    CHECK(t.batch_size == 2);
    CHECK(t.train_frames == 6);
    CHECK_NOTHROW(t.validate(4));
  }

  TEST_CASE("validation") {
    TrainConfig t;
    t.lr = 0.0;
    CHECK_THROWS_AS(t.validate(4), ConfigError);
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(4), ConfigError);
    t = TrainConfig{};
    t.patch = 5;  // 20 at label resolution
    CHECK_THROWS_AS(t.validate(4), ConfigError);
    t = TrainConfig{};
    t.steps = -1;
    CHECK_THROWS_AS(t.validate(4), ConfigError);
  }

  TEST_CASE("JSON round trip") {
    TrainConfig t = tiny_train(7);
    t.lr = 3.5e-4;
    t.checkpoint_dir = "runs/a";
    const TrainConfig back = TrainConfig::from_json(t.to_json());
    CHECK(back.to_json() == t.to_json());
    CHECK(back.lr == t.lr);
    CHECK(back.checkpoint_dir == "runs/a");
  }
}

TEST_SUITE("data order") {
  TEST_CASE("each epoch is a permutation, fixed by seed and epoch") {
    for (std::int64_t epoch = 0; epoch < 5; ++epoch) {
      auto order = epoch_order(37, 4, epoch);
      CHECK(order == epoch_order(37, 4, epoch));
      std::sort(order.begin(), order.end());
      std::vector<std::size_t> iota(37);
      std::iota(iota.begin(), iota.end(), 0);
      CHECK(order == iota);
    }
    CHECK(epoch_order(37, 4, 0) != epoch_order(37, 4, 1));
    CHECK(epoch_order(37, 4, 0) != epoch_order(37, 5, 0));
  }

  TEST_CASE("batches visit every item once per epoch") {
    const std::size_t n = 10;
    std::vector<int> seen(n, 0);
    for (std::int64_t step = 0; step < 5; ++step)
      for (auto i : batch_indices(n, 2, 3, step)) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }

  TEST_CASE("shuffle is deterministic") {
    const std::vector<int> items{1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(shuffle(items, 9) == shuffle(items, 9));
    auto s = shuffle(items, 9);
    std::sort(s.begin(), s.end());
    CHECK(s == items);
  }

  TEST_CASE("patches honour the frame budget") {
    TrainConfig t = tiny_train(1);
    t.train_frames = 2;
    const auto patches = prepare_patches(scenes(2, 1), t);
    CHECK(patches.size() == 8);
    for (const auto& p : patches) {
      CHECK(p.frame_count() == 2);
      CHECK(p.height() == 8);
      CHECK(p.label.height == 32);
    }
  }

  TEST_CASE("assemble_batch trims to the shortest item") {
    const auto s = scenes(2, 3);
    const auto a = select_frames(s[0], 1.0, 2);
    const Batch b = assemble_batch({&a, &s[1]}, DType::f32);
    CHECK(b.inputs.shape() == Shape{2, 2, 4, 16, 16});
    CHECK_THROWS_AS(assemble_batch({}, DType::f32), EmptyInputError);
  }
}

TEST_SUITE("train") {
  TEST_CASE("zero steps returns the initialization") {
    const auto result = train(tiny_model(), tiny_train(0), scenes(2, 1), {});
    SPInet fresh(tiny_model(), 11);
    CHECK(same_entries(result.final, capture(fresh)));
    CHECK(result.log.steps.empty());
    CHECK(result.final.training.step == 0);
  }

  TEST_CASE("same seed, identical losses and weights") {
    const auto data = scenes(3, 20);
    const auto a = train(tiny_model(), tiny_train(4), data, {});
    const auto b = train(tiny_model(), tiny_train(4), data, {});
    REQUIRE(a.log.steps.size() == 4);
    CHECK(a.log.losses() == b.log.losses());
    CHECK(same_entries(a.final, b.final));
    TrainConfig other = tiny_train(4);
    other.seed = 12;
    CHECK(train(tiny_model(), other, data, {}).log.losses() != a.log.losses());
  }

  TEST_CASE("first-step loss is close to ln 2") {
    const auto data = scenes(4, 30);
    for (bool mrf : {true, false}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        TrainConfig t = tiny_train(1);
        t.seed = seed;
        const double loss = train(tiny_model(mrf), t, data, {}).log.steps.at(0).loss;
        CAPTURE(mrf);
        CAPTURE(seed);
        CHECK((loss >= 0.55 && loss <= 0.85));
      }
    }
  }

  TEST_CASE("resume equals uninterrupted training") {
    const auto data = scenes(3, 40);
    const auto full = train(tiny_model(), tiny_train(10), data, {});
    const auto first = train(tiny_model(), tiny_train(5), data, {});
    const Checkpoint mid = decode_checkpoint(encode_checkpoint(first.final));
    CHECK(mid.training.step == 5);
    const auto second = train(tiny_model(), tiny_train(10), data, {}, &mid);
    CHECK(second.log.steps.size() == 5);
    CHECK(second.log.steps.front().step == 5);
    std::vector<double> joined = first.log.losses();
    for (double l : second.log.losses()) joined.push_back(l);
    CHECK(joined == full.log.losses());
    CHECK(same_entries(second.final, full.final));
    CHECK(second.final.training == full.final.training);
  }

  TEST_CASE("evaluation and best checkpoint") {
    const auto data = scenes(2, 50), val = scenes(2, 60);
    TrainConfig t = tiny_train(4);
    t.eval_interval = 2;
    std::vector<std::int64_t> eval_steps;
    TrainHooks hooks;
    hooks.on_eval = [&](const EvalRecord& r) { eval_steps.push_back(r.step); };
    const auto result = train(tiny_model(), t, data, val, nullptr, hooks);
    CHECK(eval_steps == std::vector<std::int64_t>{2, 4});
    REQUIRE(result.best.has_value());
    double best = -2.0;
    for (const auto& e : result.log.evals) best = std::max(best, e.mean_mcc);
    CHECK(result.best->training.best_mcc == best);
    const auto direct = mean_mcc(evaluate(*result.best, val, {.max_cloud = t.max_cloud, .frames = t.train_frames}));
    CHECK(direct == best);
  }

  TEST_CASE("log lines") {
    const auto result = train(tiny_model(), tiny_train(2), scenes(2, 1), {});
    const std::string text = result.log.to_jsonl();
    CHECK(std::count(text.begin(), text.end(), '\n') >= 3);
    CHECK(text.find("\"seed\":11") != std::string::npos);
    CHECK(text.find("\"type\":\"step\"") != std::string::npos);
  }

  TEST_CASE("empty training set") {
    CHECK_THROWS_AS(train(tiny_model(), tiny_train(1), {}, {}), EmptyInputError);
  }

  TEST_CASE("a blown-up step reports divergence") {
    SPInet model(tiny_model(), 3);
    const auto data = scenes(1, 70);
    const auto items = prepare_patches(data, tiny_train(1));
    const Batch batch = assemble_batch({&items[0], &items[1]}, DType::f32);
    const AdamOptions huge{.lr = 1e30};
    bool diverged = false;
    for (std::int64_t step = 0; step < 5 && !diverged; ++step) {
      try {
        train_step(model, batch, huge, step);
      } catch (const DivergenceError& e) {
        diverged = true;
        CHECK(std::string(e.what()).find("step") != std::string::npos);
        CHECK(std::string(e.what()).find("largest parameter") != std::string::npos);
      }
    }
    CHECK(diverged);
  }
}
