#include "spinet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>

#include "spinet/ops.hpp"
#include "spinet/parallel.hpp"
#include "spinet/rng.hpp"

namespace spinet {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kShuffleStream = 0x5348;

json train_config_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"patch", c.patch},
              {"train_frames", c.train_frames},
              {"seed", c.seed},
              {"eval_interval", c.eval_interval},
              {"max_cloud", c.max_cloud},
              {"checkpoint_dir", c.checkpoint_dir}};
}

// Diagnostic for a diverged step: the parameter with the largest (or first
// non-finite) norm.
std::string offending_parameter(const SPInet& model) {
  std::string name = "<none>";
  double worst = -1.0;
  for (const auto& p : model.parameters().items()) {
    double sq = 0.0;
    for (double v : p.tensor.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) return p.name + " (norm " + std::to_string(norm) + ")";
    if (norm > worst) {
      worst = norm;
      name = p.name;
    }
  }
  return name + " (norm " + std::to_string(worst) + ")";
}

void save_if(const std::string& dir, const char* file, const Checkpoint& c) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  save_checkpoint(c, std::filesystem::path(dir) / file);
}

}  // namespace

void TrainConfig::validate(int upscale) const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (steps < 0) throw ConfigError("step count must be >= 0");
  if (patch < 1 || (patch * upscale) % 8 != 0) {
    throw ConfigError("patch size times upscale must be a positive multiple of 8 (patch " + std::to_string(patch) +
                      ")");
  }
  if (train_frames < 1) throw ConfigError("train frame count must be >= 1");
  if (eval_interval < 0) throw ConfigError("eval interval must be >= 0");
  if (!(max_cloud >= 0.0 && max_cloud <= 1.0)) throw ConfigError("max_cloud must lie in [0, 1]");
}

std::string TrainConfig::to_json() const { return train_config_json(*this).dump(); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<std::int64_t>();
    c.steps = j.at("steps").get<std::int64_t>();
    c.patch = j.at("patch").get<std::int64_t>();
    c.train_frames = j.at("train_frames").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_interval = j.at("eval_interval").get<std::int64_t>();
    c.max_cloud = j.at("max_cloud").get<double>();
    c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid train config JSON: ") + e.what());
  }
}

std::vector<double> TrainLog::losses() const {
  std::vector<double> out;
  for (const auto& s : steps) out.push_back(s.loss);
  return out;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  json header{{"type", "config"},
              {"seed", seed},
              {"model", model_config.empty() ? json(nullptr) : json::parse(model_config)},
              {"train", train_config.empty() ? json(nullptr) : json::parse(train_config)}};
  out += header.dump() + "\n";
  std::size_t e = 0;
  std::size_t p = 0;
  auto flush_until = [&](std::int64_t completed) {
    for (; e < evals.size() && evals[e].step <= completed; ++e)
      out += json{{"type", "eval"}, {"step", evals[e].step}, {"mean_mcc", evals[e].mean_mcc}}.dump() + "\n";
    for (; p < epochs.size() && epochs[p].end_step <= completed; ++p)
      out += json{{"type", "epoch"}, {"epoch", epochs[p].epoch}, {"end_step", epochs[p].end_step},
                  {"seconds", epochs[p].seconds}}.dump() + "\n";
  };
  for (const auto& s : steps) {
    flush_until(s.step);
    out += json{{"type", "step"}, {"step", s.step}, {"loss", s.loss}}.dump() + "\n";
  }
  flush_until(std::numeric_limits<std::int64_t>::max());
  return out;
}

std::vector<MultiTemporalSample> prepare_patches(const std::vector<MultiTemporalSample>& scenes,
                                                 const TrainConfig& config) {
  std::vector<MultiTemporalSample> items;
  for (const auto& scene : scenes) {
    MultiTemporalSample chosen;
    try {
      chosen = select_frames(scene, config.max_cloud, config.train_frames);
    } catch (const SelectionError&) {
      continue;
    }
    auto patches = extract_patches(chosen, config.patch, config.patch);
    for (auto& p : patches) items.push_back(std::move(p));
  }
  if (items.empty()) throw EmptyInputError("no training patch survived frame selection");
  return items;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  Rng rng = Rng::stream(seed, kShuffleStream + static_cast<std::uint64_t>(epoch) * 0x9e37);
  return random_permutation(n, rng);
}

std::vector<std::size_t> batch_indices(std::size_t n_items, std::int64_t batch_size, std::uint64_t seed,
                                       std::int64_t step) {
  if (n_items == 0) throw EmptyInputError("no items to batch");
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  for (std::int64_t j = 0; j < batch_size; ++j) {
    const std::int64_t position = step * batch_size + j;
    const std::int64_t epoch = position / static_cast<std::int64_t>(n_items);
    if (epoch != cached_epoch) {
      order = epoch_order(n_items, seed, epoch);
      cached_epoch = epoch;
    }
    out.push_back(order[static_cast<std::size_t>(position % static_cast<std::int64_t>(n_items))]);
  }
  return out;
}

Batch assemble_batch(const std::vector<const MultiTemporalSample*>& items, DType dtype) {
  if (items.empty()) throw EmptyInputError("cannot build an empty batch");
  std::int64_t frames = items.front()->frame_count();
  for (const auto* s : items) frames = std::min(frames, s->frame_count());
  std::vector<MultiTemporalSample> trimmed;
  std::vector<const MultiTemporalSample*> ptrs;
  trimmed.reserve(items.size());
  for (const auto* s : items) {
    if (s->frame_count() == frames) {
      ptrs.push_back(s);
      continue;
    }
    std::vector<std::size_t> keep(static_cast<std::size_t>(frames));
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    MultiTemporalSample t = *s;
    t.lr_stack = take(s->lr_stack, 0, keep);
    t.frames.resize(keep.size());
    trimmed.push_back(std::move(t));
    ptrs.push_back(&trimmed.back());
  }
  return make_batch(ptrs, dtype);
}

double train_step(SPInet& model, const Batch& batch, const AdamOptions& options, std::int64_t step) {
  const FlushDenormals ftz;
  Tape tape;
  double loss_value = 0.0;
  try {
    TapeScope scope(tape);
    const Tensor logits = model.forward(batch.inputs, Mode::train);
    const Tensor loss = bce_with_logits(logits, batch.labels);
    loss_value = loss.item();
    tape.backward(loss);
  } catch (const NumericError& e) {
    model.parameters().zero_grad();
    throw DivergenceError("non-finite value at step " + std::to_string(step) + " (" + e.what() +
                              "); largest parameter: " + offending_parameter(model),
                          static_cast<long>(step));
  }
  if (!std::isfinite(loss_value)) {
    model.parameters().zero_grad();
    throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                              "; largest parameter: " + offending_parameter(model),
                          static_cast<long>(step));
  }
  adam_step(model.parameters(), options);
  model.parameters().zero_grad();
  return loss_value;
}

TrainResult train(const SPInetConfig& model_config, const TrainConfig& config,
                  const std::vector<MultiTemporalSample>& train_set, const std::vector<MultiTemporalSample>& val_set,
                  const Checkpoint* resume, const TrainHooks& hooks) {
  model_config.validate();
  config.validate(model_config.upscale);
  if (train_set.empty()) throw EmptyInputError("training set is empty");

  SPInet model(model_config, config.seed);
  TrainingState state;
  if (resume) {
    restore(model, *resume);
    state = resume->training;
  }

  TrainResult result;
  result.log.seed = config.seed;
  result.log.model_config = model_config.to_json();
  result.log.train_config = config.to_json();

  const auto items = prepare_patches(train_set, config);
  const auto n_items = static_cast<std::int64_t>(items.size());
  const AdamOptions adam{.lr = config.lr};

  auto run_eval = [&](std::int64_t step) {
    if (val_set.empty()) return;
    EvaluationOptions opts;
    opts.max_cloud = config.max_cloud;
    opts.frames = config.train_frames;
    const double m = mean_mcc(evaluate(model, val_set, opts));
    const EvalRecord rec{step, m};
    result.log.evals.push_back(rec);
    if (hooks.on_eval) hooks.on_eval(rec);
    if (m > state.best_mcc) {
      state.best_mcc = m;
      state.best_step = step;
      result.best = capture(model, state);
      save_if(config.checkpoint_dir, "best.ckpt", *result.best);
    }
  };

  auto epoch_start = std::chrono::steady_clock::now();
  for (std::int64_t step = state.step; step < config.steps; ++step) {
    const auto idx = batch_indices(items.size(), config.batch_size, config.seed, step);
    std::vector<const MultiTemporalSample*> ptrs;
    for (auto i : idx) ptrs.push_back(&items[i]);
    const Batch batch = assemble_batch(ptrs, model.dtype());
    const double loss = train_step(model, batch, adam, step);
    state.step = step + 1;
    const StepRecord rec{step, loss};
    result.log.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);

    const std::int64_t consumed = (step + 1) * config.batch_size;
    if (consumed / n_items != (consumed - config.batch_size) / n_items) {
      const auto now = std::chrono::steady_clock::now();
      result.log.epochs.push_back(
          {(consumed - 1) / n_items, step + 1, std::chrono::duration<double>(now - epoch_start).count()});
      epoch_start = now;
    }
    if (config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 && step + 1 < config.steps) {
      run_eval(step + 1);
    }
  }
  run_eval(state.step);

  result.final = capture(model, state);
  save_if(config.checkpoint_dir, "final.ckpt", result.final);
  return result;
}

BinaryMap to_binary_map(const Tensor& prediction) {
  if (!prediction.defined() || prediction.rank() != 4 || prediction.dim(0) != 1 || prediction.dim(1) != 1) {
    throw ShapeError("expected a [1,1,H,W] prediction");
  }
  BinaryMap m = BinaryMap::zeros(prediction.dim(2), prediction.dim(3));
  const auto v = prediction.values();
  for (std::size_t i = 0; i < v.size(); ++i) m.values[i] = v[i] != 0.0 ? 1 : 0;
  return m;
}

std::vector<SceneScore> evaluate(SPInet& model, const std::vector<MultiTemporalSample>& scenes,
                                 const EvaluationOptions& options) {
  std::vector<SceneScore> scores;
  for (const auto& scene : scenes) {
    const auto chosen = select_frames(scene, options.max_cloud, options.frames);
    const Batch batch = make_batch({&chosen}, model.dtype());
    const BinaryMap pred = to_binary_map(model.predict(batch.inputs, options.threshold));
    SceneScore s;
    s.counts = confusion(pred, chosen.label);
    s.mcc = mcc(s.counts);
    scores.push_back(s);
  }
  return scores;
}

std::vector<SceneScore> evaluate(const Checkpoint& checkpoint, const std::vector<MultiTemporalSample>& scenes,
                                 const EvaluationOptions& options) {
  auto model = instantiate(checkpoint);
  return evaluate(*model, scenes, options);
}

double mean_mcc(const std::vector<SceneScore>& scores) {
  if (scores.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : scores) acc += s.mcc;
  return acc / static_cast<double>(scores.size());
}

}  // namespace spinet
