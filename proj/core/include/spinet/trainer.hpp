#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spinet/checkpoint.hpp"
#include "spinet/data.hpp"
#include "spinet/metrics.hpp"
#include "spinet/model.hpp"

namespace spinet {

struct TrainConfig {
  double lr = 1e-4;
  std::int64_t batch_size = 2;
  std::int64_t steps = 200;
  std::int64_t patch = 32;
  std::int64_t train_frames = 6;
  std::uint64_t seed = 0;
  std::int64_t eval_interval = 0;  // 0: evaluate only after the last step
  double max_cloud = 0.25;
  std::string checkpoint_dir;  // empty: nothing is written during training

  void validate(int upscale) const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// `step` is the 0-based index of the update.
struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
};

// `step` counts the updates completed before the evaluation.
struct EvalRecord {
  std::int64_t step = 0;
  double mean_mcc = 0.0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  std::int64_t end_step = 0;
  double seconds = 0.0;
};

struct TrainLog {
  std::uint64_t seed = 0;
  std::string model_config;  // canonical JSON
  std::string train_config;  // canonical JSON
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<EpochRecord> epochs;

  std::vector<double> losses() const;
  // One canonical JSON object per line: a header, then steps, evals and
  // epoch timings in the order they happened.
  std::string to_jsonl() const;
};

struct TrainResult {
  Checkpoint final;
  std::optional<Checkpoint> best;  // highest validation MCC seen in this run
  TrainLog log;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

// Training items: each scene filtered by cloud cover, trimmed to at most
// `train_frames` frames and tiled into patches.
std::vector<MultiTemporalSample> prepare_patches(const std::vector<MultiTemporalSample>& scenes,
                                                 const TrainConfig& config);

// Item order for one epoch, a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch);

// Deterministic Fisher-Yates shuffle of a dataset.
template <class T>
std::vector<T> shuffle(const std::vector<T>& items, std::uint64_t seed) {
  std::vector<T> out;
  out.reserve(items.size());
  for (auto i : epoch_order(items.size(), seed, 0)) out.push_back(items[i]);
  return out;
}

// Indices of the items making up batch `step`.
std::vector<std::size_t> batch_indices(std::size_t n_items, std::int64_t batch_size, std::uint64_t seed,
                                       std::int64_t step);

// Stacks items, trimming every item to the smallest frame count among them.
Batch assemble_batch(const std::vector<const MultiTemporalSample*>& items, DType dtype);

// Forward, BCE, backward, Adam, gradient reset. Returns the loss before the
// update. Throws DivergenceError on a non-finite loss.
double train_step(SPInet& model, const Batch& batch, const AdamOptions& options, std::int64_t step = 0);

// Random init from config + seed, or continuation of `resume`.
TrainResult train(const SPInetConfig& model_config, const TrainConfig& config,
                  const std::vector<MultiTemporalSample>& train_set, const std::vector<MultiTemporalSample>& val_set,
                  const Checkpoint* resume = nullptr, const TrainHooks& hooks = {});

struct EvaluationOptions {
  double max_cloud = 0.25;
  std::optional<std::int64_t> frames;
  double threshold = 0.5;
};

struct SceneScore {
  ConfusionCounts counts;
  double mcc = 0.0;
};

// Predicts every scene at full extent and scores it against its label.
std::vector<SceneScore> evaluate(SPInet& model, const std::vector<MultiTemporalSample>& scenes,
                                 const EvaluationOptions& options = {});
std::vector<SceneScore> evaluate(const Checkpoint& checkpoint, const std::vector<MultiTemporalSample>& scenes,
                                 const EvaluationOptions& options = {});
double mean_mcc(const std::vector<SceneScore>& scores);

BinaryMap to_binary_map(const Tensor& prediction);

}  // namespace spinet
