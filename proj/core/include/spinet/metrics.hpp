#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spinet/data.hpp"

namespace spinet {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Throws ValidationError on extent mismatch or values outside {0,1}.
ConfusionCounts confusion(const BinaryMap& pred, const BinaryMap& truth);

// Matthews correlation coefficient. Any zero factor in the denominator gives 0.
// Evaluated in 113-bit floating point where the compiler provides it, which
// rounds to the nearest double.
double mcc(const ConfusionCounts& c);

inline constexpr double kNdviEps = 1e-8;

// (nir - red) / (nir + red + eps), clamped to [-1, 1]. frame: [C,H,W].
// Returns an f64 [H,W] tensor.
Tensor ndvi(const Tensor& frame, const std::vector<BandRole>& roles);

// Temporal mean of per-frame NDVI, bicubically upsampled to label resolution.
// Returned as row-major values of extent [r*H, r*W].
std::vector<double> upsampled_mean_ndvi(const MultiTemporalSample& sample);

// upsampled_mean_ndvi >= threshold. Frames are expected to be pre-filtered.
BinaryMap ndvi_baseline(const MultiTemporalSample& sample, double threshold);

struct SweepResult {
  double best_threshold = 0.0;
  double best_mcc = 0.0;
  std::vector<double> thresholds;
  std::vector<double> mean_mcc;  // unweighted mean of per-sample MCC
};

// -0.5, -0.45, ..., 0.9.
std::vector<double> default_threshold_grid();

// Evaluates the baseline at every grid point; argmax of the mean MCC with the
// lowest threshold winning ties.
SweepResult threshold_sweep(const std::vector<MultiTemporalSample>& samples, const std::vector<double>& grid);

// Per-scene MCC table with an unweighted average row.
struct EvaluationReport {
  std::vector<std::string> methods;
  std::vector<std::string> scenes;
  std::vector<std::vector<double>> mcc;  // [scene][method]

  void add_scene(std::string name, std::vector<double> values);
  std::vector<double> averages() const;
  std::string to_text() const;
  std::string to_json() const;  // canonical (sorted keys)
};

}  // namespace spinet
