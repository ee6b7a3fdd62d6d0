#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spinet/tensor.hpp"

namespace spinet {

enum class BandRole { red, nir, other };

std::string to_string(BandRole role);
BandRole parse_band_role(const std::string& text);

// Row-major {0,1} raster.
struct BinaryMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> values;

  static BinaryMap zeros(std::int64_t height, std::int64_t width);
  std::uint8_t at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
  std::int64_t positives() const;

  bool operator==(const BinaryMap&) const = default;
};

struct FrameMeta {
  double cloud_fraction = 0.0;
  std::int64_t time_index = 0;

  bool operator==(const FrameMeta&) const = default;
};

struct SceneRecipe {
  std::uint64_t seed = 0;
  std::int64_t height = 64;  // low-resolution extents
  std::int64_t width = 64;
  std::int64_t frames = 8;
  int upscale = 4;
  int n_blobs = 24;
  double blob_scale_min = 0.04;  // bump radius as a fraction of the scene side
  double blob_scale_max = 0.14;
  double shift_max = 0.75;  // LR pixels
  double jitter_std = 0.03;
  double cloud_probability = 0.3;
  double cloud_opacity = 0.8;
  // Share of the non-cultivated area covered by spectrally vegetated,
  // non-cultivated land.
  double confuser_fraction = 0.35;

  void validate() const;
  std::string to_json() const;
  static SceneRecipe from_json(const std::string& text);

  bool operator==(const SceneRecipe&) const = default;
};

struct MultiTemporalSample {
  Tensor lr_stack;  // f32 [T,C,H,W]
  std::vector<FrameMeta> frames;
  BinaryMap label;  // [r*H, r*W]
  std::vector<BandRole> band_roles;
  int upscale = 4;
  // Top-left LR offset inside the scene this sample was cut from.
  std::int64_t origin_y = 0;
  std::int64_t origin_x = 0;
  std::optional<SceneRecipe> recipe;

  std::int64_t frame_count() const { return lr_stack.dim(0); }
  std::int64_t band_count() const { return lr_stack.dim(1); }
  std::int64_t height() const { return lr_stack.dim(2); }
  std::int64_t width() const { return lr_stack.dim(3); }

  // Throws ValidationError when the invariants between the fields fail.
  void validate() const;
};

std::vector<BandRole> default_band_roles();

// Synthetic scene: median-thresholded latent field as the label, a
// vegetated confuser class, per-frame shifts, radiometric jitter and clouds,
// then box downsampling to LR. Pure function of the recipe.
MultiTemporalSample generate_scene(const SceneRecipe& recipe);

// Drops frames with cloud_fraction > max_cloud; with target_frames, keeps the
// lowest-cloud survivors (ties by time_index) in their original order.
MultiTemporalSample select_frames(const MultiTemporalSample& sample, double max_cloud = 0.25,
                                  std::optional<std::int64_t> target_frames = std::nullopt);

// Window origins along one axis: every `stride`, with the last window clamped
// to the border.
std::vector<std::int64_t> patch_origins(std::int64_t extent, std::int64_t patch, std::int64_t stride);

std::vector<MultiTemporalSample> extract_patches(const MultiTemporalSample& sample, std::int64_t patch = 32,
                                                 std::int64_t stride = 32);

// MTSP container (little-endian):
//   "MTSP" | u32 version | u32 T, C, H, W, r | f32 stack [T][C][H][W] |
//   u8 label [rH][rW] | u32 metadata length | JSON metadata
inline constexpr std::uint32_t kSampleFormatVersion = 1;

std::vector<std::uint8_t> encode_sample(const MultiTemporalSample& sample);
MultiTemporalSample decode_sample(const std::vector<std::uint8_t>& bytes);
void write_sample(const MultiTemporalSample& sample, const std::filesystem::path& path);
MultiTemporalSample read_sample(const std::filesystem::path& path);

// Sorted list of *.mtsp files in `dir`.
std::vector<std::filesystem::path> list_samples(const std::filesystem::path& dir);
std::vector<MultiTemporalSample> load_samples(const std::filesystem::path& dir);

// Stacks samples into x [N,T,C,H,W] and labels [N,1,rH,rW]; all samples must
// agree on every extent.
struct Batch {
  Tensor inputs;
  Tensor labels;
};
Batch make_batch(const std::vector<const MultiTemporalSample*>& samples, DType dtype = DType::f32);

}  // namespace spinet
