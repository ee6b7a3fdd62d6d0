#include "spinet/data.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "binary_io.hpp"
#include "spinet/ops.hpp"
#include "spinet/rng.hpp"

namespace spinet {

namespace {

using json = nlohmann::json;

constexpr std::string_view kSampleMagic = "MTSP";

// Stream labels for the generator; fixed so scenes stay stable when a stage
// changes how many numbers it draws.
enum StreamLabel : std::uint64_t {
  kLatentStream = 1,
  kConfuserStream = 2,
  kTextureStream = 3,
  kFrameStream = 4,
  kTimeStream = 5,
};

struct Bump {
  double cy, cx, inv_two_var, amplitude;
};

using Field = std::vector<double>;

std::vector<Bump> draw_bumps(Rng& rng, int count, std::int64_t h, std::int64_t w, double scale_min,
                             double scale_max, bool signed_amplitude) {
  const double side = static_cast<double>(std::max(h, w));
  std::vector<Bump> bumps;
  for (int i = 0; i < count; ++i) {
    Bump b{};
    b.cy = rng.uniform(0.0, static_cast<double>(h));
    b.cx = rng.uniform(0.0, static_cast<double>(w));
    const double sigma = rng.uniform(scale_min, scale_max) * side;
    b.inv_two_var = 1.0 / (2.0 * sigma * sigma);
    const double a = rng.uniform(0.5, 1.0);
    b.amplitude = signed_amplitude && rng.uniform() < 0.5 ? -a : a;
    bumps.push_back(b);
  }
  return bumps;
}

Field render(const std::vector<Bump>& bumps, std::int64_t h, std::int64_t w) {
  Field f(static_cast<std::size_t>(h * w), 0.0);
  for (const auto& b : bumps) {
    for (std::int64_t y = 0; y < h; ++y) {
      const double dy = static_cast<double>(y) + 0.5 - b.cy;
      const double ey = dy * dy * b.inv_two_var;
      if (ey > 30.0) continue;
      double* row = f.data() + y * w;
      for (std::int64_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - b.cx;
        const double e = ey + dx * dx * b.inv_two_var;
        if (e < 30.0) row[x] += b.amplitude * std::exp(-e);
      }
    }
  }
  return f;
}

// Rescales a field to [-1, 1].
void normalize(Field& f) {
  const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
  const double l = *lo;
  const double span = *hi - *lo;
  if (span <= 0.0) {
    std::fill(f.begin(), f.end(), 0.0);
    return;
  }
  for (double& v : f) v = 2.0 * (v - l) / span - 1.0;
}

double quantile_of(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

// Reflectance signatures (red, nir, other-a) for the three surface classes.
struct Signature {
  double red, nir, other;
};
constexpr Signature kCultivated{0.07, 0.42, 0.14};
constexpr Signature kVegetated{0.075, 0.40, 0.40};
constexpr Signature kBare{0.22, 0.28, 0.33};
constexpr double kCloudReflectance[4] = {0.70, 0.72, 0.68, 0.66};

// out(y, x) = in(y - dy, x - dx), bilinear with edge clamping.
Field translate(const Field& in, std::int64_t h, std::int64_t w, double dy, double dx) {
  Field out(in.size());
  auto clampi = [](std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); };
  for (std::int64_t y = 0; y < h; ++y) {
    const double sy = static_cast<double>(y) - dy;
    const double by = std::floor(sy);
    const double fy = sy - by;
    const auto y0 = clampi(static_cast<std::int64_t>(by), h);
    const auto y1 = clampi(static_cast<std::int64_t>(by) + 1, h);
    for (std::int64_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(x) - dx;
      const double bx = std::floor(sx);
      const double fx = sx - bx;
      const auto x0 = clampi(static_cast<std::int64_t>(bx), w);
      const auto x1 = clampi(static_cast<std::int64_t>(bx) + 1, w);
      const double top = (1.0 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1];
      const double bottom = (1.0 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1];
      out[y * w + x] = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

json recipe_to_json(const SceneRecipe& r) {
  return json{{"seed", r.seed},
              {"height", r.height},
              {"width", r.width},
              {"frames", r.frames},
              {"upscale", r.upscale},
              {"n_blobs", r.n_blobs},
              {"blob_scale_min", r.blob_scale_min},
              {"blob_scale_max", r.blob_scale_max},
              {"shift_max", r.shift_max},
              {"jitter_std", r.jitter_std},
              {"cloud_probability", r.cloud_probability},
              {"cloud_opacity", r.cloud_opacity},
              {"confuser_fraction", r.confuser_fraction}};
}

SceneRecipe recipe_from_json(const json& j) {
  SceneRecipe r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.height = j.at("height").get<std::int64_t>();
  r.width = j.at("width").get<std::int64_t>();
  r.frames = j.at("frames").get<std::int64_t>();
  r.upscale = j.at("upscale").get<int>();
  r.n_blobs = j.at("n_blobs").get<int>();
  r.blob_scale_min = j.at("blob_scale_min").get<double>();
  r.blob_scale_max = j.at("blob_scale_max").get<double>();
  r.shift_max = j.at("shift_max").get<double>();
  r.jitter_std = j.at("jitter_std").get<double>();
  r.cloud_probability = j.at("cloud_probability").get<double>();
  r.cloud_opacity = j.at("cloud_opacity").get<double>();
  r.confuser_fraction = j.at("confuser_fraction").get<double>();
  return r;
}

MultiTemporalSample subset_frames(const MultiTemporalSample& s, const std::vector<std::size_t>& keep) {
  MultiTemporalSample out = s;
  out.lr_stack = take(s.lr_stack, 0, keep);
  out.frames.clear();
  for (auto i : keep) out.frames.push_back(s.frames[i]);
  return out;
}

}  // namespace

std::string to_string(BandRole role) {
  switch (role) {
    case BandRole::red:
      return "red";
    case BandRole::nir:
      return "nir";
    case BandRole::other:
      return "other";
  }
  return "other";
}

BandRole parse_band_role(const std::string& text) {
  if (text == "red") return BandRole::red;
  if (text == "nir") return BandRole::nir;
  if (text == "other") return BandRole::other;
  throw ValidationError("unknown band role '" + text + "'");
}

BinaryMap BinaryMap::zeros(std::int64_t height, std::int64_t width) {
  if (height < 0 || width < 0) throw ShapeError("negative binary map extent");
  return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height * width), 0)};
}

std::int64_t BinaryMap::positives() const {
  return std::count(values.begin(), values.end(), std::uint8_t{1});
}

void SceneRecipe::validate() const {
  if (height < 1 || width < 1) throw ConfigError("scene extents must be positive");
  if (upscale < 1) throw ConfigError("upscale must be >= 1");
  if ((height * upscale) % 8 != 0 || (width * upscale) % 8 != 0) {
    throw ConfigError("scene extents times upscale must be divisible by 8 (got " + std::to_string(height) + "x" +
                      std::to_string(width) + ", upscale " + std::to_string(upscale) + ")");
  }
  if (frames < 1) throw ConfigError("scene needs at least one frame");
  if (n_blobs < 1) throw ConfigError("n_blobs must be >= 1");
  if (!(blob_scale_min > 0.0) || blob_scale_max < blob_scale_min) throw ConfigError("invalid blob scale range");
  if (!(shift_max >= 0.0 && shift_max <= 0.75)) throw ConfigError("shift_max must lie in [0, 0.75] LR pixels");
  if (!(jitter_std >= 0.0)) throw ConfigError("jitter_std must be non-negative");
  if (!(cloud_probability >= 0.0 && cloud_probability <= 1.0)) throw ConfigError("cloud_probability outside [0,1]");
  if (!(cloud_opacity >= 0.0 && cloud_opacity <= 1.0)) throw ConfigError("cloud_opacity outside [0,1]");
  if (!(confuser_fraction >= 0.0 && confuser_fraction < 1.0)) throw ConfigError("confuser_fraction outside [0,1)");
}

std::string SceneRecipe::to_json() const { return recipe_to_json(*this).dump(); }

SceneRecipe SceneRecipe::from_json(const std::string& text) {
  try {
    return recipe_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid scene recipe JSON: ") + e.what());
  }
}

void MultiTemporalSample::validate() const {
  if (!lr_stack.defined() || lr_stack.rank() != 4) throw ValidationError("lr_stack must be a [T,C,H,W] tensor");
  if (frame_count() < 1) throw ValidationError("sample has no frames");
  if (static_cast<std::int64_t>(frames.size()) != frame_count()) {
    throw ValidationError("frame metadata count does not match the stack");
  }
  if (static_cast<std::int64_t>(band_roles.size()) != band_count()) {
    throw ValidationError("band role count does not match the stack");
  }
  if (upscale < 1) throw ValidationError("upscale must be >= 1");
  if (label.height != upscale * height() || label.width != upscale * width()) {
    throw ValidationError("label extents must be exactly upscale times the LR extents");
  }
  if (static_cast<std::int64_t>(label.values.size()) != label.height * label.width) {
    throw ValidationError("label value count does not match its extents");
  }
  for (auto v : label.values)
    if (v > 1) throw ValidationError("label values must be 0 or 1");
  for (const auto& f : frames)
    if (!(f.cloud_fraction >= 0.0 && f.cloud_fraction <= 1.0)) throw ValidationError("cloud_fraction outside [0,1]");
}

std::vector<BandRole> default_band_roles() { return {BandRole::red, BandRole::nir, BandRole::other, BandRole::other}; }

MultiTemporalSample generate_scene(const SceneRecipe& recipe) {
  recipe.validate();
  const int r = recipe.upscale;
  const std::int64_t hh = recipe.height * r;
  const std::int64_t hw = recipe.width * r;
  const std::size_t npx = static_cast<std::size_t>(hh * hw);

  Rng latent_rng = Rng::stream(recipe.seed, kLatentStream);
  Field latent = render(draw_bumps(latent_rng, recipe.n_blobs, hh, hw, recipe.blob_scale_min, recipe.blob_scale_max,
                                   true),
                        hh, hw);
  const double median = quantile_of(latent, 0.5);

  BinaryMap label = BinaryMap::zeros(hh, hw);
  for (std::size_t i = 0; i < npx; ++i) label.values[i] = latent[i] > median ? 1 : 0;

  Rng confuser_rng = Rng::stream(recipe.seed, kConfuserStream);
  Field confuser = render(draw_bumps(confuser_rng, recipe.n_blobs, hh, hw, recipe.blob_scale_min,
                                     recipe.blob_scale_max, true),
                          hh, hw);
  std::vector<double> background;
  for (std::size_t i = 0; i < npx; ++i)
    if (!label.values[i]) background.push_back(confuser[i]);
  const double confuser_cut =
      recipe.confuser_fraction > 0.0 ? quantile_of(background, 1.0 - recipe.confuser_fraction)
                                     : std::numeric_limits<double>::infinity();

  constexpr int kBands = 4;
  Rng texture_rng = Rng::stream(recipe.seed, kTextureStream);
  std::vector<Field> texture;
  for (int b = 0; b < kBands; ++b) {
    texture.push_back(render(draw_bumps(texture_rng, 12, hh, hw, 0.02, 0.08, true), hh, hw));
    normalize(texture.back());
  }

  std::vector<Field> clean(kBands, Field(npx));
  for (std::size_t i = 0; i < npx; ++i) {
    const Signature& s = label.values[i] ? kCultivated : (confuser[i] >= confuser_cut ? kVegetated : kBare);
    clean[0][i] = s.red + 0.02 * texture[0][i];
    clean[1][i] = s.nir + 0.04 * texture[1][i];
    clean[2][i] = s.other + 0.04 * texture[2][i];
    clean[3][i] = 0.30 + 0.12 * texture[3][i];
  }

  const std::int64_t t_count = recipe.frames;
  const std::int64_t lh = recipe.height;
  const std::int64_t lw = recipe.width;
  std::vector<float> stack(static_cast<std::size_t>(t_count * kBands * lh * lw));
  std::vector<FrameMeta> frames(static_cast<std::size_t>(t_count));

  Rng time_rng = Rng::stream(recipe.seed, kTimeStream);
  std::int64_t day = static_cast<std::int64_t>(time_rng.below(5));
  for (auto& f : frames) {
    f.time_index = day;
    day += 1 + static_cast<std::int64_t>(time_rng.below(10));
  }

  const double side = static_cast<double>(std::max(hh, hw));
  for (std::int64_t t = 0; t < t_count; ++t) {
    Rng rng = Rng::stream(recipe.seed, kFrameStream + 16 * static_cast<std::uint64_t>(t + 1));
    const double dy = rng.uniform(-recipe.shift_max, recipe.shift_max) * r;
    const double dx = rng.uniform(-recipe.shift_max, recipe.shift_max) * r;

    Field alpha(npx, 0.0);
    if (rng.uniform() < recipe.cloud_probability) {
      const int n_clouds = 1 + static_cast<int>(rng.below(3));
      for (int c = 0; c < n_clouds; ++c) {
        const double cy = rng.uniform(0.0, static_cast<double>(hh));
        const double cx = rng.uniform(0.0, static_cast<double>(hw));
        const double sigma = rng.uniform(0.06, 0.2) * side;
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for (std::int64_t y = 0; y < hh; ++y)
          for (std::int64_t x = 0; x < hw; ++x) {
            const double ddy = static_cast<double>(y) + 0.5 - cy;
            const double ddx = static_cast<double>(x) + 0.5 - cx;
            const double a = recipe.cloud_opacity * std::exp(-(ddy * ddy + ddx * ddx) * inv);
            double& slot = alpha[static_cast<std::size_t>(y * hw + x)];
            slot = std::max(slot, a);
          }
      }
    }
    std::int64_t cloudy = 0;
    for (double a : alpha) cloudy += a > 0.1 ? 1 : 0;
    frames[static_cast<std::size_t>(t)].cloud_fraction = static_cast<double>(cloudy) / static_cast<double>(npx);

    for (int b = 0; b < kBands; ++b) {
      const double gain = 1.0 + rng.normal(0.0, recipe.jitter_std);
      const double offset = rng.normal(0.0, 0.5 * recipe.jitter_std);
      const Field moved = (dy == 0.0 && dx == 0.0) ? clean[b] : translate(clean[b], hh, hw, dy, dx);
      float* out = stack.data() + ((t * kBands + b) * lh * lw);
      for (std::int64_t y = 0; y < lh; ++y)
        for (std::int64_t x = 0; x < lw; ++x) {
          double acc = 0.0;
          for (int sy = 0; sy < r; ++sy)
            for (int sx = 0; sx < r; ++sx) {
              const auto i = static_cast<std::size_t>((y * r + sy) * hw + (x * r + sx));
              acc += (1.0 - alpha[i]) * moved[i] + alpha[i] * kCloudReflectance[b];
            }
          double v = acc / static_cast<double>(r * r);
          v = v * gain + offset + rng.normal(0.0, recipe.jitter_std / 3.0);
          out[y * lw + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
  }

  MultiTemporalSample s;
  s.lr_stack = Tensor::from({t_count, kBands, lh, lw}, std::move(stack));
  s.frames = std::move(frames);
  s.label = std::move(label);
  s.band_roles = default_band_roles();
  s.upscale = r;
  s.recipe = recipe;
  return s;
}

MultiTemporalSample select_frames(const MultiTemporalSample& sample, double max_cloud,
                                  std::optional<std::int64_t> target_frames) {
  if (target_frames && *target_frames < 1) throw ConfigError("target frame count must be >= 1");
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < sample.frames.size(); ++i)
    if (sample.frames[i].cloud_fraction <= max_cloud) survivors.push_back(i);
  if (survivors.empty()) {
    throw SelectionError("no frame has cloud_fraction <= " + std::to_string(max_cloud) + " (" +
                         std::to_string(sample.frames.size()) + " frames)");
  }
  if (target_frames && static_cast<std::int64_t>(survivors.size()) > *target_frames) {
    auto ranked = survivors;
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      const auto& fa = sample.frames[a];
      const auto& fb = sample.frames[b];
      if (fa.cloud_fraction != fb.cloud_fraction) return fa.cloud_fraction < fb.cloud_fraction;
      return fa.time_index < fb.time_index;
    });
    ranked.resize(static_cast<std::size_t>(*target_frames));
    std::sort(ranked.begin(), ranked.end());
    survivors = std::move(ranked);
  }
  return subset_frames(sample, survivors);
}

std::vector<std::int64_t> patch_origins(std::int64_t extent, std::int64_t patch, std::int64_t stride) {
  if (patch < 1) throw ConfigError("patch size must be >= 1");
  if (stride < 1) throw ConfigError("patch stride must be >= 1");
  if (patch > extent) {
    throw ConfigError("patch size " + std::to_string(patch) + " exceeds extent " + std::to_string(extent));
  }
  std::vector<std::int64_t> origins;
  for (std::int64_t o = 0; o + patch <= extent; o += stride) origins.push_back(o);
  if (origins.back() + patch < extent) origins.push_back(extent - patch);
  return origins;
}

std::vector<MultiTemporalSample> extract_patches(const MultiTemporalSample& sample, std::int64_t patch,
                                                 std::int64_t stride) {
  sample.validate();
  const auto ys = patch_origins(sample.height(), patch, stride);
  const auto xs = patch_origins(sample.width(), patch, stride);
  const std::int64_t t_count = sample.frame_count();
  const std::int64_t c_count = sample.band_count();
  const std::int64_t h = sample.height();
  const std::int64_t w = sample.width();
  const int r = sample.upscale;
  const auto src = sample.lr_stack.to(DType::f32);
  const auto in = src.data<float>();

  std::vector<MultiTemporalSample> out;
  for (auto y0 : ys)
    for (auto x0 : xs) {
      std::vector<float> values(static_cast<std::size_t>(t_count * c_count * patch * patch));
      std::size_t k = 0;
      for (std::int64_t tc = 0; tc < t_count * c_count; ++tc)
        for (std::int64_t y = 0; y < patch; ++y) {
          const float* row = in.data() + (tc * h + y0 + y) * w + x0;
          std::copy(row, row + patch, values.begin() + static_cast<std::ptrdiff_t>(k));
          k += static_cast<std::size_t>(patch);
        }
      MultiTemporalSample p;
      p.lr_stack = Tensor::from({t_count, c_count, patch, patch}, std::move(values));
      p.frames = sample.frames;
      p.band_roles = sample.band_roles;
      p.upscale = r;
      p.origin_y = sample.origin_y + y0;
      p.origin_x = sample.origin_x + x0;
      p.recipe = sample.recipe;
      p.label = BinaryMap::zeros(patch * r, patch * r);
      for (std::int64_t y = 0; y < patch * r; ++y)
        for (std::int64_t x = 0; x < patch * r; ++x) p.label.at(y, x) = sample.label.at(y0 * r + y, x0 * r + x);
      out.push_back(std::move(p));
    }
  return out;
}

std::vector<std::uint8_t> encode_sample(const MultiTemporalSample& sample) {
  sample.validate();
  detail::ByteWriter w;
  w.text(kSampleMagic);
  w.uint(kSampleFormatVersion);
  for (auto d : sample.lr_stack.shape()) w.uint(static_cast<std::uint32_t>(d));
  w.uint(static_cast<std::uint32_t>(sample.upscale));
  const auto stack = sample.lr_stack.to(DType::f32);
  for (float v : stack.data<float>()) w.f32(v);
  w.bytes(sample.label.values.data(), sample.label.values.size());

  json meta;
  meta["band_roles"] = json::array();
  for (auto role : sample.band_roles) meta["band_roles"].push_back(to_string(role));
  meta["frames"] = json::array();
  for (const auto& f : sample.frames)
    meta["frames"].push_back({{"cloud_fraction", f.cloud_fraction}, {"time_index", f.time_index}});
  meta["origin"] = {sample.origin_y, sample.origin_x};
  meta["recipe"] = sample.recipe ? recipe_to_json(*sample.recipe) : json(nullptr);
  const std::string text = meta.dump();
  w.uint(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  return std::move(w.buffer());
}

MultiTemporalSample decode_sample(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "sample");
  r.expect_magic(kSampleMagic, "sample");
  const auto version = r.uint<std::uint32_t>();
  if (version != kSampleFormatVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      "unsupported sample format version " + std::to_string(version));
  }
  std::int64_t dims[5];
  for (auto& d : dims) d = r.uint<std::uint32_t>();
  const auto [t_count, c_count, h, w, up] = std::tuple{dims[0], dims[1], dims[2], dims[3], dims[4]};
  if (up < 1) throw FormatError(FormatError::Kind::corrupt_manifest, "sample upscale must be >= 1");
  const auto n_stack = static_cast<std::uint64_t>(t_count * c_count * h * w);
  const auto n_label = static_cast<std::uint64_t>(h * up * w * up);
  r.need(static_cast<std::size_t>(n_stack * 4 + n_label + 4));

  std::vector<float> stack(static_cast<std::size_t>(n_stack));
  for (auto& v : stack) v = r.f32();
  MultiTemporalSample s;
  s.lr_stack = Tensor::from({t_count, c_count, h, w}, std::move(stack));
  s.upscale = static_cast<int>(up);
  s.label = BinaryMap::zeros(h * up, w * up);
  std::copy_n(r.cursor(), n_label, s.label.values.begin());
  r.skip(static_cast<std::size_t>(n_label));

  const auto meta_len = r.uint<std::uint32_t>();
  const std::string text = r.text(meta_len);
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::payload_length,
                      "sample has " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  try {
    const auto meta = json::parse(text);
    for (const auto& role : meta.at("band_roles")) s.band_roles.push_back(parse_band_role(role.get<std::string>()));
    for (const auto& f : meta.at("frames")) {
      s.frames.push_back({f.at("cloud_fraction").get<double>(), f.at("time_index").get<std::int64_t>()});
    }
    s.origin_y = meta.at("origin").at(0).get<std::int64_t>();
    s.origin_x = meta.at("origin").at(1).get<std::int64_t>();
    if (!meta.at("recipe").is_null()) s.recipe = recipe_from_json(meta.at("recipe"));
    s.validate();
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::corrupt_manifest, std::string("sample metadata: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(FormatError::Kind::corrupt_manifest, std::string("sample metadata: ") + e.what());
  }
  return s;
}

void write_sample(const MultiTemporalSample& sample, const std::filesystem::path& path) {
  detail::write_file(path, encode_sample(sample));
}

MultiTemporalSample read_sample(const std::filesystem::path& path) {
  return decode_sample(detail::read_file(path));
}

std::vector<std::filesystem::path> list_samples(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw ValidationError("not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".mtsp") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<MultiTemporalSample> load_samples(const std::filesystem::path& dir) {
  std::vector<MultiTemporalSample> out;
  for (const auto& f : list_samples(dir)) out.push_back(read_sample(f));
  return out;
}

Batch make_batch(const std::vector<const MultiTemporalSample*>& samples, DType dtype) {
  if (samples.empty()) throw EmptyInputError("cannot build an empty batch");
  const auto& first = *samples.front();
  const Shape frame_shape = first.lr_stack.shape();
  const auto n = static_cast<std::int64_t>(samples.size());
  std::vector<double> x;
  std::vector<double> y;
  x.reserve(static_cast<std::size_t>(n * shape_numel(frame_shape)));
  for (const auto* s : samples) {
    if (s->lr_stack.shape() != frame_shape || s->label.height != first.label.height ||
        s->label.width != first.label.width) {
      throw ShapeError("batch samples disagree on extents: " + to_string(s->lr_stack.shape()) + " vs " +
                       to_string(frame_shape));
    }
    const auto v = s->lr_stack.values();
    x.insert(x.end(), v.begin(), v.end());
    for (auto l : s->label.values) y.push_back(l);
  }
  Shape xs{n};
  xs.insert(xs.end(), frame_shape.begin(), frame_shape.end());
  return {Tensor::from(xs, std::span<const double>(x), dtype),
          Tensor::from({n, 1, first.label.height, first.label.width}, std::span<const double>(y), dtype)};
}

}  // namespace spinet
