#include "spinet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "spinet/ops.hpp"

namespace spinet {

namespace {

#if defined(__SIZEOF_FLOAT128__) && defined(__SIZEOF_INT128__)
using Wide = __float128;
__extension__ typedef unsigned __int128 UInt128;
#define SPINET_HAVE_WIDE 1
#else
using Wide = long double;
#endif

// Square root in the extended type; Newton refinement from a double guess.
Wide wide_sqrt(Wide v) {
  Wide x = std::sqrt(static_cast<double>(v));
  for (int i = 0; i < 3; ++i) x = (x + v / x) / 2;
  return x;
}

std::size_t role_index(const std::vector<BandRole>& roles, BandRole role) {
  const auto it = std::find(roles.begin(), roles.end(), role);
  if (it == roles.end()) throw ValidationError("no band is tagged '" + to_string(role) + "'");
  if (std::find(it + 1, roles.end(), role) != roles.end()) {
    throw ValidationError("more than one band is tagged '" + to_string(role) + "'");
  }
  return static_cast<std::size_t>(it - roles.begin());
}

void require_binary(const BinaryMap& m, const char* what) {
  if (static_cast<std::int64_t>(m.values.size()) != m.height * m.width) {
    throw ValidationError(std::string(what) + " value count does not match its extents");
  }
  for (auto v : m.values)
    if (v > 1) throw ValidationError(std::string(what) + " contains a value other than 0 or 1");
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(const BinaryMap& pred, const BinaryMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ValidationError("prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                          " but ground truth is " + std::to_string(truth.height) + "x" +
                          std::to_string(truth.width));
  }
  require_binary(pred, "prediction");
  require_binary(truth, "ground truth");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool t = truth.values[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double mcc(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0 || c.tp + c.fn == 0 || c.tn + c.fp == 0 || c.tn + c.fn == 0) return 0.0;

#ifdef SPINET_HAVE_WIDE
  // Exact numerator; the denominator takes three roundings in the 113-bit
  // type, far below the spacing of doubles.
  const UInt128 pos = static_cast<UInt128>(c.tp) * c.tn;
  const UInt128 neg = static_cast<UInt128>(c.fp) * c.fn;
  if (pos == neg) return 0.0;
  const Wide num = pos > neg ? static_cast<Wide>(pos - neg) : -static_cast<Wide>(neg - pos);
  auto marginal = [](std::uint64_t a, std::uint64_t b) { return static_cast<Wide>(static_cast<UInt128>(a) + b); };
  const Wide den = (marginal(c.tp, c.fp) * marginal(c.tp, c.fn)) * (marginal(c.tn, c.fp) * marginal(c.tn, c.fn));
  return std::clamp(static_cast<double>(num / wide_sqrt(den)), -1.0, 1.0);
#else
  auto marginal = [](std::uint64_t a, std::uint64_t b) { return static_cast<long double>(a) + b; };
  const long double num = static_cast<long double>(c.tp) * static_cast<long double>(c.tn) -
                          static_cast<long double>(c.fp) * static_cast<long double>(c.fn);
  const long double log_den = std::log(marginal(c.tp, c.fp)) + std::log(marginal(c.tp, c.fn)) +
                              std::log(marginal(c.tn, c.fp)) + std::log(marginal(c.tn, c.fn));
  return std::clamp(static_cast<double>(num / std::exp(0.5L * log_den)), -1.0, 1.0);
#endif
}

Tensor ndvi(const Tensor& frame, const std::vector<BandRole>& roles) {
  if (!frame.defined() || frame.rank() != 3) throw ShapeError("ndvi expects a [C,H,W] frame");
  if (static_cast<std::int64_t>(roles.size()) != frame.dim(0)) {
    throw ValidationError("band role count " + std::to_string(roles.size()) + " does not match " +
                          std::to_string(frame.dim(0)) + " bands");
  }
  const auto red = static_cast<std::int64_t>(role_index(roles, BandRole::red));
  const auto nir = static_cast<std::int64_t>(role_index(roles, BandRole::nir));
  const std::int64_t hw = frame.dim(1) * frame.dim(2);
  const auto v = frame.values();
  std::vector<double> out(static_cast<std::size_t>(hw));
  for (std::int64_t i = 0; i < hw; ++i) {
    const double r = v[static_cast<std::size_t>(red * hw + i)];
    const double n = v[static_cast<std::size_t>(nir * hw + i)];
    out[static_cast<std::size_t>(i)] = std::clamp((n - r) / (n + r + kNdviEps), -1.0, 1.0);
  }
  return Tensor::from({frame.dim(1), frame.dim(2)}, std::move(out));
}

std::vector<double> upsampled_mean_ndvi(const MultiTemporalSample& sample) {
  if (!sample.lr_stack.defined() || sample.lr_stack.rank() != 4 || sample.frame_count() == 0) {
    throw SelectionError("baseline needs at least one frame");
  }
  const std::int64_t t_count = sample.frame_count();
  const std::int64_t h = sample.height();
  const std::int64_t w = sample.width();
  std::vector<double> acc(static_cast<std::size_t>(h * w), 0.0);
  const auto all = sample.lr_stack.to(DType::f64);
  for (std::int64_t t = 0; t < t_count; ++t) {
    const std::size_t idx[] = {static_cast<std::size_t>(t)};
    const Tensor frame = reshape(take(all, 0, idx), {sample.band_count(), h, w});
    const auto v = ndvi(frame, sample.band_roles).values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  for (double& a : acc) a /= static_cast<double>(t_count);
  const Tensor mean_map = Tensor::from({1, 1, h, w}, std::move(acc));
  return bicubic_resample(mean_map, sample.upscale).values();
}

BinaryMap ndvi_baseline(const MultiTemporalSample& sample, double threshold) {
  if (!(threshold > -1.0 && threshold < 1.0)) throw ValidationError("NDVI threshold must lie in (-1, 1)");
  const auto up = upsampled_mean_ndvi(sample);
  BinaryMap out = BinaryMap::zeros(sample.height() * sample.upscale, sample.width() * sample.upscale);
  for (std::size_t i = 0; i < up.size(); ++i) out.values[i] = up[i] >= threshold ? 1 : 0;
  return out;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 28; ++i) grid.push_back(std::round((-0.5 + 0.05 * i) * 100.0) / 100.0);
  return grid;
}

SweepResult threshold_sweep(const std::vector<MultiTemporalSample>& samples, const std::vector<double>& grid) {
  if (samples.empty()) throw ValidationError("threshold sweep needs at least one sample");
  if (grid.empty()) throw ValidationError("threshold grid is empty");
  for (double g : grid)
    if (!(g > -1.0 && g < 1.0)) throw ValidationError("threshold grid values must lie in (-1, 1)");

  SweepResult result;
  result.thresholds = grid;
  result.mean_mcc.assign(grid.size(), 0.0);
  for (const auto& s : samples) {
    const auto up = upsampled_mean_ndvi(s);
    if (up.size() != s.label.values.size()) throw ValidationError("label extents do not match the baseline map");
    for (std::size_t g = 0; g < grid.size(); ++g) {
      ConfusionCounts c;
      for (std::size_t i = 0; i < up.size(); ++i) {
        const bool p = up[i] >= grid[g];
        const bool t = s.label.values[i] != 0;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
      }
      result.mean_mcc[g] += mcc(c);
    }
  }
  for (double& m : result.mean_mcc) m /= static_cast<double>(samples.size());

  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double a = result.mean_mcc[g];
    const double b = result.mean_mcc[best];
    if (a > b || (a == b && grid[g] < grid[best])) best = g;
  }
  result.best_threshold = grid[best];
  result.best_mcc = result.mean_mcc[best];
  return result;
}

void EvaluationReport::add_scene(std::string name, std::vector<double> values) {
  if (values.size() != methods.size()) {
    throw ValidationError("scene '" + name + "' has " + std::to_string(values.size()) + " values for " +
                          std::to_string(methods.size()) + " methods");
  }
  scenes.push_back(std::move(name));
  mcc.push_back(std::move(values));
}

std::vector<double> EvaluationReport::averages() const {
  std::vector<double> avg(methods.size(), 0.0);
  if (scenes.empty()) return avg;
  for (const auto& row : mcc)
    for (std::size_t m = 0; m < row.size(); ++m) avg[m] += row[m];
  for (double& a : avg) a /= static_cast<double>(scenes.size());
  return avg;
}

std::string EvaluationReport::to_text() const {
  constexpr std::string_view kAverageLabel = "Avg. MCC";
  std::size_t first = kAverageLabel.size();
  for (const auto& s : scenes) first = std::max(first, s.size());
  std::vector<std::size_t> widths;
  for (const auto& m : methods) widths.push_back(std::max<std::size_t>(m.size(), 6));

  std::ostringstream out;
  auto pad_right = [&](const std::string& s, std::size_t w) { out << s << std::string(w - s.size(), ' '); };
  auto pad_left = [&](const std::string& s, std::size_t w) { out << std::string(w - s.size(), ' ') << s; };
  auto row = [&](const std::string& label, const std::vector<double>& values) {
    pad_right(label, first);
    for (std::size_t m = 0; m < values.size(); ++m) {
      out << "  ";
      pad_left(fixed3(values[m]), widths[m]);
    }
    out << '\n';
  };
  std::size_t total = first;
  for (auto w : widths) total += 2 + w;

  pad_right("", first);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out << "  ";
    pad_left(methods[m], widths[m]);
  }
  out << '\n' << std::string(total, '=') << '\n';
  for (std::size_t s = 0; s < scenes.size(); ++s) row(scenes[s], mcc[s]);
  out << std::string(total, '-') << '\n';
  row(std::string(kAverageLabel), averages());
  return out.str();
}

std::string EvaluationReport::to_json() const {
  nlohmann::json j;
  j["methods"] = methods;
  j["scenes"] = nlohmann::json::array();
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    nlohmann::json values;
    for (std::size_t m = 0; m < methods.size(); ++m) values[methods[m]] = mcc[s][m];
    j["scenes"].push_back({{"name", scenes[s]}, {"mcc", values}});
  }
  nlohmann::json avg;
  const auto a = averages();
  for (std::size_t m = 0; m < methods.size(); ++m) avg[methods[m]] = a[m];
  j["average_mcc"] = avg;
  return j.dump();
}

}  // namespace spinet
