#include "oracles.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>

namespace spinet::testing {

namespace {

std::vector<double> normals(std::int64_t n, std::uint64_t seed, double stddev) {
  // std::normal_distribution keeps these inputs independent of spinet::Rng.
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = dist(engine);
  return v;
}

}  // namespace

Tensor random_f64(const Shape& shape, std::uint64_t seed, double stddev, bool requires_grad) {
  Tensor t = Tensor::from(shape, normals(shape_numel(shape), seed, stddev));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor random_f32(const Shape& shape, std::uint64_t seed, double stddev) {
  const auto v = normals(shape_numel(shape), seed, stddev);
  return Tensor::from(shape, std::span<const double>(v), DType::f32);
}

double finite_difference_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& targets,
                               double step) {
  std::vector<Tensor> leaves = targets;
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor l = loss();
    tape.backward(l);
  }
  std::vector<double> analytic, numeric;
  for (auto& t : leaves) {
    const auto g = t.grad_values();
    analytic.insert(analytic.end(), g.begin(), g.end());
    auto values = t.mutable_data<double>();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      numeric.push_back((up - down) / (2.0 * step));
    }
  }
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / scale;
}

ConfusionCounts brute_force_tally(const BinaryMap& pred, const BinaryMap& truth) {
  ConfusionCounts c;
  for (std::int64_t y = 0; y < truth.height; ++y)
    for (std::int64_t x = 0; x < truth.width; ++x) {
      const int p = pred.at(y, x), t = truth.at(y, x);
      if (p == 1 && t == 1) ++c.tp;
      if (p == 1 && t == 0) ++c.fp;
      if (p == 0 && t == 0) ++c.tn;
      if (p == 0 && t == 1) ++c.fn;
    }
  return c;
}

bool mcc_correctly_rounded(const ConfusionCounts& c, double value) {
  using boost::multiprecision::cpp_int;
  using boost::multiprecision::cpp_rational;
  const cpp_int tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
  const cpp_int den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den == 0) return value == 0.0;
  const cpp_int num = tp * tn - fp * fn;
  if (num == 0) return value == 0.0;
  // x = num / sqrt(den). value is correctly rounded iff x lies between the
  // midpoints to its neighbours; compare squares, which preserves order for
  // same-signed quantities.
  if ((num > 0) != (value > 0)) return false;
  const cpp_rational x2(num * num, den);
  const double mag = std::abs(value);
  const cpp_rational lo = (cpp_rational(mag) + cpp_rational(std::nextafter(mag, 0.0))) / 2;
  const cpp_rational hi = (cpp_rational(mag) + cpp_rational(std::nextafter(mag, 2.0))) / 2;
  return lo * lo <= x2 && x2 <= hi * hi;
}

double ScalarAdam::step(double param, double grad) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad * grad;
  const double m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
  const double v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
  return param - lr * m_hat / (std::sqrt(v_hat) + eps);
}

double bilinear_1d(const std::vector<double>& signal, std::int64_t out_size, std::int64_t o) {
  const auto n = static_cast<std::int64_t>(signal.size());
  const double src = (static_cast<double>(o) + 0.5) * static_cast<double>(n) / static_cast<double>(out_size) - 0.5;
  const double clamped = std::clamp(src, 0.0, static_cast<double>(n - 1));
  const auto i0 = static_cast<std::int64_t>(std::floor(clamped));
  const std::int64_t i1 = std::min(i0 + 1, n - 1);
  const double f = clamped - static_cast<double>(i0);
  return (1.0 - f) * signal[static_cast<std::size_t>(i0)] + f * signal[static_cast<std::size_t>(i1)];
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("spinet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_command(const std::string& command, const std::filesystem::path& out, const std::filesystem::path& err) {
  std::string full = command;
  full += out.empty() ? " >/dev/null" : " >'" + out.string() + "'";
  full += err.empty() ? " 2>/dev/null" : " 2>'" + err.string() + "'";
  const int status = std::system(full.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

}  // namespace spinet::testing
