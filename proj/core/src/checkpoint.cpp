#include "spinet/checkpoint.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace spinet {

namespace {

constexpr std::string_view kMagic = "SPINETCK";
constexpr std::size_t kMaxRank = 8;

std::vector<float> to_f32(const Tensor& t) {
  const auto v = t.values();
  std::vector<float> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
  return out;
}

void assign(Tensor& dst, const CheckpointEntry& e) {
  if (dst.shape() != e.shape) {
    throw FormatError(FormatError::Kind::shape_mismatch, "checkpoint entry '" + e.name + "' has shape " +
                                                             to_string(e.shape) + ", model expects " +
                                                             to_string(dst.shape()));
  }
  dispatch(dst.dtype(), [&]<class T>() {
    auto out = dst.mutable_data<T>();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(e.values[i]);
  });
}

std::string blob_json(const Checkpoint& c) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(c.config.to_json());
  j["training"] = {{"step", c.training.step},
                   {"optimizer_steps", c.training.optimizer_steps},
                   {"best_mcc", c.training.best_mcc},
                   {"best_step", c.training.best_step}};
  return j.dump();
}

// Expected (name -> shape) for every entry a model of this config can hold.
std::map<std::string, Shape> expected_shapes(const SPInetConfig& config) {
  SPInet probe(config, 0);
  std::map<std::string, Shape> shapes;
  for (const auto& p : probe.parameters().items()) {
    shapes[p.name] = p.tensor.shape();
    shapes[p.name + ".adam_m"] = p.tensor.shape();
    shapes[p.name + ".adam_v"] = p.tensor.shape();
  }
  for (const auto& [name, state] : probe.norm_states()) {
    shapes[name + ".running_mean"] = state->running_mean.shape();
    shapes[name + ".running_var"] = state->running_var.shape();
  }
  return shapes;
}

void validate_against_config(const Checkpoint& c) {
  const auto shapes = expected_shapes(c.config);
  for (const auto& e : c.entries) {
    const auto it = shapes.find(e.name);
    if (it == shapes.end()) {
      throw FormatError(FormatError::Kind::shape_mismatch,
                        "checkpoint entry '" + e.name + "' does not exist in the embedded model config");
    }
    if (it->second != e.shape) {
      throw FormatError(FormatError::Kind::shape_mismatch, "checkpoint entry '" + e.name + "' has shape " +
                                                               to_string(e.shape) + ", config implies " +
                                                               to_string(it->second));
    }
  }
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(entries.begin(), entries.end(), [&](const CheckpointEntry& e) { return e.name == name; });
  return it == entries.end() ? nullptr : &*it;
}

Checkpoint capture(const SPInet& model, const TrainingState& training, bool include_optimizer) {
  Checkpoint c;
  c.config = model.config();
  c.training = training;
  for (const auto& p : model.parameters().items()) {
    c.entries.push_back({p.name, p.tensor.shape(), to_f32(p.tensor)});
  }
  for (const auto& [name, state] : model.norm_states()) {
    c.entries.push_back({name + ".running_mean", state->running_mean.shape(), to_f32(state->running_mean)});
    c.entries.push_back({name + ".running_var", state->running_var.shape(), to_f32(state->running_var)});
  }
  if (include_optimizer) {
    std::int64_t steps = 0;
    for (const auto& p : model.parameters().items()) {
      c.entries.push_back({p.name + ".adam_m", p.adam_m.shape(), to_f32(p.adam_m)});
      c.entries.push_back({p.name + ".adam_v", p.adam_v.shape(), to_f32(p.adam_v)});
      steps = std::max(steps, p.step_count);
    }
    c.training.optimizer_steps = steps;
  }
  return c;
}

void restore(SPInet& model, const Checkpoint& checkpoint) {
  if (!(model.config() == checkpoint.config)) {
    throw FormatError(FormatError::Kind::config_mismatch, "checkpoint config " + checkpoint.config.to_json() +
                                                              " does not match model config " +
                                                              model.config().to_json());
  }
  for (auto& p : model.parameters().items()) {
    const auto* e = checkpoint.find(p.name);
    if (!e) throw FormatError(FormatError::Kind::corrupt_manifest, "checkpoint lacks parameter '" + p.name + "'");
    assign(p.tensor, *e);
    const auto* m = checkpoint.find(p.name + ".adam_m");
    const auto* v = checkpoint.find(p.name + ".adam_v");
    if (m && v) {
      assign(p.adam_m, *m);
      assign(p.adam_v, *v);
      p.step_count = checkpoint.training.optimizer_steps;
    } else {
      p.adam_m = Tensor::zeros(p.tensor.shape(), p.tensor.dtype());
      p.adam_v = Tensor::zeros(p.tensor.shape(), p.tensor.dtype());
      p.step_count = 0;
    }
    p.tensor.zero_grad();
  }
  for (const auto& [name, state] : model.norm_states()) {
    const auto* rm = checkpoint.find(name + ".running_mean");
    const auto* rv = checkpoint.find(name + ".running_var");
    if (!rm || !rv) {
      throw FormatError(FormatError::Kind::corrupt_manifest, "checkpoint lacks running statistics for '" + name + "'");
    }
    assign(state->running_mean, *rm);
    assign(state->running_var, *rv);
    state->initialized = true;
  }
}

std::unique_ptr<SPInet> instantiate(const Checkpoint& checkpoint, DType dtype) {
  auto model = std::make_unique<SPInet>(checkpoint.config, 0, dtype);
  restore(*model, checkpoint);
  return model;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  detail::ByteWriter w;
  w.text(kMagic);
  w.uint(Checkpoint::kFormatVersion);
  const std::string blob = blob_json(checkpoint);
  w.uint(static_cast<std::uint32_t>(blob.size()));
  w.text(blob);
  w.uint(static_cast<std::uint32_t>(checkpoint.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : checkpoint.entries) {
    if (e.name.empty() || e.name.size() > 0xffff) throw ValidationError("checkpoint entry name length out of range");
    if (e.shape.size() > kMaxRank) throw ValidationError("checkpoint entry rank too large");
    if (static_cast<std::int64_t>(e.values.size()) != shape_numel(e.shape)) {
      throw ShapeError("checkpoint entry '" + e.name + "' value count does not match its shape");
    }
    w.uint(static_cast<std::uint16_t>(e.name.size()));
    w.text(e.name);
    w.uint(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) w.uint(static_cast<std::uint32_t>(d));
    w.uint(offset);
    offset += e.values.size() * sizeof(float);
  }
  for (const auto& e : checkpoint.entries)
    for (float v : e.values) w.f32(v);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_magic(kMagic, "checkpoint");
  const auto version = r.uint<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      "unsupported checkpoint format version " + std::to_string(version));
  }
  Checkpoint c;
  const auto blob_size = r.uint<std::uint32_t>();
  const std::string blob = r.text(blob_size);
  try {
    const auto j = nlohmann::json::parse(blob);
    c.config = SPInetConfig::from_json(j.at("model").dump());
    const auto& t = j.at("training");
    c.training.step = t.at("step").get<std::int64_t>();
    c.training.optimizer_steps = t.at("optimizer_steps").get<std::int64_t>();
    c.training.best_mcc = t.at("best_mcc").get<double>();
    c.training.best_step = t.at("best_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::corrupt_manifest, std::string("checkpoint config blob: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::corrupt_manifest, std::string("checkpoint config blob: ") + e.what());
  }

  const auto count = r.uint<std::uint32_t>();
  // Each entry needs at least 1 + 2 + 1 + 8 bytes of manifest.
  if (static_cast<std::uint64_t>(count) * 12 > r.remaining()) {
    throw FormatError(FormatError::Kind::corrupt_manifest, "checkpoint manifest entry count exceeds file size");
  }
  std::uint64_t expected_offset = 0;
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.uint<std::uint16_t>();
    if (name_len == 0) throw FormatError(FormatError::Kind::corrupt_manifest, "empty checkpoint entry name");
    e.name = r.text(name_len);
    const auto rank = r.uint<std::uint8_t>();
    if (rank > kMaxRank) throw FormatError(FormatError::Kind::corrupt_manifest, "checkpoint entry rank too large");
    for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.uint<std::uint32_t>());
    const auto offset = r.uint<std::uint64_t>();
    if (offset != expected_offset) {
      throw FormatError(FormatError::Kind::corrupt_manifest,
                        "checkpoint entry '" + e.name + "' offset is not contiguous with its predecessor");
    }
    expected_offset += static_cast<std::uint64_t>(shape_numel(e.shape)) * sizeof(float);
    if (c.find(e.name)) throw FormatError(FormatError::Kind::corrupt_manifest, "duplicate checkpoint entry " + e.name);
    c.entries.push_back(std::move(e));
  }
  if (r.remaining() != expected_offset) {
    throw FormatError(FormatError::Kind::payload_length, "checkpoint payload has " + std::to_string(r.remaining()) +
                                                             " bytes, manifest requires " +
                                                             std::to_string(expected_offset));
  }
  for (auto& e : c.entries) {
    e.values.resize(static_cast<std::size_t>(shape_numel(e.shape)));
    for (auto& v : e.values) v = r.f32();
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint c = decode_checkpoint(detail::read_file(path));
  validate_against_config(c);
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const SPInetConfig& expected) {
  Checkpoint c = load_checkpoint(path);
  if (!(c.config == expected)) {
    throw FormatError(FormatError::Kind::config_mismatch,
                      "checkpoint config " + c.config.to_json() + " differs from expected " + expected.to_json());
  }
  return c;
}

}  // namespace spinet
