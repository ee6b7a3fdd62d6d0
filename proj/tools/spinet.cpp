#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "spinet/checkpoint.hpp"
#include "spinet/checks.hpp"
#include "spinet/data.hpp"
#include "spinet/metrics.hpp"
#include "spinet/model.hpp"
#include "spinet/parallel.hpp"
#include "spinet/trainer.hpp"

namespace fs = std::filesystem;
using namespace spinet;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

// Input problems detected before any work starts.
class InputError : public Error {
 public:
  using Error::Error;
};

void require_dir(const std::string& dir, const char* flag) {
  if (!fs::is_directory(dir)) throw InputError(std::string(flag) + ": not a directory: " + dir);
}

void require_file(const std::string& file, const char* flag) {
  if (!fs::is_regular_file(file)) throw InputError(std::string(flag) + ": no such file: " + file);
}

std::vector<MultiTemporalSample> load_dir(const std::string& dir, const char* flag,
                                          std::vector<std::string>* names = nullptr) {
  require_dir(dir, flag);
  const auto files = list_samples(dir);
  if (files.empty()) throw InputError(std::string(flag) + ": no .mtsp files in " + dir);
  std::vector<MultiTemporalSample> out;
  for (const auto& f : files) {
    out.push_back(read_sample(f));
    if (names) names->push_back(f.stem().string());
  }
  return out;
}

void echo(const std::string& command, const std::string& json) {
  std::cout << "spinet " << command << " config " << json << "\n" << std::flush;
}

std::string text_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
  if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
  return path.string();
}

void print_checks(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    std::printf("%-4s %-48s measured %.3e  tolerance %.1e  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.measured, r.tolerance, r.detail.c_str());
  }
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int scenes = 10;
  std::uint64_t seed = 0;
  std::int64_t frames = 8;
  std::int64_t size = 64;
};

int cmd_synth(const SynthArgs& a) {
  if (a.scenes < 1) throw ValidationError("--scenes must be >= 1");
  SceneRecipe base;
  base.seed = a.seed;
  base.frames = a.frames;
  base.height = base.width = a.size;
  base.validate();
  echo("synth", "{\"out\":\"" + a.out + "\",\"scenes\":" + std::to_string(a.scenes) + ",\"seed\":" +
                    std::to_string(a.seed) + ",\"recipe\":" + base.to_json() + "}");
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw FormatError(FormatError::Kind::io, "cannot create directory " + a.out);
  for (int i = 0; i < a.scenes; ++i) {
    SceneRecipe r = base;
    r.seed = a.seed + static_cast<std::uint64_t>(i);
    char name[32];
    std::snprintf(name, sizeof name, "scene-%04d.mtsp", i);
    write_sample(generate_scene(r), fs::path(a.out) / name);
  }
  std::cout << "wrote " << a.scenes << " scenes to " << a.out << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data, val, out, resume;
  SPInetConfig model = SPInetConfig::desk_scale();
  TrainConfig train;
  bool no_mrf = false;
  bool quiet = false;
};

int cmd_train(TrainArgs a) {
  a.model.use_mrf = !a.no_mrf;
  a.train.checkpoint_dir = a.out;
  a.model.validate();
  a.train.validate(a.model.upscale);
  const auto train_set = load_dir(a.data, "--data");
  std::vector<MultiTemporalSample> val_set;
  if (!a.val.empty()) val_set = load_dir(a.val, "--val");
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    require_file(a.resume, "--resume");
    resume = load_checkpoint(a.resume, a.model);
  }
  echo("train", "{\"model\":" + a.model.to_json() + ",\"train\":" + a.train.to_json() + ",\"seed\":" +
                    std::to_string(a.train.seed) + ",\"threads\":" + std::to_string(thread_limit()) + "}");

  TrainHooks hooks;
  if (!a.quiet) {
    hooks.on_step = [](const StepRecord& r) {
      if (r.step % 25 == 0) std::printf("step %6lld  loss %.6f\n", static_cast<long long>(r.step), r.loss);
      std::fflush(stdout);
    };
  }
  hooks.on_eval = [](const EvalRecord& r) {
    std::printf("eval after %lld steps  mean MCC %.4f\n", static_cast<long long>(r.step), r.mean_mcc);
    std::fflush(stdout);
  };
  const auto result = train(a.model, a.train, train_set, val_set, resume ? &*resume : nullptr, hooks);
  text_file(fs::path(a.out) / "train_log.jsonl", result.log.to_jsonl());
  std::cout << "final checkpoint " << (fs::path(a.out) / "final.ckpt").string() << "\n";
  if (result.best) std::cout << "best checkpoint  " << (fs::path(a.out) / "best.ckpt").string() << "\n";
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, report;
  std::optional<double> baseline_threshold;
  double max_cloud = 0.25;
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.checkpoint, "--checkpoint");
  const auto ck = load_checkpoint(a.checkpoint);
  std::vector<std::string> names;
  const auto scenes = load_dir(a.data, "--data", &names);
  echo("eval", "{\"checkpoint\":\"" + a.checkpoint + "\",\"model\":" + ck.config.to_json() +
                   ",\"max_cloud\":" + std::to_string(a.max_cloud) + ",\"baseline_threshold\":" +
                   (a.baseline_threshold ? std::to_string(*a.baseline_threshold) : "null") + "}");

  EvaluationOptions opts;
  opts.max_cloud = a.max_cloud;
  const auto scores = evaluate(ck, scenes, opts);

  EvaluationReport report;
  if (a.baseline_threshold) report.methods.push_back("Model-based");
  report.methods.push_back("SPInet");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::vector<double> row;
    if (a.baseline_threshold) {
      const auto chosen = select_frames(scenes[i], a.max_cloud);
      row.push_back(mcc(confusion(ndvi_baseline(chosen, *a.baseline_threshold), chosen.label)));
    }
    row.push_back(scores[i].mcc);
    report.add_scene(names[i], row);
  }
  const std::string text = report.to_text();
  std::cout << text;
  if (!a.report.empty()) {
    text_file(a.report, text);
    text_file(a.report + ".json", report.to_json() + "\n");
  }
  return kOk;
}

// ---- baseline ---------------------------------------------------------------

struct BaselineArgs {
  std::string data;
  std::optional<double> threshold;
  bool sweep = false;
  double max_cloud = 0.25;
};

int cmd_baseline(const BaselineArgs& a) {
  if (a.sweep == a.threshold.has_value()) throw ValidationError("pass exactly one of --threshold and --sweep");
  std::vector<std::string> names;
  const auto raw = load_dir(a.data, "--data", &names);
  echo("baseline", std::string("{\"data\":\"") + a.data + "\",\"max_cloud\":" + std::to_string(a.max_cloud) +
                       ",\"mode\":\"" + (a.sweep ? "sweep" : "threshold") + "\"}");
  std::vector<MultiTemporalSample> scenes;
  for (const auto& s : raw) scenes.push_back(select_frames(s, a.max_cloud));

  if (a.sweep) {
    const auto grid = default_threshold_grid();
    const auto r = threshold_sweep(scenes, grid);
    std::printf("%10s  %8s\n", "threshold", "mean MCC");
    for (std::size_t i = 0; i < grid.size(); ++i) std::printf("%10.2f  %8.4f\n", r.thresholds[i], r.mean_mcc[i]);
    std::printf("best threshold %.2f  mean MCC %.4f\n", r.best_threshold, r.best_mcc);
    return kOk;
  }
  EvaluationReport report;
  report.methods = {"Model-based"};
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    report.add_scene(names[i], {mcc(confusion(ndvi_baseline(scenes[i], *a.threshold), scenes[i].label))});
  }
  std::cout << report.to_text();
  return kOk;
}

// ---- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, sample, out;
  double threshold = 0.5;
  double max_cloud = 0.25;
};

int cmd_predict(const PredictArgs& a) {
  require_file(a.checkpoint, "--checkpoint");
  require_file(a.sample, "--sample");
  const auto ck = load_checkpoint(a.checkpoint);
  const auto sample = select_frames(read_sample(a.sample), a.max_cloud);
  echo("predict", "{\"checkpoint\":\"" + a.checkpoint + "\",\"model\":" + ck.config.to_json() +
                      ",\"threshold\":" + std::to_string(a.threshold) + ",\"frames\":" +
                      std::to_string(sample.frame_count()) + "}");
  auto model = instantiate(ck);
  const Batch batch = make_batch({&sample});
  const Tensor logits = model->forward(batch.inputs, Mode::eval);
  const BinaryMap map = to_binary_map(threshold_logits(logits, a.threshold));

  std::ofstream pgm(a.out, std::ios::binary);
  pgm << "P5\n" << map.width << " " << map.height << "\n255\n";
  for (auto v : map.values) pgm.put(static_cast<char>(v ? 255 : 0));
  if (!pgm) throw FormatError(FormatError::Kind::io, "cannot write " + a.out);

  const std::string sidecar = a.out + ".logits.f32";
  std::ofstream raw(sidecar, std::ios::binary);
  for (float z : logits.data<float>()) {
    const auto bits = std::bit_cast<std::uint32_t>(z);
    for (int i = 0; i < 4; ++i) raw.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  if (!raw) throw FormatError(FormatError::Kind::io, "cannot write " + sidecar);
  std::cout << "wrote " << a.out << " (" << map.width << "x" << map.height << ", " << map.positives()
            << " positive pixels) and " << sidecar << "\n";
  return kOk;
}

// ---- check ------------------------------------------------------------------

struct CheckArgs {
  std::string suite = "all";
  CheckOptions options;
};

int cmd_check(const CheckArgs& a) {
  echo("check", "{\"suite\":\"" + a.suite + "\",\"seed\":" + std::to_string(a.options.seed) +
                    ",\"gradient_seeds\":" + std::to_string(a.options.gradient_seeds) + ",\"permutations\":" +
                    std::to_string(a.options.permutations) + "}");
  const auto results = run_check_suite(a.suite, a.options);
  print_checks(results);
  for (const auto& r : results) {
    if (!r.passed) {
      std::cerr << "property failed: " << r.name << "\n";
      return kRuntime;
    }
  }
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const EmptyInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    // Missing inputs are rejected up front, so I/O failures here are runtime
    // failures; malformed contents are validation failures.
    return e.kind() == FormatError::Kind::io ? kRuntime : kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  spinet::retain_heap_memory();
  CLI::App app{"SPInet: temporally permutation-invariant super-resolved segmentation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic multi-temporal scenes");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--scenes", synth.scenes, "Number of scenes")->capture_default_str();
  s->add_option("--seed", synth.seed, "Seed of the first scene")->capture_default_str();
  s->add_option("--frames", synth.frames, "Frames per scene")->capture_default_str();
  s->add_option("--size", synth.size, "Low-resolution scene side")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on synthetic scenes");
  t->add_option("--data", tr.data, "Training scene directory")->required();
  t->add_option("--val", tr.val, "Validation scene directory");
  t->add_option("--out", tr.out, "Output directory for checkpoints and the log")->required();
  t->add_option("--channels", tr.model.channels, "Feature channels F")->capture_default_str();
  t->add_option("--tefa", tr.model.n_tefa, "Number of TEFA blocks")->capture_default_str();
  t->add_option("--bands", tr.model.bands, "Input bands")->capture_default_str();
  t->add_option("--steps", tr.train.steps, "Optimizer steps")->capture_default_str();
  t->add_option("--lr", tr.train.lr, "Learning rate")->capture_default_str();
  t->add_option("--batch", tr.train.batch_size, "Batch size")->capture_default_str();
  t->add_option("--patch", tr.train.patch, "Low-resolution patch side")->capture_default_str();
  t->add_option("--train-t", tr.train.train_frames, "Frames per training item")->capture_default_str();
  t->add_option("--seed", tr.train.seed, "Seed for init and data order")->capture_default_str();
  t->add_option("--eval-interval", tr.train.eval_interval, "Validate every N steps (0: at the end)")
      ->capture_default_str();
  t->add_option("--resume", tr.resume, "Continue from a checkpoint");
  t->add_flag("--no-mrf", tr.no_mrf, "Replace the fusion head by the full-resolution ablation head");
  t->add_flag("--quiet", tr.quiet, "Do not print per-step losses");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint per scene");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Scene directory")->required();
  e->add_option("--report", ev.report, "Text report path; JSON goes to <report>.json");
  e->add_option("--baseline-threshold", ev.baseline_threshold, "Add the NDVI baseline column at this threshold");

  BaselineArgs bl;
  auto* b = app.add_subcommand("baseline", "NDVI threshold baseline");
  b->add_option("--data", bl.data, "Scene directory")->required();
  auto* thr = b->add_option("--threshold", bl.threshold, "NDVI threshold");
  auto* sw = b->add_flag("--sweep", bl.sweep, "Sweep the default threshold grid");
  thr->excludes(sw);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Write a binary map and raw logits for one sample");
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  p->add_option("--sample", pr.sample, "MTSP sample")->required();
  p->add_option("--out", pr.out, "Output graymap (.pgm)")->required();
  p->add_option("--threshold", pr.threshold, "Probability threshold")->capture_default_str();

  CheckArgs ck;
  auto* c = app.add_subcommand("check", "Run a property suite");
  c->add_option("--suite", ck.suite, "equivariance | gradients | oracles | all")
      ->check(CLI::IsMember({"equivariance", "gradients", "oracles", "all"}))
      ->capture_default_str();
  c->add_option("--seed", ck.options.seed, "Seed")->capture_default_str();
  c->add_option("--gradient-seeds", ck.options.gradient_seeds, "Seeds per gradient check")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    if (code != 0) std::cerr << app.help();
    return code == 0 ? kOk : kValidation;
  }

  if (s->parsed()) return guarded([&] { return cmd_synth(synth); });
  if (t->parsed()) return guarded([&] { return cmd_train(tr); });
  if (e->parsed()) return guarded([&] { return cmd_eval(ev); });
  if (b->parsed()) return guarded([&] { return cmd_baseline(bl); });
  if (p->parsed()) return guarded([&] { return cmd_predict(pr); });
  if (c->parsed()) return guarded([&] { return cmd_check(ck); });
  return kValidation;
}
