#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "amnet/checkpoint.hpp"
#include "amnet/config.hpp"
#include "amnet/cost_volume.hpp"
#include "amnet/data.hpp"
#include "amnet/image_io.hpp"
#include "amnet/metrics.hpp"
#include "amnet/parallel.hpp"
#include "amnet/trainer.hpp"
#include "amnet/verify.hpp"

namespace fs = std::filesystem;
using namespace amnet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kVerify = 3 };

/// Failures caused by inputs on disk rather than by the command line.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunFlags {
  std::string config;
  std::optional<std::string> preset, out, checkpoint, train_dir, val_dir;
  std::optional<std::uint64_t> seed;
  std::optional<Index> dmax;
  std::optional<double> lambda, lr;
  std::optional<int> epochs, batch, threads;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "JSON config file");
    app.add_option("--preset", preset, "micro | fba-micro | amnet-8 | amnet-32 | fba-8 | fba-32");
    app.add_option("--seed", seed, "run seed");
    app.add_option("--dmax", dmax, "maximum disparity in full-resolution pixels");
    app.add_option("--lambda", lambda, "segmentation loss weight");
    app.add_option("--epochs", epochs);
    app.add_option("--batch", batch);
    app.add_option("--lr", lr, "initial learning rate");
    app.add_option("--out", out, "output directory");
    app.add_option("--checkpoint", checkpoint);
    app.add_option("--threads", threads);
    app.add_option("--train", train_dir, "training dataset directory");
    app.add_option("--val", val_dir, "validation dataset directory");
  }

  nlohmann::json as_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (preset) j["preset"] = *preset;
    if (seed) j["seed"] = *seed;
    if (dmax) j["network"]["d_max"] = *dmax;
    if (lambda) j["lambda"] = *lambda;
    if (epochs) j["epochs"] = *epochs;
    if (batch) j["batch"] = *batch;
    if (lr) j["lr"] = *lr;
    if (out) j["out_dir"] = *out;
    if (checkpoint) j["checkpoint"] = *checkpoint;
    if (threads) j["threads"] = *threads;
    if (train_dir) j["train_dir"] = *train_dir;
    if (val_dir) j["val_dir"] = *val_dir;
    return j;
  }

  RunConfig resolve() const {
    nlohmann::json file = nlohmann::json::object();
    if (!config.empty()) {
      if (!fs::exists(config)) throw DataError("config file not found: " + config);
      file = read_json_file(config);
    }
    auto cfg = resolve_config(file, [](const char* k) { return std::getenv(k); }, as_json());
    set_num_threads(cfg.threads);
    return cfg;
  }
};

StereoSample load_pair(const fs::path& left, const fs::path& right) {
  const auto l = read_png8(left, 3), r = read_png8(right, 3);
  if (l.width != r.width || l.height != r.height) throw DataError("left and right images differ in size");
  StereoSample s;
  s.id = left.stem().string();
  s.width = l.width;
  s.height = l.height;
  const Index hw = l.width * l.height;
  s.left.resize(static_cast<std::size_t>(3 * hw));
  s.right.resize(s.left.size());
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < hw; ++i) {
      s.left[static_cast<std::size_t>(c * hw + i)] = l.data[static_cast<std::size_t>(3 * i + c)] / 255.0f;
      s.right[static_cast<std::size_t>(c * hw + i)] = r.data[static_cast<std::size_t>(3 * i + c)] / 255.0f;
    }
  return s;
}

/// Network matching the checkpoint's stored configuration.
std::unique_ptr<AmNet<float>> load_network(const std::string& checkpoint, const std::optional<std::string>& preset) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint);
  const auto header = read_checkpoint_header(checkpoint);
  auto net_cfg = network_from_json(header.at("network"));
  if (preset && *preset != net_cfg.preset) {
    throw CheckpointError("checkpoint holds preset '" + net_cfg.preset + "' but '" + *preset + "' was requested");
  }
  auto net = std::make_unique<AmNet<float>>(net_cfg, 0);
  load_checkpoint(checkpoint, *net);
  return net;
}

void write_disparity(const fs::path& stem, const StereoSample& s, const std::vector<float>& disp, float d_max) {
  write_pfm(stem.string() + ".pfm", {s.width, s.height, 1, disp});
  std::vector<std::uint8_t> valid(disp.size(), 1);
  write_kitti_png(stem.string() + ".png", s.width, s.height, disp, valid);
  write_png8(stem.string() + "_heatmap.png", colorize(disp, s.width, s.height, 0.0f, d_max));
}

int cmd_train(const RunFlags& flags) {
  const auto cfg = flags.resolve();
  std::cout << "train: preset " << cfg.preset << ", " << cfg.epochs << " epochs, batch " << cfg.batch << ", out "
            << cfg.out_dir << "\n";
  const auto result = run_training(cfg, [](const EpochLosses& e) {
    std::printf("epoch %4d  stage %.4f %.4f %.4f  seg %.4f  total %.4f  lr %.1e  %.1fs\n", e.epoch, e.stage[0],
                e.stage[1], e.stage[2], e.seg, e.total, e.lr, e.seconds);
    std::fflush(stdout);
  });
  if (result.validation) std::cout << result.validation->to_text();
  if (result.validation_iou) std::printf("validation foreground IoU %.4f\n", *result.validation_iou);
  return kOk;
}

struct InferArgs {
  std::string left, right, data, out = "infer";
};

int cmd_infer(const RunFlags& flags, const InferArgs& a) {
  if (!flags.checkpoint) throw CLI::ValidationError("--checkpoint", "infer needs a checkpoint");
  if (a.data.empty() == (a.left.empty() || a.right.empty())) {
    throw CLI::ValidationError("infer", "give either --left and --right, or --data");
  }
  if (flags.threads) set_num_threads(*flags.threads);
  auto net = load_network(*flags.checkpoint, flags.preset);
  const float d_max = static_cast<float>(net->config().d_max);
  fs::create_directories(a.out);
  std::vector<StereoSample> samples;
  if (!a.data.empty()) {
    samples = read_dataset(a.data);
  } else {
    samples.push_back(load_pair(a.left, a.right));
  }
  const auto preds = predict(*net, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_disparity(fs::path(a.out) / samples[i].id, samples[i], preds[i], d_max);
    std::cout << "wrote " << (fs::path(a.out) / samples[i].id).string() << ".{pfm,png} and _heatmap.png\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string est, gt, json;
};

int cmd_eval(const EvalArgs& a) {
  const auto ids = read_manifest(a.gt);
  EvalReport report;
  for (const auto& id : ids) {
    const fs::path est_path = fs::path(a.est) / (id + ".pfm");
    if (!fs::exists(est_path)) throw DataError("missing estimate for '" + id + "': " + est_path.string());
    const auto est = read_pfm(est_path);
    const auto s = read_sample(a.gt, id);
    if (est.width != s.width || est.height != s.height || est.channels != 1) {
      throw DataError("estimate " + est_path.string() + " does not match the ground truth size");
    }
    report.add(id, est.data, s.gt, s.valid, s.fg, s.noc);
  }
  report.finalize();
  std::cout << report.to_text();
  if (!a.json.empty()) write_json_file(a.json, report.to_json());
  return kOk;
}

struct SynthArgs {
  std::string out;
  int count = 64;
  std::string prefix = "s";
  Index width = 128, height = 64;
  int dmax = 32;
  std::uint64_t seed = 1;
};

int cmd_gen_synth(const SynthArgs& a) {
  SynthSceneSpec spec;
  spec.width = a.width;
  spec.height = a.height;
  spec.d_max = a.dmax;
  spec.seed = a.seed;
  spec.validate();
  const auto samples = generate_synthetic_set(spec, a.count, a.prefix);
  try {
    write_dataset(a.out, samples);
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot write dataset: ") + e.what());
  }
  std::cout << "wrote " << samples.size() << " pairs to " << a.out << "\n";
  return kOk;
}

int cmd_verify(const std::string& suite, bool flip) {
  fault_injection::set_distance_sign_flip(flip);
  bool ok = true;
  for (const auto& r : run_verify(suite)) {
    std::printf("[%s] %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "all checks passed" : "verification failed");
  return ok ? kOk : kVerify;
}

int cmd_params(const RunFlags& flags) {
  const std::string preset = flags.preset.value_or("amnet-32");
  AmNet<float> net(NetworkConfig::from_preset(preset), 1);
  std::cout << net.parameter_report();
  const auto rep = count_parameters(preset);
  std::printf("backbone conv %lld (projections %lld), AM %lld, SAM %lld, norm affine %lld, total %lld\n",
              static_cast<long long>(rep.backbone), static_cast<long long>(rep.projection),
              static_cast<long long>(rep.am), static_cast<long long>(rep.sam), static_cast<long long>(rep.norm),
              static_cast<long long>(rep.total));
  return kOk;
}

struct SliceArgs {
  std::string left, right, out = "slice.png";
  Index channel = 0, level = 0;
};

int cmd_slice(const RunFlags& flags, const SliceArgs& a) {
  if (!flags.checkpoint) throw CLI::ValidationError("--checkpoint", "slice needs a checkpoint");
  auto net = load_network(*flags.checkpoint, flags.preset);
  auto s = pad_to_multiple(load_pair(a.left, a.right), 4);
  const std::vector<const StereoSample*> one{&s};
  NoGradGuard guard;
  std::optional<Tensor> zero_s;
  if (net->config().fba) zero_s = Tensor::zeros({1, 1, s.height, s.width});
  auto [fl, fr] = net->extractor().extract(stack_images<float>(one, false), stack_images<float>(one, true),
                                           zero_s ? &*zero_s : nullptr, false);
  const auto vol = build_ecv(fl, fr, net->config().feature_levels(), net->config().t, net->config().parts);
  if (a.channel < 0 || a.channel >= vol.depth() || a.level < 0 || a.level >= vol.levels()) {
    throw CLI::ValidationError("slice", "channel must be < " + std::to_string(vol.depth()) + " and level < " +
                                            std::to_string(vol.levels()));
  }
  const auto plane = volume_slice(vol, 0, a.channel, a.level);
  write_png8(a.out, to_gray8(plane, vol.data.dim(4), vol.data.dim(3)));
  std::cout << "wrote " << a.out << " (" << vol.data.dim(4) << "x" << vol.data.dim(3) << ", depth " << vol.depth()
            << ", levels " << vol.levels() << ")\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"amnet: stereo disparity estimation with atrous multiscale networks"};
  app.require_subcommand(1);

  RunFlags train_flags, infer_flags, slice_flags, params_flags;
  auto* train = app.add_subcommand("train", "train a network on a dataset directory");
  train_flags.attach(*train);

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "predict disparity for a pair or a dataset");
  infer_flags.attach(*infer);
  infer->add_option("--left", infer_args.left, "left PNG");
  infer->add_option("--right", infer_args.right, "right PNG");
  infer->add_option("--data", infer_args.data, "dataset directory (writes <id>.pfm per pair)");
  infer->add_option("--output", infer_args.out, "output directory")->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score estimated disparities against a dataset");
  eval->add_option("--est", eval_args.est, "directory of <id>.pfm estimates")->required();
  eval->add_option("--gt", eval_args.gt, "dataset directory with ground truth")->required();
  eval->add_option("--json", eval_args.json, "write the report as JSON");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("gen-synth", "generate a synthetic stereo dataset");
  synth->add_option("--out", synth_args.out, "dataset directory")->required();
  synth->add_option("--count", synth_args.count)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed)->capture_default_str();
  synth->add_option("--prefix", synth_args.prefix)->capture_default_str();
  synth->add_option("--width", synth_args.width)->capture_default_str();
  synth->add_option("--height", synth_args.height)->capture_default_str();
  synth->add_option("--dmax", synth_args.dmax)->capture_default_str();

  std::string suite = "all";
  bool flip = false;
  auto* verify = app.add_subcommand("verify", "run the verification suites");
  verify->add_option("suite", suite, "all | gradient | oracle | params | receptive-field")->capture_default_str();
  verify->add_flag("--inject-distance-sign-flip", flip, "negate the distance volume (mutation check)");

  auto* params = app.add_subcommand("params", "per-layer parameter counts of a preset");
  params->add_option("--preset", params_flags.preset, "preset (default amnet-32)");

  SliceArgs slice_args;
  auto* slice = app.add_subcommand("slice", "export one cost-volume slice as a grayscale PNG");
  slice_flags.attach(*slice);
  slice->add_option("--left", slice_args.left)->required();
  slice->add_option("--right", slice_args.right)->required();
  slice->add_option("--channel", slice_args.channel)->capture_default_str();
  slice->add_option("--level", slice_args.level)->capture_default_str();
  slice->add_option("--output", slice_args.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (infer->parsed()) return cmd_infer(infer_flags, infer_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (synth->parsed()) return cmd_gen_synth(synth_args);
    if (verify->parsed()) return cmd_verify(suite, flip);
    if (params->parsed()) return cmd_params(params_flags);
    if (slice->parsed()) return cmd_slice(slice_flags, slice_args);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
