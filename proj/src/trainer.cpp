#include "amnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <numeric>
#include <map>
#include <sstream>

#include "amnet/checkpoint.hpp"
#include "amnet/image_io.hpp"
#include "amnet/ops.hpp"
#include "amnet/parallel.hpp"
#include "amnet/random.hpp"

namespace amnet {

LossLog::LossLog(const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open loss log " + path.string());
  if (fresh) out_ << "epoch,stage1,stage2,stage3,seg,total\n";
  out_.flush();
}

void LossLog::append(const EpochLosses& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.stage[0], e.stage[1], e.stage[2], e.seg,
                e.total);
  out_ << buf;
  out_.flush();
}

std::vector<EpochLosses> LossLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log " + path.string());
  std::vector<EpochLosses> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochLosses e;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &e.epoch, &e.stage[0], &e.stage[1], &e.stage[2], &e.seg,
                    &e.total) != 6) {
      throw IoError("malformed loss log line: " + line);
    }
    rows.push_back(e);
  }
  return rows;
}

namespace {

std::vector<float> crop_map(const std::vector<float>& m, Index W, Index y0, Index x0, Index h, Index w) {
  std::vector<float> out(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out[static_cast<std::size_t>(y * w + x)] = m[static_cast<std::size_t>((y0 + y) * W + x0 + x)];
  return out;
}

struct Augmentation {
  bool flip = false;
  int perm[3] = {0, 1, 2};
  float gain = 1.0f, bias = 0.0f;
};

Augmentation draw_augmentation(Rng& rng) {
  Augmentation a;
  a.flip = rng.uniform(0, 1) < 0.5;
  for (int i = 2; i > 0; --i) std::swap(a.perm[i], a.perm[rng.uniform_int(0, i)]);
  a.gain = static_cast<float>(rng.uniform(0.8, 1.2));
  a.bias = static_cast<float>(rng.uniform(-0.1, 0.1));
  return a;
}

template <typename V>
void flip_rows(V& plane, Index h, Index w, Index planes) {
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < h / 2; ++y)
      std::swap_ranges(plane.begin() + (p * h + y) * w, plane.begin() + (p * h + y + 1) * w, plane.begin() + (p * h + h - 1 - y) * w);
}

void apply_augmentation(StereoSample& s, const Augmentation& a) {
  const Index plane = s.width * s.height;
  for (auto* img : {&s.left, &s.right}) {
    std::vector<float> out(img->size());
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < plane; ++i)
        out[static_cast<std::size_t>(c * plane + i)] =
            std::clamp((*img)[static_cast<std::size_t>(a.perm[c] * plane + i)] * a.gain + a.bias, 0.0f, 1.0f);
    *img = std::move(out);
    if (a.flip) flip_rows(*img, s.height, s.width, 3);
  }
  if (a.flip) {
    flip_rows(s.gt, s.height, s.width, 1);
    flip_rows(s.valid, s.height, s.width, 1);
    flip_rows(s.fg, s.height, s.width, 1);
    flip_rows(s.noc, s.height, s.width, 1);
  }
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(AmNet<T>& net, RunConfig config, std::vector<StereoSample> train, SChannelStore* s_store)
    : net_(net),
      config_(std::move(config)),
      train_(std::move(train)),
      s_store_(s_store),
      opt_(net.store(), AdamOptions{config_.lr.initial}) {
  if (train_.empty()) throw std::invalid_argument("training set is empty");
  if (net_.config().fba) {
    if (!s_store_) throw std::invalid_argument("multitask training needs an S-channel store");
    for (const auto& s : train_) {
      if (!s.has_fg()) throw std::invalid_argument("multitask training sample '" + s.id + "' has no foreground mask");
    }
  }
  for (const auto& s : train_) {
    if (!s.has_gt()) throw std::invalid_argument("training sample '" + s.id + "' has no ground truth");
    if (s.height < config_.crop_height || s.width < config_.crop_width) {
      throw std::invalid_argument("training sample '" + s.id + "' is smaller than the crop");
    }
  }
  if (config_.lr.new_layer_scale != 1.0) {
    opt_.set_lr_scale("seg", config_.lr.new_layer_scale);
    for (const auto& p : net_.store().parameters())
      if (p.name.find(".s_branch") != std::string::npos) opt_.set_lr_scale(p.name, config_.lr.new_layer_scale);
  }
}

template <typename T>
EpochLosses Trainer<T>::run_epoch(int epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool fba = net_.config().fba;
  const Index ch = config_.crop_height, cw = config_.crop_width;
  const double d_max = static_cast<double>(net_.config().d_max);
  EpochLosses res;
  res.epoch = epoch;
  res.lr = config_.lr.at(epoch);
  opt_.set_lr(res.lr);

  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_coords(config_.seed, epoch, 0x54524e, 0));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  }

  std::map<std::string, std::vector<float>> next_s;
  int batches = 0;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(config_.batch)) {
    const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(config_.batch));
    std::vector<StereoSample> crops;
    std::vector<std::pair<Index, Index>> origins;
    std::vector<bool> flipped;
    std::vector<float> s_values;
    std::vector<T> gt;
    std::vector<std::uint8_t> mask, fg;
    for (std::size_t k = b0; k < b1; ++k) {
      const StereoSample& s = train_[order[k]];
      const Index y0 = rng.uniform_int(0, s.height - ch), x0 = rng.uniform_int(0, s.width - cw);
      crops.push_back(crop(s, y0, x0, ch, cw));
      origins.emplace_back(y0, x0);
      const Augmentation aug = config_.augment ? draw_augmentation(rng) : Augmentation{};
      apply_augmentation(crops.back(), aug);
      flipped.push_back(aug.flip);
      const auto& c = crops.back();
      gt.insert(gt.end(), c.gt.begin(), c.gt.end());
      const auto m = training_mask(c, d_max);
      mask.insert(mask.end(), m.begin(), m.end());
      if (fba) {
        fg.insert(fg.end(), c.fg.begin(), c.fg.end());
        const auto full = s_store_->get(s.id, s.height, s.width);
        auto part = crop_map(full, s.width, y0, x0, ch, cw);
        if (aug.flip) flip_rows(part, ch, cw, 1);
        s_values.insert(s_values.end(), part.begin(), part.end());
      }
    }
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; })) continue;
    std::vector<const StereoSample*> ptrs;
    for (const auto& c : crops) ptrs.push_back(&c);
    const auto left = stack_images<T>(ptrs, false), right = stack_images<T>(ptrs, true);
    const Index n = static_cast<Index>(crops.size());
    std::optional<BasicTensor<T>> s_tensor;
    if (fba) s_tensor = BasicTensor<T>(Shape{n, 1, ch, cw}, std::vector<T>(s_values.begin(), s_values.end()));

    net_.store().zero_grad();
    auto out = net_.forward(left, right, s_tensor ? &*s_tensor : nullptr, HeadMode::AllStages, true);
    auto disp = total_disparity_loss<T>(out.disparities, gt, mask);
    BasicTensor<T> total = disp.total;
    if (fba) {
      auto mt = multitask_loss(disp.total, *out.seg_probs, fg, config_.lambda);
      total = mt.total;
      res.seg += static_cast<double>(mt.l_seg.item());
      for (Index i = 0; i < n; ++i) {
        const StereoSample& s = train_[order[b0 + static_cast<std::size_t>(i)]];
        auto& pending = next_s[s.id];
        if (pending.empty()) pending = s_store_->get(s.id, s.height, s.width);
        auto prob = foreground_probability(*out.seg_probs, i);
        if (flipped[static_cast<std::size_t>(i)]) flip_rows(prob, ch, cw, 1);
        const auto [y0, x0] = origins[static_cast<std::size_t>(i)];
        for (Index y = 0; y < ch; ++y)
          for (Index x = 0; x < cw; ++x)
            pending[static_cast<std::size_t>((y0 + y) * s.width + x0 + x)] = prob[static_cast<std::size_t>(y * cw + x)];
      }
    }
    total.backward();
    opt_.step();
    for (int k = 0; k < 3; ++k) res.stage[k] += static_cast<double>(disp.stages[static_cast<std::size_t>(k)].item());
    res.total += static_cast<double>(total.item());
    ++batches;
  }
  if (batches > 0) {
    for (double& v : res.stage) v /= batches;
    res.seg /= batches;
    res.total /= batches;
  }
  if (fba) {
    for (auto& [id, values] : next_s) {
      const auto it = std::find_if(train_.begin(), train_.end(), [&](const StereoSample& s) { return s.id == id; });
      s_store_->put(id, it->height, it->width, std::move(values));
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

namespace {

// Consecutive runs of equally sized samples, at most `batch` long.
std::vector<std::vector<std::size_t>> size_groups(const std::vector<StereoSample>& padded, int batch) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < padded.size(); ++i) {
    if (groups.empty() || static_cast<int>(groups.back().size()) >= batch ||
        padded[groups.back()[0]].height != padded[i].height || padded[groups.back()[0]].width != padded[i].width) {
      groups.emplace_back();
    }
    groups.back().push_back(i);
  }
  return groups;
}

std::vector<float> unpad(std::span<const float> values, Index padded_w, Index h, Index w) {
  std::vector<float> out(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out[static_cast<std::size_t>(y * w + x)] = values[static_cast<std::size_t>(y * padded_w + x)];
  return out;
}

template <typename T>
std::vector<std::vector<float>> run_eval(AmNet<T>& net, const std::vector<StereoSample>& samples,
                                         const SChannelStore* s_store, int batch, bool foreground) {
  const Index m = net.config().backbone.cumulative_stride();
  std::vector<StereoSample> padded;
  for (const auto& s : samples) padded.push_back(pad_to_multiple(s, m));
  std::vector<std::vector<float>> out(samples.size());
  NoGradGuard guard;
  for (const auto& group : size_groups(padded, std::max(batch, 1))) {
    std::vector<const StereoSample*> ptrs;
    for (std::size_t i : group) ptrs.push_back(&padded[i]);
    const Index n = static_cast<Index>(group.size()), H = ptrs[0]->height, W = ptrs[0]->width;
    std::optional<BasicTensor<T>> s_tensor;
    if (net.config().fba && s_store) {
      std::vector<T> sv;
      for (std::size_t i : group) {
        const auto& orig = samples[i];
        const auto full = s_store->get(orig.id, orig.height, orig.width);
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x)
            sv.push_back(y < orig.height && x < orig.width ? static_cast<T>(full[static_cast<std::size_t>(y * orig.width + x)]) : T(0));
      }
      s_tensor = BasicTensor<T>(Shape{n, 1, H, W}, std::move(sv));
    }
    auto res = net.forward(stack_images<T>(ptrs, false), stack_images<T>(ptrs, true), s_tensor ? &*s_tensor : nullptr,
                           HeadMode::FinalOnly, false);
    if (foreground && !res.seg_probs) throw std::invalid_argument("network has no segmentation head");
    for (Index k = 0; k < n; ++k) {
      const auto& orig = samples[group[static_cast<std::size_t>(k)]];
      std::vector<float> full;
      if (foreground) {
        full = foreground_probability(*res.seg_probs, k);
      } else {
        const auto d = res.disparities.back().data().subspan(static_cast<std::size_t>(k * H * W), static_cast<std::size_t>(H * W));
        full.assign(d.begin(), d.end());
      }
      out[group[static_cast<std::size_t>(k)]] = unpad(full, W, orig.height, orig.width);
    }
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<std::vector<float>> predict(AmNet<T>& net, const std::vector<StereoSample>& samples, int batch) {
  return run_eval(net, samples, nullptr, batch, false);
}

template <typename T>
std::vector<std::vector<float>> predict_foreground(AmNet<T>& net, const std::vector<StereoSample>& samples,
                                                   const SChannelStore* s_store, int batch) {
  return run_eval(net, samples, s_store, batch, true);
}

EvalReport evaluate(const std::vector<StereoSample>& samples, const std::vector<std::vector<float>>& predictions) {
  if (samples.size() != predictions.size()) throw std::invalid_argument("evaluate: prediction count mismatch");
  EvalReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!s.has_gt()) throw std::invalid_argument("evaluate: sample '" + s.id + "' has no ground truth");
    std::vector<std::uint8_t> valid = s.valid;
    if (valid.empty()) valid.assign(s.gt.size(), 1);
    report.add(s.id, predictions[i], s.gt, valid, s.fg, s.noc);
  }
  report.finalize();
  return report;
}

double mean_foreground_iou(const std::vector<StereoSample>& samples, const std::vector<std::vector<float>>& fg_probs) {
  if (samples.size() != fg_probs.size() || samples.empty()) throw std::invalid_argument("mean_foreground_iou: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].has_fg()) throw std::invalid_argument("sample '" + samples[i].id + "' has no foreground mask");
    std::vector<std::uint8_t> pred(fg_probs[i].size());
    for (std::size_t k = 0; k < pred.size(); ++k) pred[k] = fg_probs[i][k] > 0.5f;
    acc += foreground_iou(pred, samples[i].fg);
  }
  return acc / static_cast<double>(samples.size());
}

DegenerateCheckResult degenerate_multitask_check(RunConfig config, const std::vector<StereoSample>& train,
                                                 const std::vector<StereoSample>& eval, int epochs) {
  config.network.fba = false;
  RunConfig twin = config;
  twin.network.fba = true;
  twin.lambda = 0.0;
  AmNet<float> plain(config.network, config.seed), multi(twin.network, twin.seed);
  multi.store().set_trainable("seg", false);
  for (auto& p : multi.store().parameters())
    if (p.name.find(".s_branch") != std::string::npos) p.trainable = false;
  SChannelStore zeros;
  Trainer<float> a(plain, config, train), b(multi, twin, train, &zeros);
  DegenerateCheckResult res;
  for (int e = 1; e <= epochs; ++e) {
    res.plain_history.push_back(a.run_epoch(e));
    zeros.clear();
    res.multitask_history.push_back(b.run_epoch(e));
    zeros.clear();
  }
  const auto pa = predict(plain, eval, config.batch), pb = predict(multi, eval, config.batch);
  res.bitwise_equal = true;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    res.bitwise_equal = res.bitwise_equal && pa[i].size() == pb[i].size() &&
                        std::memcmp(pa[i].data(), pb[i].data(), pa[i].size() * sizeof(float)) == 0;
    for (std::size_t k = 0; k < pa[i].size(); ++k)
      res.max_abs_diff = std::max(res.max_abs_diff, static_cast<double>(std::abs(pa[i][k] - pb[i][k])));
  }
  return res;
}

TrainRunResult run_training(const RunConfig& config, const std::function<void(const EpochLosses&)>& progress) {
  namespace fs = std::filesystem;
  if (config.train_dir.empty()) throw IoError("no training dataset given");
  if (!fs::exists(config.train_dir)) throw IoError("training dataset not found: " + config.train_dir);
  set_num_threads(config.threads);
  auto train = read_dataset(config.train_dir);
  std::vector<StereoSample> val;
  if (!config.val_dir.empty()) {
    if (!fs::exists(config.val_dir)) throw IoError("validation dataset not found: " + config.val_dir);
    val = read_dataset(config.val_dir);
  }
  const fs::path out = config.out_dir;
  fs::create_directories(out / "checkpoints");
  write_json_file(out / "config.json", to_json(config));

  AmNet<float> net(config.network, config.seed);
  if (!config.checkpoint.empty()) load_checkpoint(config.checkpoint, net);
  std::optional<SChannelStore> store;
  if (config.network.fba) {
    store.emplace(out / "s_channel");
    store->load();
  }
  Trainer<float> trainer(net, config, std::move(train), store ? &*store : nullptr);
  LossLog log(out / "loss.csv");
  TrainRunResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto e = trainer.run_epoch(epoch);
    log.append(e);
    result.history.push_back(e);
    if (store) store->save();
    const nlohmann::json meta = {{"epoch", epoch}, {"seed", config.seed}};
    if (config.checkpoint_every_epoch) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_checkpoint(out / "checkpoints" / name, net, meta);
    }
    if (epoch == config.epochs) save_checkpoint(out / "final.ckpt", net, meta);
    if (progress) progress(e);
  }
  if (config.epochs == 0) save_checkpoint(out / "final.ckpt", net, {{"epoch", 0}, {"seed", config.seed}});
  if (!val.empty()) {
    result.validation = evaluate(val, predict(net, val, config.batch));
    std::ofstream(out / "validation.json") << result.validation->to_json() << '\n';
    if (config.network.fba) result.validation_iou = mean_foreground_iou(val, predict_foreground(net, val, nullptr, config.batch));
  }
  if (store && store->size() > 0) {
    const auto& samples = read_dataset(config.train_dir);
    std::vector<std::vector<float>> maps;
    for (const auto& s : samples) maps.push_back(store->get(s.id, s.height, s.width));
    result.train_iou = mean_foreground_iou(samples, maps);
  }
  return result;
}

template class Trainer<float>;
template class Trainer<double>;
template std::vector<std::vector<float>> predict(AmNet<float>&, const std::vector<StereoSample>&, int);
template std::vector<std::vector<float>> predict(AmNet<double>&, const std::vector<StereoSample>&, int);
template std::vector<std::vector<float>> predict_foreground(AmNet<float>&, const std::vector<StereoSample>&,
                                                            const SChannelStore*, int);
template std::vector<std::vector<float>> predict_foreground(AmNet<double>&, const std::vector<StereoSample>&,
                                                            const SChannelStore*, int);

}  // namespace amnet
