// Prints one PASS/FAIL line per criterion; exits non-zero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "amnet/cost_volume.hpp"
#include "amnet/disparity_head.hpp"
#include "amnet/fba.hpp"
#include "amnet/metrics.hpp"
#include "amnet/random.hpp"
#include "amnet/trainer.hpp"
#include "amnet/verify.hpp"
#include "amnet/checkpoint.hpp"
#include "amnet/image_io.hpp"

using namespace amnet;

namespace {

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor64 random_features(Rng& rng, Index c, Index h, Index w) {
  std::vector<double> v(static_cast<std::size_t>(c * h * w));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor64(Shape{1, c, h, w}, std::move(v));
}

void gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = network_gradient_check();
  const double secs = seconds_since(t0);
  const bool ok = rep.probes == 50 && rep.max_rel_error < 1e-4 && secs < 300;
  report(1, "gradient integrity", ok,
         fmt("%d probes, max rel err %.3g (worst %s), %.1f s", rep.probes, rep.max_rel_error, rep.worst_parameter.c_str(), secs));
}

void ecv_oracle() {
  Rng rng(2024);
  const Index C = 3, H = 6, W = 6, D = 3;  // levels 0..3
  int mismatches = 0;
  for (int trial = 0; trial < 4; ++trial) {
    const auto l = random_features(rng, C, H, W), r = random_features(rng, C, H, W);
    auto L = [&](Index c, Index y, Index x) { return y < 0 || y >= H || x < 0 || x >= W ? 0.0 : l.at({0, c, y, x}); };
    auto R = [&](Index c, Index y, Index x, Index d) {
      return y < 0 || y >= H || x - d < 0 || x - d >= W ? 0.0 : r.at({0, c, y, x - d});
    };
    for (int t : {0, 1}) {
      const auto ecv = build_ecv(l, r, D, t).data;
      for (Index d = 0; d <= D; ++d)
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x)
            for (Index c = 0; c < C; ++c) {
              const double cat_l = L(c, y, x), cat_r = R(c, y, x, d);
              const double dist = std::abs(L(c, y, x) - R(c, y, x, d));
              double corr = 0;
              for (Index oy = -t; oy <= t; ++oy)
                for (Index ox = -t; ox <= t; ++ox) corr += L(c, y + oy, x + ox) * R(c, y + oy, x + ox, d);
              mismatches += ecv.at({0, c, d, y, x}) != cat_l;
              mismatches += ecv.at({0, C + c, d, y, x}) != cat_r;
              mismatches += ecv.at({0, 2 * C + c, d, y, x}) != dist;
              mismatches += ecv.at({0, 3 * C + c, d, y, x}) != corr;
            }
    }
  }
  report(2, "ECV oracle equivalence", mismatches == 0, fmt("4 trials x t in {0,1}, %d bitwise mismatches", mismatches));
}

void parameter_formulas() {
  int mismatches = 0, layers = 0;
  for (const auto& p : NetworkConfig::preset_names()) {
    const auto r = count_parameters(p);
    mismatches += r.formula_mismatches;
    layers += r.layers_checked;
  }
  const auto rep = count_parameters("amnet-32");
  const double dev = (static_cast<double>(rep.total) - kPublishedParams) / kPublishedParams;
  const bool ok = mismatches == 0 && std::abs(dev) <= 0.10;
  report(3, "parameter formulas", ok,
         fmt("%d layers, %d formula mismatches; amnet-32 total %lld vs 4.37M (%+.1f%%) = backbone conv %lld (projections %lld) "
             "+ AM %lld + SAM %lld + norm affine %lld",
             layers, mismatches, static_cast<long long>(rep.total), 100 * dev, static_cast<long long>(rep.backbone),
             static_cast<long long>(rep.projection), static_cast<long long>(rep.am), static_cast<long long>(rep.sam),
             static_cast<long long>(rep.norm)));
}

void soft_argmin_contract() {
  Rng rng(7);
  const Index d_max = 32;
  int out_of_range = 0;
  double worst_shift = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> v(9 * 2 * 4);
    const double spread = i % 3 == 0 ? 500.0 : i % 3 == 1 ? 10.0 : 0.1;
    for (auto& x : v) x = rng.uniform(-spread, spread);
    const Tensor64 vol(Shape{1, 1, 9, 2, 4}, v);
    const auto d = regress_disparity(vol, d_max, 8, 16);
    for (double x : d.data()) out_of_range += !(x >= 0.0 && x <= static_cast<double>(d_max));
    if (i % 10 == 0) {
      const double shift = rng.uniform(-100, 100);
      for (auto& x : v) x += shift;
      const auto s = regress_disparity(Tensor64(vol.shape(), v), d_max, 8, 16);
      for (std::size_t k = 0; k < s.data().size(); ++k) worst_shift = std::max(worst_shift, std::abs(s.data()[k] - d.data()[k]));
    }
  }
  int wrong_onehot = 0;
  for (Index level = 0; level <= d_max; ++level) {
    std::vector<double> p(static_cast<std::size_t>(d_max + 1), 0.0);
    p[static_cast<std::size_t>(level)] = 1.0;
    wrong_onehot += disparity_expectation(Tensor64(Shape{1, d_max + 1, 1, 1}, p)).item() != static_cast<double>(level);
  }
  const bool ok = out_of_range == 0 && wrong_onehot == 0 && worst_shift < 1e-6;
  report(4, "soft-argmin contract", ok,
         fmt("10000 volumes, %d outputs outside [0,%lld]; %d/%lld one-hot levels inexact; max shift change %.2g", out_of_range,
             static_cast<long long>(d_max), wrong_onehot, static_cast<long long>(d_max + 1), worst_shift));
}

void receptive_field() {
  std::string detail;
  bool ok = true;
  int prev = 0;
  for (int k : {2, 4, 8, 16, 32}) {
    const int r = am_impulse_radius(k);
    const int expect = AMModuleSpec::make(k, 4, Dimensionality::Two).support_radius();
    if ((k == 4 || k == 8) && r != expect) ok = false;
    if (r <= prev) ok = false;
    prev = r;
    detail += fmt("k=%d radius %d (sum of dilations %d); ", k, r, expect);
  }
  ok = ok && am_impulse_radius(8) == 21;
  report(5, "receptive-field law", ok, detail + "strictly increasing");
}

struct Data {
  std::vector<StereoSample> train, val;
};

Data make_data() {
  SynthSceneSpec spec;
  spec.seed = 100;
  Data d;
  d.train = generate_synthetic_set(spec, 64, "train");
  spec.seed = 200;
  d.val = generate_synthetic_set(spec, 16, "val");
  return d;
}

void micro_convergence(const Data& data) {
  RunConfig cfg = RunConfig::defaults("micro");
  AmNet<float> net(cfg.network, cfg.seed);
  Trainer<float> trainer(net, cfg, data.train);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<EpochLosses> hist;
  for (int e = 1; e <= cfg.epochs; ++e) {
    hist.push_back(trainer.run_epoch(e));
    if (e == 1 || e % 25 == 0) std::printf("  micro epoch %d: loss %.4f\n", e, hist.back().total), std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  const auto rep = evaluate(data.val, predict(net, data.val));
  const double drop = 1.0 - hist.back().total / hist.front().total;
  const bool ok = rep.all.epe < 1.0 && rep.all.bad3 < 10.0 && drop >= 0.80 && secs < 45 * 60;
  report(6, "micro-training convergence", ok,
         fmt("val EPE %.3f px, bad3 %.2f%% (noc EPE %.3f, bad3 %.2f%%); loss %.4f -> %.4f (-%.1f%%); %d epochs in %.1f min",
             rep.all.epe, rep.all.bad3, rep.noc.epe, rep.noc.bad3, hist.front().total, hist.back().total, 100 * drop,
             cfg.epochs, secs / 60));
}

void fba_multitask(const Data& data) {
  RunConfig cfg = RunConfig::defaults("fba-micro");
  cfg.lambda = 0.5;
  AmNet<float> net(cfg.network, cfg.seed);
  SChannelStore store;
  Trainer<float> trainer(net, cfg, data.train, &store);
  std::vector<EpochLosses> hist;
  for (int e = 1; e <= cfg.epochs; ++e) {
    hist.push_back(trainer.run_epoch(e));
    if (e == 1 || e % 25 == 0)
      std::printf("  fba epoch %d: disp %.4f seg %.4f\n", e, hist.back().total - cfg.lambda * hist.back().seg, hist.back().seg),
          std::fflush(stdout);
  }
  auto disp = [&](const EpochLosses& e) { return e.stage[0] + e.stage[1] + e.stage[2]; };
  const double disp_drop = 1.0 - disp(hist.back()) / disp(hist.front());
  const double seg_drop = 1.0 - hist.back().seg / hist.front().seg;
  const double iou = mean_foreground_iou(data.val, predict_foreground(net, data.val));

  std::vector<StereoSample> small(data.train.begin(), data.train.begin() + 8);
  RunConfig plain = RunConfig::defaults("micro");
  const auto degenerate = degenerate_multitask_check(plain, small, data.val, 3);

  const bool ok = iou > 0.5 && disp_drop >= 0.5 && seg_drop >= 0.5 && degenerate.bitwise_equal;
  report(7, "FBA-micro multitask", ok,
         fmt("val fg IoU %.3f; disparity loss -%.1f%%, seg loss -%.1f%%; lambda=0 frozen-head twin %s (max diff %.3g)", iou,
             100 * disp_drop, 100 * seg_drop, degenerate.bitwise_equal ? "bitwise equal" : "differs", degenerate.max_abs_diff));
}

void metric_fixtures() {
  const std::vector<std::uint8_t> one{1};
  const double f1 = d1_all(std::vector<float>{103}, std::vector<float>{100}, one);
  const double f2 = d1_all(std::vector<float>{14}, std::vector<float>{10}, one);
  Rng rng(5);
  int order_violations = 0, oracle_mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> est(64), gt(64);
    std::vector<std::uint8_t> mask(64);
    for (std::size_t i = 0; i < 64; ++i) {
      gt[i] = static_cast<float>(rng.uniform(0, 120));
      est[i] = gt[i] + static_cast<float>(rng.uniform(-12, 12));
      mask[i] = i == 0 || rng.uniform(0, 1) < 0.9;
    }
    const double d1 = d1_all(est, gt, mask), b3 = bad_pixel(est, gt, mask, 3.0);
    order_violations += d1 > b3;
    double sum = 0, sq = 0;
    std::int64_t n = 0, nd1 = 0, nb3 = 0;
    std::vector<double> errs;
    for (std::size_t i = 0; i < 64; ++i) {
      if (!mask[i]) continue;
      const double e = std::abs(static_cast<double>(est[i]) - static_cast<double>(gt[i]));
      sum += e;
      sq += e * e;
      ++n;
      nd1 += e >= 3.0 && e >= 0.05 * gt[i];
      nb3 += e >= 3.0;
      errs.push_back(e);
    }
    std::sort(errs.begin(), errs.end());
    const double dn = static_cast<double>(n);
    oracle_mismatches += epe(est, gt, mask) != sum / dn;
    oracle_mismatches += rms(est, gt, mask) != std::sqrt(sq / dn);
    oracle_mismatches += d1 != 100.0 * static_cast<double>(nd1) / dn;
    oracle_mismatches += b3 != 100.0 * static_cast<double>(nb3) / dn;
    oracle_mismatches += a99(est, gt, mask) != errs[static_cast<std::size_t>(std::ceil(0.99 * dn)) - 1];
  }
  const bool ok = f1 == 0.0 && f2 == 100.0 && order_violations == 0 && oracle_mismatches == 0;
  report(8, "metric fixtures", ok,
         fmt("gt=100/est=103 -> %.0f%%, gt=10/est=14 -> %.0f%%; d1>bad3 on %d/1000 maps; %d oracle mismatches", f1, f2,
             order_violations, oracle_mismatches));
}

void io_roundtrips() {
  const auto dir = std::filesystem::temp_directory_path() / "amnet_acceptance_io";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Rng rng(9);

  FloatImage img{13, 7, 1, {}};
  for (int i = 0; i < 91; ++i) img.data.push_back(static_cast<float>(rng.uniform(-500, 500)));
  write_pfm(dir / "a.pfm", img);
  const auto back = read_pfm(dir / "a.pfm");
  const bool pfm = back.data.size() == img.data.size() &&
                   std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0;

  std::vector<float> disp(91);
  std::vector<std::uint8_t> valid(91, 1);
  for (auto& d : disp) d = static_cast<float>(rng.uniform(0.01, 250));
  disp[0] = 0.0f;
  valid[1] = 0;
  write_kitti_png(dir / "d.png", 13, 7, disp, valid);
  const auto k = read_kitti_png(dir / "d.png");
  double worst = 0;
  bool codes = k.valid[0] == 0 && k.valid[1] == 0;
  for (std::size_t i = 2; i < 91; ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(k.disparity[i]) - disp[i]));
    codes = codes && k.valid[i] == 1 && static_cast<double>(k.disparity[i]) * 256.0 == std::round(disp[i] * 256.0);
  }
  const bool kitti = codes && worst <= 0.5 / 256.0 + 1e-6;

  AmNet<float> a(NetworkConfig::from_preset("micro"), 11);
  save_checkpoint(dir / "m.ckpt", a);
  AmNet<float> b(NetworkConfig::from_preset("micro"), 12);
  load_checkpoint(dir / "m.ckpt", b);
  std::vector<float> lv(3 * 32 * 64), rv(3 * 32 * 64);
  for (auto& v : lv) v = static_cast<float>(rng.uniform(0, 1));
  for (auto& v : rv) v = static_cast<float>(rng.uniform(0, 1));
  const Tensor left(Shape{1, 3, 32, 64}, lv), right(Shape{1, 3, 32, 64}, rv);
  const auto da = a.infer(left, right), db = b.infer(left, right);
  const bool ckpt = std::memcmp(da.data().data(), db.data().data(), da.data().size() * sizeof(float)) == 0;

  report(9, "I/O round trips", pfm && kitti && ckpt,
         fmt("PFM %s; KITTI PNG codes %s, max error %.5f px (1/256 = %.5f); checkpoint inference %s", pfm ? "bitwise" : "differs",
             codes ? "exact" : "wrong", worst, 1.0 / 256, ckpt ? "bitwise" : "differs"));
}

}  // namespace

int main() {
  gradient_integrity();
  ecv_oracle();
  parameter_formulas();
  soft_argmin_contract();
  receptive_field();
  const auto data = make_data();
  micro_convergence(data);
  fba_multitask(data);
  metric_fixtures();
  io_roundtrips();
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
