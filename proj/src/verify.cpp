#include "amnet/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>

#include "amnet/conv.hpp"
#include "amnet/data.hpp"
#include "amnet/metrics.hpp"
#include "amnet/ops.hpp"
#include "amnet/piecewise.hpp"
#include "amnet/random.hpp"

namespace amnet {

namespace {

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor64(std::move(shape), std::move(v));
}

// Right feature at column x - d, zero when that column does not exist.
double shifted(const Tensor64& r, Index n, Index c, Index y, Index x, Index d) {
  const Index xs = x - d;
  if (xs < 0 || xs >= r.dim(3) || y < 0 || y >= r.dim(2)) return 0.0;
  return r.at({n, c, y, xs});
}

double at_or_zero(const Tensor64& t, Index n, Index c, Index y, Index x) {
  if (y < 0 || y >= t.dim(2) || x < 0 || x >= t.dim(3)) return 0.0;
  return t.at({n, c, y, x});
}

std::vector<double> oracle_concat(const Tensor64& l, const Tensor64& r, Index d_lev) {
  const Index N = l.dim(0), C = l.dim(1), H = l.dim(2), W = l.dim(3), L = d_lev + 1;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(N * 2 * C * L * H * W));
  for (Index n = 0; n < N; ++n)
    for (Index ch = 0; ch < 2 * C; ++ch)
      for (Index d = 0; d < L; ++d)
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x)
            out.push_back(ch < C ? l.at({n, ch, y, x}) : shifted(r, n, ch - C, y, x, d));
  return out;
}

std::vector<double> oracle_distance(const Tensor64& l, const Tensor64& r, Index d_lev) {
  const Index N = l.dim(0), C = l.dim(1), H = l.dim(2), W = l.dim(3), L = d_lev + 1;
  std::vector<double> out;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index d = 0; d < L; ++d)
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) out.push_back(std::abs(l.at({n, c, y, x}) - shifted(r, n, c, y, x, d)));
  return out;
}

std::vector<double> oracle_correlation(const Tensor64& l, const Tensor64& r, Index d_lev, int t) {
  const Index N = l.dim(0), C = l.dim(1), H = l.dim(2), W = l.dim(3), L = d_lev + 1;
  std::vector<double> out;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index d = 0; d < L; ++d)
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) {
            double acc = 0;
            for (Index oy = -t; oy <= t; ++oy)
              for (Index ox = -t; ox <= t; ++ox)
                acc += at_or_zero(l, n, c, y + oy, x + ox) * shifted(r, n, c, y + oy, x + ox, d);
            out.push_back(acc);
          }
  return out;
}

bool bitwise_equal(std::span<const double> a, const std::vector<double>& b, std::string& detail) {
  if (a.size() != b.size()) {
    detail = "size " + std::to_string(a.size()) + " vs " + std::to_string(b.size());
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      detail = "first mismatch at " + std::to_string(i) + ": " + fmt(a[i], 17) + " vs " + fmt(b[i], 17);
      return false;
    }
  }
  return true;
}

CheckResult check_ecv_oracles() {
  CheckResult res{"oracle.ecv", true, {}};
  Rng rng(0x0ecf);
  const Index d_lev = 3;  // four levels
  int compared = 0;
  for (int trial = 0; trial < 4 && res.passed; ++trial) {
    const auto l = random_tensor({2, 3, 6, 6}, rng), r = random_tensor({2, 3, 6, 6}, rng);
    std::string why;
    auto fail = [&](const std::string& what) {
      res.passed = false;
      res.detail = what + ": " + why;
    };
    if (!bitwise_equal(concat_volume(l, r, d_lev).data.data(), oracle_concat(l, r, d_lev), why)) { fail("concat"); break; }
    if (!bitwise_equal(distance_volume(l, r, d_lev).data.data(), oracle_distance(l, r, d_lev), why)) { fail("distance"); break; }
    compared += 2;
    for (int t : {0, 1}) {
      if (!bitwise_equal(correlation_volume(l, r, d_lev, t).data.data(), oracle_correlation(l, r, d_lev, t), why)) {
        fail("correlation t=" + std::to_string(t));
        break;
      }
      auto full = oracle_concat(l, r, d_lev);
      const auto dist = oracle_distance(l, r, d_lev), corr = oracle_correlation(l, r, d_lev, t);
      // depth-axis concatenation per batch item
      std::vector<double> ecv;
      const Index per2 = 2 * 3 * (d_lev + 1) * 36, per1 = 3 * (d_lev + 1) * 36;
      for (Index n = 0; n < 2; ++n) {
        ecv.insert(ecv.end(), full.begin() + n * per2, full.begin() + (n + 1) * per2);
        ecv.insert(ecv.end(), dist.begin() + n * per1, dist.begin() + (n + 1) * per1);
        ecv.insert(ecv.end(), corr.begin() + n * per1, corr.begin() + (n + 1) * per1);
      }
      if (!bitwise_equal(build_ecv(l, r, d_lev, t).data.data(), ecv, why)) {
        fail("ecv t=" + std::to_string(t));
        break;
      }
      compared += 2;
    }
  }
  if (res.passed) res.detail = std::to_string(compared) + " volumes bit-identical (6x6x3, 4 levels, t in {0,1})";
  return res;
}

CheckResult check_conv_oracles() {
  CheckResult res{"oracle.conv", true, {}};
  Rng rng(0xc0);
  double worst = 0;
  for (const ConvOptions opt : {ConvOptions{1, 1, 1}, ConvOptions{2, 1, 1}, ConvOptions{1, 2, 2}}) {
    const auto x = random_tensor({2, 3, 7, 9}, rng), w = random_tensor({4, 3, 3, 3}, rng);
    const auto y = conv2d(x, w, opt);
    for (Index n = 0; n < y.dim(0); ++n)
      for (Index o = 0; o < y.dim(1); ++o)
        for (Index oy = 0; oy < y.dim(2); ++oy)
          for (Index ox = 0; ox < y.dim(3); ++ox) {
            double acc = 0;
            for (Index c = 0; c < 3; ++c)
              for (Index ky = 0; ky < 3; ++ky)
                for (Index kx = 0; kx < 3; ++kx)
                  acc += w.at({o, c, ky, kx}) * at_or_zero(x, n, c, oy * opt.stride - opt.padding + ky * opt.dilation,
                                                           ox * opt.stride - opt.padding + kx * opt.dilation);
            worst = std::max(worst, std::abs(acc - y.at({n, o, oy, ox})));
          }
    const auto wd = random_tensor({3, 1, 3, 3}, rng);
    const auto yd = depthwise_conv2d(x, wd, opt);
    for (Index n = 0; n < yd.dim(0); ++n)
      for (Index c = 0; c < 3; ++c)
        for (Index oy = 0; oy < yd.dim(2); ++oy)
          for (Index ox = 0; ox < yd.dim(3); ++ox) {
            double acc = 0;
            for (Index ky = 0; ky < 3; ++ky)
              for (Index kx = 0; kx < 3; ++kx)
                acc += wd.at({c, 0, ky, kx}) * at_or_zero(x, n, c, oy * opt.stride - opt.padding + ky * opt.dilation,
                                                          ox * opt.stride - opt.padding + kx * opt.dilation);
            worst = std::max(worst, std::abs(acc - yd.at({n, c, oy, ox})));
          }
  }
  res.passed = worst < 1e-12;
  res.detail = "max |conv - loop| = " + fmt(worst);
  return res;
}

CheckResult check_metric_oracles() {
  CheckResult res{"oracle.metrics", true, {}};
  Rng rng(0x3e7);
  for (int trial = 0; trial < 20 && res.passed; ++trial) {
    const std::size_t n = 50 + static_cast<std::size_t>(trial) * 7;
    std::vector<float> est(n), gt(n);
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = static_cast<float>(rng.uniform(0, 60));
      est[i] = gt[i] + static_cast<float>(rng.uniform(-8, 8));
      mask[i] = rng.uniform() < 0.8;
    }
    mask[0] = 1;
    double sum = 0, sq = 0, cnt = 0, bad = 0, out = 0;
    std::vector<double> errs;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      const double e = std::abs(static_cast<double>(est[i]) - static_cast<double>(gt[i]));
      sum += e;
      sq += e * e;
      cnt += 1;
      bad += e >= 3.0 ? 1 : 0;
      out += (e >= 3.0 && e >= 0.05 * gt[i]) ? 1 : 0;
      errs.push_back(e);
    }
    std::sort(errs.begin(), errs.end());
    const double a99_ref = errs[static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(errs.size()))) - 1];
    const double got[] = {epe(est, gt, mask), bad_pixel(est, gt, mask, 3.0), d1_all(est, gt, mask),
                          a99(est, gt, mask), rms(est, gt, mask)};
    const double want[] = {sum / cnt, 100.0 * bad / cnt, 100.0 * out / cnt, a99_ref, std::sqrt(sq / cnt)};
    const char* names[] = {"epe", "bad3", "d1_all", "a99", "rms"};
    for (int k = 0; k < 5; ++k) {
      if (std::abs(got[k] - want[k]) > 1e-9 * std::max(1.0, std::abs(want[k]))) {
        res.passed = false;
        res.detail = std::string(names[k]) + " " + fmt(got[k], 12) + " vs oracle " + fmt(want[k], 12);
      }
    }
  }
  if (res.passed) res.detail = "epe, bad3, d1_all, a99, rms match scalar loops on 20 random maps";
  return res;
}

CheckResult gradient_result() {
  const auto rep = network_gradient_check();
  GradCheckOptions opt;
  CheckResult res{"gradient", rep.max_rel_error < opt.tolerance, {}};
  res.detail = "max rel err " + fmt(rep.max_rel_error) + " over " + std::to_string(rep.probes) +
               " parameters (worst " + rep.worst_parameter + ": analytic " + fmt(rep.worst_analytic, 8) +
               ", numeric " + fmt(rep.worst_numeric, 8) + "), branches held; free-branch differences " +
               fmt(rep.max_rel_error_free) + ", " + fmt(rep.seconds) + " s";
  return res;
}

std::vector<CheckResult> params_results() {
  std::vector<CheckResult> out;
  for (const auto& preset : NetworkConfig::preset_names()) {
    const auto rep = count_parameters(preset);
    out.push_back({"params.formulas." + preset, rep.formula_mismatches == 0,
                   std::to_string(rep.layers_checked) + " layers, " + std::to_string(rep.formula_mismatches) +
                       " mismatches, total " + std::to_string(rep.total)});
  }
  const auto rep = count_parameters("amnet-32");
  const double ratio = static_cast<double>(rep.total) / kPublishedParams;
  std::ostringstream os;
  os << "total " << rep.total << " vs published " << static_cast<Index>(kPublishedParams) << " (" << std::fixed
     << std::setprecision(1) << 100.0 * (ratio - 1.0) << "%): backbone conv " << rep.backbone << " (projections "
     << rep.projection << "), AM " << rep.am << ", SAM " << rep.sam << ", norm affine " << rep.norm;
  out.push_back({"params.total.amnet-32", std::abs(ratio - 1.0) <= 0.10, os.str()});
  return out;
}

std::vector<CheckResult> receptive_field_results() {
  std::vector<CheckResult> out;
  int previous = -1;
  bool increasing = true;
  std::string trace;
  for (int k : {2, 4, 8, 16, 32}) {
    const int radius = am_impulse_radius(k);
    const int expected = AMModuleSpec::make(k, 4, Dimensionality::Two).support_radius();
    if (k == 4 || k == 8) {
      out.push_back({"receptive-field.k" + std::to_string(k), radius == expected,
                     "impulse radius " + std::to_string(radius) + ", sum of dilations " + std::to_string(expected)});
    }
    if (radius <= previous) increasing = false;
    previous = radius;
    trace += (trace.empty() ? "" : ", ") + ("k" + std::to_string(k) + "=" + std::to_string(radius));
  }
  out.push_back({"receptive-field.monotone", increasing, trace});
  return out;
}

}  // namespace

GradCheckReport network_gradient_check(const GradCheckOptions& opt) {
  if (opt.stencil != 2 && opt.stencil != 4) throw std::invalid_argument("gradient check stencil must be 2 or 4");
  const auto start = std::chrono::steady_clock::now();
  AmNet<double> net(NetworkConfig::from_preset(opt.preset), opt.seed);
  const Index d_max = net.config().d_max;

  SynthSceneSpec scene;
  scene.seed = opt.seed;
  auto full = generate_synthetic_set(scene, static_cast<int>(opt.batch), "grad");
  std::vector<StereoSample> crops;
  std::vector<double> gt;
  std::vector<std::uint8_t> mask;
  for (auto& s : full) {
    crops.push_back(crop(s, (s.height - opt.height) / 2, (s.width - opt.width) / 2, opt.height, opt.width));
    const auto& c = crops.back();
    gt.insert(gt.end(), c.gt.begin(), c.gt.end());
    const auto m = training_mask(c, static_cast<double>(d_max));
    mask.insert(mask.end(), m.begin(), m.end());
  }
  std::vector<const StereoSample*> ptrs;
  for (const auto& c : crops) ptrs.push_back(&c);
  const auto left = stack_images<double>(ptrs, false), right = stack_images<double>(ptrs, true);

  auto loss = [&] {
    auto out = net.forward(left, right, nullptr, HeadMode::AllStages, true);
    return total_disparity_loss<double>(out.disparities, gt, mask).total;
  };

  auto& params = net.store().parameters();
  net.store().zero_grad();
  piecewise::PatternTape tape;
  {
    piecewise::PatternScope record(tape, piecewise::Mode::Record);
    loss().backward();
  }
  auto central = [&](BasicTensor<double>& t, std::size_t idx, bool hold) {
    NoGradGuard guard;
    const double orig = t.data()[idx];
    auto at = [&](double offset) {
      t.data()[idx] = orig + offset;
      if (!hold) return loss().item();
      piecewise::PatternScope replay(tape, piecewise::Mode::Replay);
      return loss().item();
    };
    const double h = opt.step;
    double d = 0;
    if (opt.stencil == 4) {
      d = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    } else {
      d = (at(h) - at(-h)) / (2 * h);
    }
    t.data()[idx] = orig;
    return d;
  };
  auto rel_error = [&](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), opt.floor});
  };

  Index total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  Rng rng(hash_coords(opt.seed, 0x67726164, 0, 0));
  GradCheckReport rep;
  for (int i = 0; i < opt.probes; ++i) {
    Index flat = static_cast<Index>(rng.uniform_int(0, total - 1));
    std::size_t pi = 0;
    while (flat >= params[pi].tensor.numel()) flat -= params[pi++].tensor.numel();
    auto& t = params[pi].tensor;
    const auto idx = static_cast<std::size_t>(flat);
    const double analytic = t.grad()[idx];
    const double numeric = central(t, idx, opt.hold_pattern);
    const double free_numeric = opt.hold_pattern ? central(t, idx, false) : numeric;
    const double rel = rel_error(analytic, numeric);
    rep.max_rel_error_free = std::max(rep.max_rel_error_free, rel_error(analytic, free_numeric));
    rep.details.push_back({params[pi].name + "[" + std::to_string(idx) + "]", analytic, numeric, rel, free_numeric});
    if (rel >= rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_parameter = params[pi].name + "[" + std::to_string(idx) + "]";
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
    ++rep.probes;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

int am_impulse_radius(int k) {
  auto spec = AMModuleSpec::make(k, 4, Dimensionality::Two);
  spec.use_norm = false;
  ParameterStore<double> store(11);
  AtrousMultiscale<double> am(store, "rf", 1, spec);
  Rng rng(static_cast<std::uint64_t>(k));
  for (auto& p : store.parameters())
    for (auto& v : p.tensor.data()) v = rng.uniform(0.1, 1.0);

  const int margin = 4;
  const int bound = spec.support_radius() + margin;
  const Index size = 2 * bound + 1;
  Tensor64 impulse = Tensor64::zeros({1, 1, size, size});
  impulse.data()[static_cast<std::size_t>(bound * size + bound)] = 1.0;
  NoGradGuard guard;
  const auto y = am(impulse, false);
  int radius = 0;
  for (Index c = 0; c < y.dim(1); ++c)
    for (Index yy = 0; yy < size; ++yy)
      for (Index xx = 0; xx < size; ++xx)
        if (y.at({0, c, yy, xx}) != 0.0) {
          radius = std::max(radius, static_cast<int>(std::max(std::abs(yy - bound), std::abs(xx - bound))));
        }
  return radius;
}

ParamCountReport count_parameters(const std::string& preset) {
  AmNet<float> net(NetworkConfig::from_preset(preset), 1);
  ParamCountReport rep;
  for (const auto& l : net.layer_counts()) {
    Index expected = 0;
    if (l.kind == "separable") expected = separable_conv_params(l.d_in, l.d_out);
    else if (l.kind == "standard") expected = standard_conv_params(l.d_in, l.d_out);
    else if (l.kind == "conv3d") expected = 27 * l.d_in * l.d_out;
    else expected = l.d_in * l.d_out;
    ++rep.layers_checked;
    if (expected != l.count) ++rep.formula_mismatches;

    if (l.name.rfind("extractor.backbone", 0) == 0) {
      rep.backbone += l.count;
      if (l.kind == "projection") rep.projection += l.count;
    } else if (l.name.rfind("extractor.am", 0) == 0) {
      rep.am += l.count;
    } else if (l.name.rfind("head", 0) == 0) {
      rep.sam += l.count;
    }
  }
  const auto by_kind = net.store().count_by_kind();
  if (auto it = by_kind.find(ParamKind::Norm); it != by_kind.end()) rep.norm = it->second;
  rep.total = net.store().count();
  return rep;
}

std::vector<CheckResult> run_verify(const std::string& suite) {
  static const std::vector<std::string> known = {"all", "gradient", "oracle", "params", "receptive-field"};
  if (std::find(known.begin(), known.end(), suite) == known.end()) {
    throw std::invalid_argument("unknown verify suite '" + suite + "' (all, gradient, oracle, params, receptive-field)");
  }
  const bool all = suite == "all";
  std::vector<CheckResult> out;
  auto append = [&](std::vector<CheckResult> v) { out.insert(out.end(), v.begin(), v.end()); };
  if (all || suite == "oracle") append({check_ecv_oracles(), check_conv_oracles(), check_metric_oracles()});
  if (all || suite == "params") append(params_results());
  if (all || suite == "receptive-field") append(receptive_field_results());
  if (all || suite == "gradient") out.push_back(gradient_result());
  return out;
}

}  // namespace amnet
