#include "amnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace amnet {

namespace {

void check_sizes(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  if (est.size() != gt.size() || mask.size() != gt.size()) {
    throw std::invalid_argument("metric inputs differ in size: est " + std::to_string(est.size()) + ", gt " +
                                std::to_string(gt.size()) + ", mask " + std::to_string(mask.size()));
  }
}

std::vector<double> masked_errors(std::span<const float> est, std::span<const float> gt,
                                  std::span<const std::uint8_t> mask, const char* metric) {
  check_sizes(est, gt, mask);
  std::vector<double> err;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (mask[i]) err.push_back(std::abs(static_cast<double>(est[i]) - static_cast<double>(gt[i])));
  }
  if (err.empty()) throw std::invalid_argument(std::string(metric) + ": mask selects no pixels");
  return err;
}

double percent(std::size_t hit, std::size_t n) { return 100.0 * static_cast<double>(hit) / static_cast<double>(n); }

}  // namespace

double epe(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  const auto err = masked_errors(est, gt, mask, "epe");
  double s = 0;
  for (double e : err) s += e;
  return s / static_cast<double>(err.size());
}

double d1_all(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  check_sizes(est, gt, mask);
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    const double e = std::abs(static_cast<double>(est[i]) - static_cast<double>(gt[i]));
    hit += e >= 3.0 && e >= 0.05 * static_cast<double>(gt[i]);
  }
  if (n == 0) throw std::invalid_argument("d1_all: mask selects no pixels");
  return percent(hit, n);
}

double bad_pixel(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask,
                 double threshold) {
  const auto err = masked_errors(est, gt, mask, "bad_pixel");
  std::size_t hit = 0;
  for (double e : err) hit += e >= threshold;
  return percent(hit, err.size());
}

double a99(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  auto err = masked_errors(est, gt, mask, "a99");
  const std::size_t n = err.size();
  // Integer form of ceil(0.99 n) avoids floating-point rounding at exact multiples.
  const std::size_t rank = std::max<std::size_t>(1, (99 * n + 99) / 100);
  std::nth_element(err.begin(), err.begin() + static_cast<std::ptrdiff_t>(rank - 1), err.end());
  return err[rank - 1];
}

double rms(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  const auto err = masked_errors(est, gt, mask, "rms");
  double s = 0;
  for (double e : err) s += e * e;
  return std::sqrt(s / static_cast<double>(err.size()));
}

MetricSet compute_metrics(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  check_sizes(est, gt, mask);
  MetricSet m;
  m.pixels = std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; });
  if (m.pixels == 0) return m;
  m.epe = epe(est, gt, mask);
  m.d1_all = d1_all(est, gt, mask);
  m.bad3 = bad_pixel(est, gt, mask, 3.0);
  m.a99 = a99(est, gt, mask);
  m.rms = rms(est, gt, mask);
  return m;
}

namespace {

std::vector<std::uint8_t> combine(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, bool want_b) {
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && ((b[i] != 0) == want_b);
  return out;
}

MetricSet weighted(const std::vector<const MetricSet*>& sets) {
  MetricSet out;
  for (const auto* s : sets) out.pixels += s->pixels;
  if (out.pixels == 0) return out;
  for (const auto* s : sets) {
    const double w = static_cast<double>(s->pixels) / static_cast<double>(out.pixels);
    out.epe += w * s->epe;
    out.d1_all += w * s->d1_all;
    out.bad3 += w * s->bad3;
    out.a99 += w * s->a99;
    out.rms += w * s->rms;
  }
  return out;
}

nlohmann::json to_json(const MetricSet& m) {
  return {{"epe", m.epe}, {"d1_all", m.d1_all}, {"bad3", m.bad3}, {"a99", m.a99}, {"rms", m.rms}, {"pixels", m.pixels}};
}

std::string row(const std::string& label, const MetricSet& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %9.4f %9.3f %9.3f %9.4f %9.4f %10lld\n", label.c_str(), m.epe, m.d1_all, m.bad3,
                m.a99, m.rms, static_cast<long long>(m.pixels));
  return buf;
}

}  // namespace

void EvalReport::add(const std::string& id, std::span<const float> est, std::span<const float> gt,
                     std::span<const std::uint8_t> valid, std::span<const std::uint8_t> fg,
                     std::span<const std::uint8_t> noc) {
  check_sizes(est, gt, valid);
  ImageReport r;
  r.id = id;
  r.all = compute_metrics(est, gt, valid);
  if (!fg.empty()) {
    if (fg.size() != valid.size()) throw std::invalid_argument("foreground mask size mismatch for '" + id + "'");
    has_fg = true;
    r.fg = compute_metrics(est, gt, combine(valid, fg, true));
    r.bg = compute_metrics(est, gt, combine(valid, fg, false));
  }
  if (!noc.empty()) {
    if (noc.size() != valid.size()) throw std::invalid_argument("non-occlusion mask size mismatch for '" + id + "'");
    has_noc = true;
    r.noc = compute_metrics(est, gt, combine(valid, noc, true));
  }
  images.push_back(std::move(r));
}

void EvalReport::finalize() {
  std::vector<const MetricSet*> a, f, b, n;
  for (const auto& r : images) {
    a.push_back(&r.all);
    f.push_back(&r.fg);
    b.push_back(&r.bg);
    n.push_back(&r.noc);
  }
  all = weighted(a);
  fg = weighted(f);
  bg = weighted(b);
  noc = weighted(n);
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "scope                  EPE   D1-all%    bad3%       A99       RMS     pixels\n";
  for (const auto& r : images) out << row(r.id, r.all);
  out << row("[all]", all);
  if (has_fg) {
    out << row("[fg]", fg);
    out << row("[bg]", bg);
  }
  if (has_noc) out << row("[noc]", noc);
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["aggregate"] = {{"all", amnet::to_json(all)}};
  if (has_fg) {
    j["aggregate"]["fg"] = amnet::to_json(fg);
    j["aggregate"]["bg"] = amnet::to_json(bg);
  }
  if (has_noc) j["aggregate"]["noc"] = amnet::to_json(noc);
  j["images"] = nlohmann::json::array();
  for (const auto& r : images) {
    nlohmann::json e = {{"id", r.id}, {"all", amnet::to_json(r.all)}};
    if (has_fg) {
      e["fg"] = amnet::to_json(r.fg);
      e["bg"] = amnet::to_json(r.bg);
    }
    if (has_noc) e["noc"] = amnet::to_json(r.noc);
    j["images"].push_back(e);
  }
  return j.dump(2);
}

}  // namespace amnet
