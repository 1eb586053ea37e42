#include "amnet/network.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "amnet/ops.hpp"

namespace amnet {

NetworkConfig NetworkConfig::from_preset(const std::string& name) {
  NetworkConfig c;
  c.preset = name;
  if (name == "micro" || name == "fba-micro") {
    c.fba = name == "fba-micro";
    return c;
  }
  if (name == "amnet-8" || name == "amnet-32" || name == "fba-8" || name == "fba-32") {
    const int k = name.ends_with("32") ? 32 : 8;
    c.backbone = BackboneSpec::paper();
    c.am_k = k;
    c.am_channels = 32;
    c.sam_k = k;
    c.sam_width = 32;
    c.d_max = 192;
    c.fba = name.starts_with("fba");
    return c;
  }
  throw std::invalid_argument("unknown network preset '" + name + "' (expected one of micro, fba-micro, amnet-8, "
                              "amnet-32, fba-8, fba-32)");
}

std::vector<std::string> NetworkConfig::preset_names() {
  return {"micro", "fba-micro", "amnet-8", "amnet-32", "fba-8", "fba-32"};
}

void NetworkConfig::validate() const {
  backbone.validate();
  AMModuleSpec::make(am_k, am_channels, Dimensionality::Two).validate();
  SAMSpec::make(sam_k, sam_width).validate();
  if (d_max < backbone.cumulative_stride()) throw std::invalid_argument("d_max must be at least the backbone stride");
  if (t < 0) throw std::invalid_argument("correlation patch radius t must be >= 0");
  if (parts.depth_factor() == 0) throw std::invalid_argument("cost volume needs at least one sub-volume");
}

Index NetworkConfig::feature_levels() const { return amnet::feature_levels(d_max, backbone.cumulative_stride()); }

template <typename T>
AmNet<T>::AmNet(NetworkConfig config, std::uint64_t seed)
    : config_((config.validate(), std::move(config))),
      store_(seed),
      extractor_(store_, "extractor", config_.backbone,
                 AMModuleSpec::make(config_.am_k, config_.am_channels, Dimensionality::Two), 3, config_.fba),
      head_(store_, "head", config_.parts.depth_factor() * config_.am_channels,
            SAMSpec::make(config_.sam_k, config_.sam_width), &report_) {
  report_.insert(report_.begin(), extractor_.layer_counts().begin(), extractor_.layer_counts().end());
  if (config_.fba) {
    seg_.emplace(store_, "seg", config_.am_channels);
    report_.push_back({"seg", "pointwise", config_.am_channels, 2, 2 * config_.am_channels});
  }
}

template <typename T>
NetworkOutput<T> AmNet<T>::forward(const BasicTensor<T>& left, const BasicTensor<T>& right, const BasicTensor<T>* s,
                                   HeadMode mode, bool training) {
  if (left.shape() != right.shape()) {
    throw ShapeError("left " + to_string(left.shape()) + " and right " + to_string(right.shape()) + " differ");
  }
  const Index N = left.dim(0), H = left.dim(2), W = left.dim(3);
  std::optional<BasicTensor<T>> zeros;
  if (config_.fba && !s) {
    zeros = BasicTensor<T>::zeros(Shape{N, 1, H, W});
    s = &*zeros;
  }
  auto [fl, fr] = extractor_.extract(left, right, config_.fba ? s : nullptr, training);
  const auto ecv = build_ecv(fl, fr, config_.feature_levels(), config_.t, config_.parts);
  NetworkOutput<T> out;
  for (const auto& v : head_.run_sam(ecv, mode, training)) out.disparities.push_back(regress_disparity(v, config_.d_max, H, W));
  if (seg_) out.seg_probs = (*seg_)(fl, H, W);
  out.left_features = fl;
  return out;
}

template <typename T>
BasicTensor<T> AmNet<T>::infer(const BasicTensor<T>& left, const BasicTensor<T>& right) {
  NoGradGuard guard;
  return forward(left, right, nullptr, HeadMode::FinalOnly, false).disparities.back();
}

template <typename T>
std::string AmNet<T>::parameter_report() const {
  std::ostringstream out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-40s %-11s %6s %6s %10s\n", "layer", "kind", "d_in", "d_out", "weights");
  out << buf;
  for (const auto& l : report_) {
    std::snprintf(buf, sizeof buf, "%-40s %-11s %6lld %6lld %10lld\n", l.name.c_str(), l.kind.c_str(),
                  static_cast<long long>(l.d_in), static_cast<long long>(l.d_out), static_cast<long long>(l.count));
    out << buf;
  }
  out << "\nby kind:\n";
  for (const auto& [kind, n] : store_.count_by_kind()) {
    std::snprintf(buf, sizeof buf, "  %-12s %10lld\n", to_string(kind), static_cast<long long>(n));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "  %-12s %10lld\n", "total", static_cast<long long>(store_.count()));
  out << buf;
  return out.str();
}

template class AmNet<float>;
template class AmNet<double>;

}  // namespace amnet
