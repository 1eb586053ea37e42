#include "amnet/config.hpp"

#include <fstream>
#include <set>

namespace amnet {

using nlohmann::json;

RunConfig RunConfig::defaults(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  c.network = NetworkConfig::from_preset(preset);
  if (preset == "micro" || preset == "fba-micro") return c;
  if (c.network.fba) {
    // Fine-tuning recipe of the multitask models.
    c.batch = 12;
    c.epochs = 1000;
    c.lr = {1e-3, 600, 1e-4, 10.0};
  } else {
    c.batch = 16;
    c.epochs = 15;
    c.lr = {1e-3, 10, 1e-4, 1.0};
  }
  c.crop_height = 256;
  c.crop_width = 512;
  return c;
}

namespace {

LayerType layer_type_from(const std::string& s) {
  for (LayerType t : {LayerType::SepConv, LayerType::Conv, LayerType::DResBlock, LayerType::ResBlock})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown backbone layer type '" + s + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + (where.empty() ? std::string(key) : where + "." + key) + "': " + e.what());
  }
}

}  // namespace

json to_json(const NetworkConfig& c) {
  json layers = json::array();
  for (const auto& l : c.backbone.layers) {
    layers.push_back({{"type", to_string(l.type)},
                      {"d_out", l.d_out},
                      {"stride", l.stride},
                      {"dilation", l.dilation},
                      {"repeat", l.repeat}});
  }
  return {{"preset", c.preset},
          {"backbone", {{"preset", c.backbone.preset}, {"layers", layers}}},
          {"am_k", c.am_k},
          {"am_channels", c.am_channels},
          {"sam_k", c.sam_k},
          {"sam_width", c.sam_width},
          {"d_max", c.d_max},
          {"t", c.t},
          {"cost_volume", {{"concat", c.parts.concat}, {"distance", c.parts.distance}, {"correlation", c.parts.correlation}}},
          {"fba", c.fba}};
}

namespace {

void apply_network(NetworkConfig& c, const json& j) {
  const std::string w = "network";
  reject_unknown(j, {"preset", "backbone", "am_k", "am_channels", "sam_k", "sam_width", "d_max", "t", "cost_volume", "fba"}, w);
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p != c.preset) c = NetworkConfig::from_preset(p);
  }
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    if (b.is_string()) {
      c.backbone = BackboneSpec::from_name(b.get<std::string>());
    } else {
      reject_unknown(b, {"preset", "layers"}, w + ".backbone");
      if (b.contains("preset")) c.backbone = BackboneSpec::from_name(b.at("preset").get<std::string>());
      if (b.contains("layers")) {
        c.backbone.layers.clear();
        for (const json& l : b.at("layers")) {
          reject_unknown(l, {"type", "d_out", "stride", "dilation", "repeat"}, w + ".backbone.layers[]");
          BackboneLayer layer;
          layer.type = layer_type_from(l.value("type", std::string("sepconv")));
          read(l, "d_out", layer.d_out, w);
          read(l, "stride", layer.stride, w);
          read(l, "dilation", layer.dilation, w);
          read(l, "repeat", layer.repeat, w);
          c.backbone.layers.push_back(layer);
        }
      }
    }
  }
  read(j, "am_k", c.am_k, w);
  read(j, "am_channels", c.am_channels, w);
  read(j, "sam_k", c.sam_k, w);
  read(j, "sam_width", c.sam_width, w);
  read(j, "d_max", c.d_max, w);
  read(j, "t", c.t, w);
  read(j, "fba", c.fba, w);
  if (j.contains("cost_volume")) {
    const json& cv = j.at("cost_volume");
    reject_unknown(cv, {"concat", "distance", "correlation"}, w + ".cost_volume");
    read(cv, "concat", c.parts.concat, w);
    read(cv, "distance", c.parts.distance, w);
    read(cv, "correlation", c.parts.correlation, w);
  }
}

}  // namespace

NetworkConfig network_from_json(const json& j) {
  NetworkConfig c = NetworkConfig::from_preset(j.value("preset", std::string("micro")));
  apply_network(c, j);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid network config: ") + e.what());
  }
  return c;
}

json to_json(const RunConfig& c) {
  return {{"preset", c.preset},
          {"network", to_json(c.network)},
          {"seed", c.seed},
          {"lambda", c.lambda},
          {"crop", {c.crop_height, c.crop_width}},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"lr", {{"initial", c.lr.initial}, {"decay_epoch", c.lr.decay_epoch}, {"decayed", c.lr.decayed},
                  {"new_layer_scale", c.lr.new_layer_scale}}},
          {"threads", c.threads},
          {"train_dir", c.train_dir},
          {"val_dir", c.val_dir},
          {"out_dir", c.out_dir},
          {"checkpoint", c.checkpoint},
          {"checkpoint_every_epoch", c.checkpoint_every_epoch},
          {"augment", c.augment}};
}

RunConfig apply_json(RunConfig c, const json& j) {
  if (j.is_null()) return c;
  reject_unknown(j, {"preset", "network", "seed", "lambda", "crop", "batch", "epochs", "lr", "threads", "train_dir",
                     "val_dir", "out_dir", "checkpoint", "checkpoint_every_epoch", "augment"},
                 "");
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p != c.preset) {
      c.preset = p;
      c.network = NetworkConfig::from_preset(p);
    }
  }
  if (j.contains("network")) apply_network(c.network, j.at("network"));
  read(j, "seed", c.seed, "");
  read(j, "lambda", c.lambda, "");
  if (j.contains("crop")) {
    const json& cr = j.at("crop");
    if (!cr.is_array() || cr.size() != 2) throw ConfigError("'crop' must be [height, width]");
    c.crop_height = cr[0].get<Index>();
    c.crop_width = cr[1].get<Index>();
  }
  read(j, "batch", c.batch, "");
  read(j, "epochs", c.epochs, "");
  if (j.contains("lr")) {
    const json& l = j.at("lr");
    if (l.is_number()) {
      c.lr.initial = l.get<double>();
    } else {
      reject_unknown(l, {"initial", "decay_epoch", "decayed", "new_layer_scale"}, "lr");
      read(l, "initial", c.lr.initial, "lr");
      read(l, "decay_epoch", c.lr.decay_epoch, "lr");
      read(l, "decayed", c.lr.decayed, "lr");
      read(l, "new_layer_scale", c.lr.new_layer_scale, "lr");
    }
  }
  read(j, "threads", c.threads, "");
  read(j, "train_dir", c.train_dir, "");
  read(j, "val_dir", c.val_dir, "");
  read(j, "out_dir", c.out_dir, "");
  read(j, "checkpoint", c.checkpoint, "");
  read(j, "checkpoint_every_epoch", c.checkpoint_every_epoch, "");
  read(j, "augment", c.augment, "");
  if (c.lambda < 0) throw ConfigError("lambda must be >= 0");
  if (c.batch < 1) throw ConfigError("batch must be >= 1");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.lr.initial <= 0 || c.lr.decayed <= 0) throw ConfigError("learning rates must be > 0");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.crop_height % 4 || c.crop_width % 4 || c.crop_height <= 0 || c.crop_width <= 0) {
    throw ConfigError("crop dims must be positive multiples of 4");
  }
  try {
    c.network.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid network config: ") + e.what());
  }
  return c;
}

namespace {

json env_to_json(const std::function<const char*(const char*)>& getenv) {
  json j = json::object();
  auto str = [&](const char* var) -> std::optional<std::string> {
    const char* v = getenv(var);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  auto parse = [&](const char* var, bool integral) -> json {
    const auto v = str(var);
    if (!v) return nullptr;
    try {
      std::size_t used = 0;
      json out = integral ? json(std::stoll(*v, &used)) : json(std::stod(*v, &used));
      if (used == v->size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("environment variable ") + var + " is not " + (integral ? "an integer" : "a number") +
                      ": '" + *v + "'");
  };
  if (auto v = str("AMNET_PRESET")) j["preset"] = *v;
  if (auto v = parse("AMNET_SEED", true); !v.is_null()) j["seed"] = v;
  if (auto v = parse("AMNET_DMAX", true); !v.is_null()) j["network"]["d_max"] = v;
  if (auto v = parse("AMNET_LAMBDA", false); !v.is_null()) j["lambda"] = v;
  if (auto v = parse("AMNET_LR", false); !v.is_null()) j["lr"]["initial"] = v;
  if (auto v = parse("AMNET_EPOCHS", true); !v.is_null()) j["epochs"] = v;
  if (auto v = parse("AMNET_BATCH", true); !v.is_null()) j["batch"] = v;
  if (auto v = parse("AMNET_THREADS", true); !v.is_null()) j["threads"] = v;
  if (auto v = str("AMNET_OUT")) j["out_dir"] = *v;
  if (auto v = str("AMNET_TRAIN_DIR")) j["train_dir"] = *v;
  if (auto v = str("AMNET_VAL_DIR")) j["val_dir"] = *v;
  if (auto v = str("AMNET_CHECKPOINT")) j["checkpoint"] = *v;
  return j;
}

}  // namespace

RunConfig apply_env(RunConfig base, const std::function<const char*(const char*)>& getenv) {
  return apply_json(std::move(base), env_to_json(getenv));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config file " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

RunConfig resolve_config(const json& file, const std::function<const char*(const char*)>& getenv, const json& flags) {
  const json env = env_to_json(getenv);
  std::string preset = "micro";
  for (const json* layer : {&file, &env, &flags}) {
    if (layer->is_object() && layer->contains("preset")) preset = layer->at("preset").get<std::string>();
  }
  RunConfig c = RunConfig::defaults(preset);
  for (const json* layer : {&file, &env, &flags}) {
    json copy = *layer;
    if (copy.is_object()) copy.erase("preset");
    c = apply_json(std::move(c), copy);
  }
  return c;
}

}  // namespace amnet
