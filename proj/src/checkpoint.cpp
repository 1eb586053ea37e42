#include "amnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "amnet/config.hpp"

namespace amnet {

namespace {

constexpr char kMagic[8] = {'A', 'M', 'N', 'E', 'T', 'C', 'K', 'P'};

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!in) throw CheckpointError("truncated checkpoint header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

struct Entry {
  std::string name;
  std::string role;
  Shape shape;
};

template <typename T, typename Fn>
void for_each_tensor(const ParameterStore<T>& store, Fn&& fn) {
  for (const auto& p : store.parameters()) fn(p.name, "param", p.tensor);
  for (const auto& b : store.buffers()) fn(b.name, "buffer", b.tensor);
}

nlohmann::json read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("not a checkpoint file: " + path.string());
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto len = get_le<std::uint64_t>(in);
  if (len > (std::uint64_t{1} << 30)) throw CheckpointError("implausible checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const AmNet<T>& net, const nlohmann::json& meta) {
  nlohmann::json header;
  header["preset"] = net.config().preset;
  header["network"] = to_json(net.config());
  header["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  header["tensors"] = nlohmann::json::array();
  for_each_tensor(net.store(), [&](const std::string& name, const char* role, const BasicTensor<T>& t) {
    header["tensors"].push_back({{"name", name}, {"role", role}, {"shape", t.shape()}});
  });
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(kMagic, 8);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<unsigned char> buf;
    for_each_tensor(net.store(), [&](const std::string&, const char*, const BasicTensor<T>& t) {
      buf.resize(t.data().size() * 4);
      for (std::size_t i = 0; i < t.data().size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i]));
        for (int k = 0; k < 4; ++k) buf[4 * i + static_cast<std::size_t>(k)] = static_cast<unsigned char>(bits >> (8 * k));
      }
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    });
    if (!out) throw CheckpointError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_header(in, path);
}

template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, AmNet<T>& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const auto header = read_header(in, path);
  const auto preset = header.value("preset", std::string());
  if (preset != net.config().preset) {
    throw CheckpointError("checkpoint preset '" + preset + "' does not match network preset '" + net.config().preset + "'");
  }
  if (header.contains("network") && header["network"] != to_json(net.config())) {
    throw CheckpointError("checkpoint network config differs from the requested network (preset " + preset + ")");
  }
  std::map<std::string, BasicTensor<T>> targets;
  for_each_tensor(net.store(), [&](const std::string& name, const char*, const BasicTensor<T>& t) { targets[name] = t; });
  const auto& tensors = header.at("tensors");
  if (tensors.size() != targets.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, network has " +
                          std::to_string(targets.size()));
  }
  std::vector<unsigned char> buf;
  for (const auto& e : tensors) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    auto it = targets.find(name);
    if (it == targets.end()) throw CheckpointError("checkpoint tensor '" + name + "' not present in the network");
    if (it->second.shape() != shape) {
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + to_string(shape) + ", network " +
                            to_string(it->second.shape()));
    }
    auto dst = it->second.data();
    buf.resize(dst.size() * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw CheckpointError("truncated checkpoint data at '" + name + "'");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[4 * i + static_cast<std::size_t>(k)]) << (8 * k);
      dst[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  return header.value("meta", nlohmann::json::object());
}

template void save_checkpoint(const std::filesystem::path&, const AmNet<float>&, const nlohmann::json&);
template void save_checkpoint(const std::filesystem::path&, const AmNet<double>&, const nlohmann::json&);
template nlohmann::json load_checkpoint(const std::filesystem::path&, AmNet<float>&);
template nlohmann::json load_checkpoint(const std::filesystem::path&, AmNet<double>&);

}  // namespace amnet
