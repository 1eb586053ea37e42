#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "amnet/network.hpp"

namespace amnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container layout, all integers little-endian:
///   8 bytes   magic "AMNETCKP"
///   u32       format version (1)
///   u64       header length in bytes
///   header    UTF-8 JSON: {"preset", "network", "meta", "tensors": [{"name", "role", "shape"}]}
///   blobs     float32 little-endian values of each tensor, in header order
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const AmNet<T>& net, const nlohmann::json& meta = {});

/// Header only: network config and metadata, for building a matching network.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

/// Loads every parameter and buffer. Throws CheckpointError when the preset,
/// the tensor names or the shapes disagree with `net`.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, AmNet<T>& net);

}  // namespace amnet
