#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "jepa/model.hpp"

namespace jepa {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFile = "model.ckpt";

// Layout: 8-byte magic "JEPACKPT", u32 version, u64 header length, JSON header,
// then raw little-endian float64 tensor data at the offsets the header lists.
// The header carries the model config, the tensor index and `metadata`.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelBundle bundle;
  nlohmann::json metadata;
};

// `path` may be the checkpoint file or a directory holding model.ckpt.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace jepa
