#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "hamm/nn.hpp"
#include "hamm/tensor.hpp"

namespace hamm {

/// Binary archive: the 8-byte magic "HAMMCKPT", a u32 format version, then
/// length-prefixed strings and tensors in host byte order:
///   kind, config echo, u64 metadata count, (key, value)*,
///   u64 tensor count, (name, u32 rank, i32 dims[rank], f64 data[])*.
/// Doubles are stored bit-for-bit, so a save/load round trip is exact.
struct Checkpoint {
  std::string kind;
  std::string config;
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws CheckpointError on a missing, truncated or foreign file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameter values into the archive under their names.
void store_parameters(Checkpoint& checkpoint, const ParamList& params);

/// Loads every parameter whose name starts with `prefix`. Missing entries or
/// shape mismatches throw CheckpointError. Returns the number loaded.
int load_parameters(const Checkpoint& checkpoint, const ParamList& params, std::string_view prefix = "");

}  // namespace hamm
