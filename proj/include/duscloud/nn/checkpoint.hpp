#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "duscloud/nn/param_store.hpp"

namespace duscloud::nn {

enum class Dtype { kF64, kF32 };

// Container layout:
//   8 bytes   magic "DUSCKPT1"
//   8 bytes   manifest length L (little-endian u64)
//   L bytes   JSON manifest {kind, config_hash, config, dtype, tensors:[{name, shape}]}
//   payload   raw little-endian arrays in manifest order
struct Checkpoint {
  std::string kind;
  std::string config_hash;
  nlohmann::json config;
  ParamStore params;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt, Dtype dtype = Dtype::kF64);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, Dtype dtype = Dtype::kF64);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values by name from `source` into `target`; names and shapes must match.
void copy_values(const ParamStore& source, ParamStore& target);

}  // namespace duscloud::nn
