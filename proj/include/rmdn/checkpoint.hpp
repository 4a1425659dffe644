#pragma once

#include <string>

#include "rmdn/network.hpp"

namespace rmdn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned binary weight container: magic "RMDN", version, the model
// configuration as length-prefixed JSON, each tensor as (name length, name,
// rank, dims..., row-major fp64 payload), all little-endian, and a CRC32 of
// everything before it trailing the file.
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelWeights& weights);

struct Checkpoint {
  ModelConfig config;
  ModelWeights weights;
};
Checkpoint load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

std::string to_string(Family family);
Family family_from_string(const std::string& s);

}  // namespace rmdn
