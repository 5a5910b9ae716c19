#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "cclab/config.hpp"
#include "cclab/model.hpp"
#include "cclab/optim.hpp"

namespace cclab {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    TrainConfig config;
    std::size_t step = 0;
    ModelParams params;
    OptimState optim;
    std::string sampler_rng;
    std::string config_hash;
};

inline constexpr char kCheckpointMagic[4] = {'C', 'C', 'L', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout (little-endian):
///   "CCLM" | u32 version | u64 header length | JSON header | f32 payloads in header order.
/// The header carries the config, step, rng state, config hash and a descriptor
/// {name, shape, offset, count} per tensor; offsets are relative to the payload start.
/// Optimizer moments are stored as "optim.m/<name>" and "optim.v/<name>".
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every entry to the nearest float32, the precision the container stores.
void round_to_storage(Tensor& t);

}  // namespace cclab
