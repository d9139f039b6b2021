#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchnet/network.hpp"
#include "patchnet/norm.hpp"

namespace patchnet {

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Training provenance stored alongside the parameters.
struct CheckpointMeta {
    std::size_t epoch = 0;  // epoch the parameters come from (best validation)
    double best_val_accuracy = 0.0;
    std::uint64_t seed = 0;
    std::size_t window = 0;              // patch size k the network was trained on
    std::optional<NormStats> norm;       // input standardization (patch-wise)
    nlohmann::json config = nlohmann::json::object();  // resolved run config echo

    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
    NetworkSpec spec;
    ParamSet params;
    CheckpointMeta meta;

    NetworkKind kind() const noexcept { return spec.kind; }
    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layout (all integers little-endian):
//   "HPCK" | u16 version | u8 kind | u32 len + UTF-8 JSON {"spec", "metadata"}
//   | per parameter: u32 len + name, u8 rank, rank x u32 dims, f32 payload
//   | u32 CRC32 of every preceding byte
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

// Rejections carry ErrorKind::Checkpoint with a distinct FormatDetail for bad
// magic, version mismatch, truncation, checksum failure and kind mismatch.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes,
                            std::optional<NetworkKind> expected = std::nullopt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<NetworkKind> expected = std::nullopt);

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace patchnet
