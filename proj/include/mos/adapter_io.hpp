#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mos/errors.hpp"
#include "mos/pool.hpp"

namespace mos {

// Binary adapter file, all integers and reals little-endian:
//
//   "MOS1"  u32 format_version
//   config  u32 L, r, l, p, e; f64 alpha, dropout; u32 variant, flags
//           (bit 0 = tied indices); u64 seed; u32 num_layer_types, then per
//           type: u32 name_len, name bytes, u32 h, o, L
//   pools   per type: side A then side B, each u32 num_public, num_private,
//           shard_len followed by f32 data (row-major, one shard per row)
//   indices per type, per block: side A then side B, l*r u32 (row-major l x r)
//   extras  per type: u32 kind (0 none, 1 scalars, 2 masks), then per block
//           r f64 scalars or eL u8 mask bytes
//   u32 CRC-32 (IEEE) of every preceding byte
//
// Pools are stored at f32 precision; everything else round-trips exactly.
inline constexpr std::uint32_t kAdapterFormatVersion = 1;

enum class LoadErrorKind { io, bad_magic, bad_version, bad_crc, malformed, invariant };

class LoadError : public Error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept;

std::vector<std::uint8_t> encode_adapter(const AdapterState& state);
// Parses and re-validates; throws LoadError.
AdapterState decode_adapter(std::span<const std::uint8_t> bytes);

// Throws Error when the path cannot be written.
void save_adapter(const AdapterState& state, const std::filesystem::path& path);
AdapterState load_adapter(const std::filesystem::path& path);

// CRC-32 over the frozen structure only (config, routing, scalars, masks),
// so it is unchanged by training.
std::uint32_t structure_digest(const AdapterState& state);

// Lossless human-readable form of the same state (pool values as doubles).
nlohmann::json adapter_to_json(const AdapterState& state);
// Throws LoadError (malformed / invariant).
AdapterState adapter_from_json(const nlohmann::json& doc);

}  // namespace mos
