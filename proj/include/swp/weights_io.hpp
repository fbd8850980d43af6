#pragma once

#include <string>

#include "swp/netdef.hpp"

namespace swp {

// Portable container for model parameters: "SWPL" magic, u32 format
// version, u32 entry count, then per entry a u16-length UTF-8 name, a
// dtype code (1 = 32-bit real), rank, u64 extents and the raw
// little-endian payload, closed by a CRC32 of all preceding bytes.
// Entries keep their container order, so save/load/save is
// byte-identical.

inline constexpr uint32_t kWeightFormatVersion = 1;

/// Writes the archive plus a human-readable sidecar manifest at
/// `path + ".txt"` (name, shape, trainable flag per line).
void save_weights(const WeightMap& weights, const std::string& path);

/// Throws IntegrityError on bad magic/version/CRC and Error on an
/// unsupported dtype.
WeightMap load_weights(const std::string& path);

} // namespace swp
