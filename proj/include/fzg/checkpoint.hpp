#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fzg/param_set.hpp"

namespace fzg {

// Checkpoint layout, all integers little-endian, no padding:
//   "FZGD" | u32 version (1) | u32 tensor count |
//   per tensor: u16 name length | name bytes | u8 dtype (0 = f64) | u8 rank |
//               rank x u64 dims | row-major f64 payload
inline constexpr char kCheckpointMagic[4] = {'F', 'Z', 'G', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamSet& p);
// Throws FormatError (bad magic, bad dtype, trailing bytes), VersionError or
// TruncatedError.
ParamSet decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ParamSet& p, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace fzg
