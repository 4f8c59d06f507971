#pragma once

#include <filesystem>
#include <string>

#include "framegen/params.hpp"

namespace framegen {

// Binary layout, all integers u64 little-endian:
//   "FGCKPT1\0" | count | per entry: name_len, name bytes (UTF-8), rank,
//   extents[rank], payload (f64 little-endian, row-major)
inline constexpr char kCheckpointMagic[8] = {'F', 'G', 'C', 'K', 'P', 'T', '1', '\0'};

std::string serialize_checkpoint(const ParameterStore& store);
// Validates the magic and that the byte count matches the declared entries
// exactly. Loaded tensors are leaves without requires_grad.
ParameterStore deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);
ParameterStore load_checkpoint(const std::filesystem::path& path);

// Copies values for every name of `into` from `from`; shapes must agree.
// Names in `from` that `into` lacks are ignored.
void assign_values(ParameterStore& into, const ParameterStore& from);

}  // namespace framegen
