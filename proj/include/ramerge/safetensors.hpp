// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint I/O in the safetensors container layout:
//
//   u64 little-endian header length N
//   N bytes of UTF-8 JSON: name -> {"dtype", "shape", "data_offsets": [begin, end]}
//                          plus an optional "__metadata__" string map
//   raw little-endian tensor bytes addressed by the offsets
//
// F32, F16 and BF16 are read (16-bit types are upcast); F32 is always written.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ramerge/tensor.hpp"

namespace ramerge {

class CheckpointFormatError : public Error {
public:
    enum class Kind { header, offsets, dtype, truncated, io };

    CheckpointFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);

Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// IEEE half / bfloat16 bit patterns to float.
float half_to_float(std::uint16_t bits);
float bfloat16_to_float(std::uint16_t bits);

}  // namespace ramerge
