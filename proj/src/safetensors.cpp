// SPDX-License-Identifier: Apache-2.0

#include "ramerge/safetensors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ramerge {

static_assert(std::endian::native == std::endian::little, "safetensors payloads are little-endian");

namespace {

using json = nlohmann::json;
using Kind = CheckpointFormatError::Kind;

[[noreturn]] void fail(Kind kind, const std::string& what) {
    throw CheckpointFormatError(kind, what);
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    return 0;
}

struct Entry {
    std::string name;
    std::string dtype;
    Shape shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

Entry parse_entry(const std::string& name, const json& spec) {
    if (!spec.is_object()) fail(Kind::header, "entry '" + name + "' is not an object");
    Entry e;
    e.name = name;
    if (!spec.contains("dtype") || !spec["dtype"].is_string()) {
        fail(Kind::header, "entry '" + name + "' has no dtype string");
    }
    e.dtype = spec["dtype"].get<std::string>();
    if (dtype_size(e.dtype) == 0) fail(Kind::dtype, "entry '" + name + "' has unsupported dtype " + e.dtype);

    if (!spec.contains("shape") || !spec["shape"].is_array()) {
        fail(Kind::header, "entry '" + name + "' has no shape array");
    }
    for (const auto& d : spec["shape"]) {
        if (!d.is_number_unsigned()) fail(Kind::header, "entry '" + name + "' has a non-integer extent");
        e.shape.push_back(d.get<std::size_t>());
    }

    const auto& off = spec.value("data_offsets", json());
    if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() || !off[1].is_number_unsigned()) {
        fail(Kind::header, "entry '" + name + "' has malformed data_offsets");
    }
    e.begin = off[0].get<std::uint64_t>();
    e.end = off[1].get<std::uint64_t>();
    if (e.end < e.begin) fail(Kind::offsets, "entry '" + name + "' has end offset before begin");
    if (e.end - e.begin != numel(e.shape) * dtype_size(e.dtype)) {
        fail(Kind::offsets, "entry '" + name + "' byte range does not match shape " + shape_string(e.shape));
    }
    return e;
}

Tensor decode(const Entry& e, const std::uint8_t* bytes) {
    const std::size_t n = numel(e.shape);
    std::vector<float> values(n);
    if (e.dtype == "F32") {
        std::memcpy(values.data(), bytes, n * 4);
    } else {
        const bool half = e.dtype == "F16";
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t bits;
            std::memcpy(&bits, bytes + 2 * i, 2);
            values[i] = half ? half_to_float(bits) : bfloat16_to_float(bits);
        }
    }
    return Tensor(e.shape, std::move(values));
}

}  // namespace

float half_to_float(std::uint16_t bits) {
    const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
    std::uint32_t exponent = (bits >> 10) & 0x1fu;
    std::uint32_t mantissa = bits & 0x3ffu;
    std::uint32_t out;
    if (exponent == 0) {
        if (mantissa == 0) {
            out = sign;
        } else {
            // Subnormal: renormalize into the float exponent range.
            int shift = 0;
            while ((mantissa & 0x400u) == 0) {
                mantissa <<= 1;
                ++shift;
            }
            mantissa &= 0x3ffu;
            out = sign | static_cast<std::uint32_t>(127 - 15 - shift + 1) << 23 | mantissa << 13;
        }
    } else if (exponent == 0x1f) {
        out = sign | 0x7f800000u | mantissa << 13;
    } else {
        out = sign | (exponent + 127 - 15) << 23 | mantissa << 13;
    }
    return std::bit_cast<float>(out);
}

float bfloat16_to_float(std::uint16_t bits) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) fail(Kind::truncated, "file shorter than the 8-byte header length");
    std::uint64_t header_len;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len == 0) fail(Kind::header, "header length is zero");
    if (header_len > bytes.size() - 8) {
        fail(Kind::truncated, "header length " + std::to_string(header_len) + " exceeds file size");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::parse_error& e) {
        fail(Kind::header, std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) fail(Kind::header, "header is not a JSON object");

    Checkpoint ck;
    std::vector<Entry> entries;
    for (const auto& [key, value] : header.items()) {
        if (key == "__metadata__") {
            if (!value.is_object()) fail(Kind::header, "__metadata__ is not an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string()) fail(Kind::header, "metadata value for '" + mk + "' is not a string");
                ck.metadata.emplace(mk, mv.get<std::string>());
            }
            continue;
        }
        entries.push_back(parse_entry(key, value));
    }

    const std::uint64_t buffer_len = bytes.size() - 8 - header_len;
    std::vector<const Entry*> order;
    for (const auto& e : entries) order.push_back(&e);
    std::sort(order.begin(), order.end(), [](const Entry* a, const Entry* b) {
        return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
    });
    std::uint64_t cursor = 0;
    for (const Entry* e : order) {
        if (e->begin < cursor) fail(Kind::offsets, "entry '" + e->name + "' overlaps the previous tensor");
        if (e->begin > cursor) fail(Kind::offsets, "gap in data buffer before entry '" + e->name + "'");
        cursor = e->end;
    }
    if (cursor > buffer_len) {
        fail(Kind::truncated, "data buffer holds " + std::to_string(buffer_len) + " bytes but offsets need " +
                                  std::to_string(cursor));
    }
    if (cursor < buffer_len) fail(Kind::offsets, "data offsets do not cover the whole buffer");

    const std::uint8_t* buffer = bytes.data() + 8 + header_len;
    for (const auto& e : entries) {
        ck.tensors.emplace(e.name, decode(e, buffer + e.begin));
    }
    return ck;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
    // json objects use std::map ordering, so the header text is deterministic.
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : checkpoint.tensors) {
        const std::uint64_t len = t.size() * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + len}}};
        offset += len;
    }
    if (!checkpoint.metadata.empty()) {
        header["__metadata__"] = checkpoint.metadata;
    }
    std::string text = header.dump();
    while ((8 + text.size()) % 8 != 0) text.push_back(' ');

    std::vector<std::uint8_t> out(8 + text.size() + offset);
    const std::uint64_t header_len = text.size();
    std::memcpy(out.data(), &header_len, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    std::uint8_t* cursor = out.data() + 8 + text.size();
    for (const auto& [name, t] : checkpoint.tensors) {
        std::memcpy(cursor, t.data().data(), t.size() * 4);
        cursor += t.size() * 4;
    }
    return out;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Kind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_checkpoint(bytes);
    } catch (const CheckpointFormatError& e) {
        throw CheckpointFormatError(e.kind(), path.string() + ": " + e.what());
    }
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Kind::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Kind::io, "write failed for " + path.string());
}

}  // namespace ramerge
