#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace luq {

// Input/contract violations (bad files, bad arguments). The CLI maps these
// to exit code 2; anything else is a runtime failure (exit code 1).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Dtype { F32, U32, Packed4, PackedBin };

inline const char* dtype_name(Dtype t) {
    switch (t) {
        case Dtype::F32: return "f32";
        case Dtype::U32: return "u32";
        case Dtype::Packed4: return "packed4";
        case Dtype::PackedBin: return "packedbin";
    }
    return "?";
}

inline Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::F32;
    if (s == "u32") return Dtype::U32;
    if (s == "packed4") return Dtype::Packed4;
    if (s == "packedbin") return Dtype::PackedBin;
    throw ValidationError("unknown dtype: " + s);
}

// Fixed width for the element dtypes; packed formats carry raw bytes whose
// length is set by the packing rule, not by the shape.
inline bool dtype_has_fixed_width(Dtype t) {
    return t == Dtype::F32 || t == Dtype::U32;
}

inline uint64_t numel(const std::vector<int64_t>& shape) {
    uint64_t n = 1;
    for (int64_t s : shape) n *= static_cast<uint64_t>(s);
    return n;
}

}  // namespace luq
