#pragma once

// Little-endian byte (de)serialization shared by the binary file formats.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gladder/errors.hpp"

namespace gladder::detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le<std::uint64_t>(out, bits);
}

inline double get_f64(const std::uint8_t* p) {
    std::uint64_t bits = get_le<std::uint64_t>(p);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le<std::uint32_t>(out, bits);
}

inline float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = get_le<std::uint32_t>(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open file: " + path);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("write failed: " + path);
}

// FNV-1a 64, used for config hashes and artifact fingerprints.
inline std::uint64_t fnv1a64_bytes(const std::uint8_t* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_str(const std::string& s) {
    return fnv1a64_bytes(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

}  // namespace gladder::detail
