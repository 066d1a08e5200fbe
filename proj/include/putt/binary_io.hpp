#pragma once

#include "putt/error.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace putt::detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
    os.write(b.data(), 4);
}

inline void write_f64_le(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFU);
    os.write(b.data(), 8);
}

inline void write_f32_le(std::ostream& os, float v) { write_u32_le(os, std::bit_cast<std::uint32_t>(v)); }

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError(std::string("truncated input while reading ") + what);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    std::array<unsigned char, 4> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), 4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64_le(std::istream& is) {
    std::array<unsigned char, 8> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), 8, "f64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

inline float read_f32_le(std::istream& is) { return std::bit_cast<float>(read_u32_le(is)); }

inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::array<char, 4> b{};
    read_exact(is, b.data(), 4, "magic");
    if (std::string_view(b.data(), 4) != magic)
        throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
}

} // namespace putt::detail
