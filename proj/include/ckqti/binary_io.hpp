// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "ckqti/error.hpp"

namespace ckqti {

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace io {

template <typename U>
void put_le(std::ostream& out, U value)
{
    static_assert(std::is_unsigned_v<U>);
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    }
    out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const char* what)
{
    static_assert(std::is_unsigned_v<U>);
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return value;
}

inline void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(std::istream& in, const char* what) { return std::bit_cast<float>(get_le<std::uint32_t>(in, what)); }

inline void put_string(std::ostream& out, std::string_view s)
{
    put_le(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const char* what)
{
    const auto len = get_le<std::uint32_t>(in, what);
    std::string s(len, '\0');
    if (len && !in.read(s.data(), len)) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    return s;
}

inline void put_varint(std::ostream& out, std::uint64_t v)
{
    while (v >= 0x80) {
        out.put(static_cast<char>((v & 0x7f) | 0x80));
        v >>= 7;
    }
    out.put(static_cast<char>(v));
}

/// Decodes from [p, end), advancing p.
inline std::uint64_t get_varint(const unsigned char*& p, const unsigned char* end)
{
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
        if (p == end) {
            throw FormatError("truncated varint");
        }
        const unsigned char byte = *p++;
        v |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
        if (!(byte & 0x80)) {
            return v;
        }
    }
    throw FormatError("varint too long");
}

inline void expect_magic(std::istream& in, std::string_view magic, const char* what)
{
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(magic.size())) || got != magic) {
        throw FormatError(std::string(what) + ": bad magic");
    }
}

}  // namespace io
}  // namespace ckqti
