#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace psta::io {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Explicit little-endian byte composition, independent of host order.

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_i32(std::ostream& os, std::int32_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void put_f64(std::ostream& os, double v) {
    put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint8_t get_u8(std::istream& is) {
    const int c = is.get();
    if (c == std::istream::traits_type::eof()) throw FormatError("unexpected end of file");
    return static_cast<std::uint8_t>(c);
}

inline std::uint16_t get_u16(std::istream& is) {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(get_u8(is)) << (8 * i);
    return v;
}

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is)) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(get_u8(is)) << (8 * i);
    return v;
}

inline std::int32_t get_i32(std::istream& is) {
    return static_cast<std::int32_t>(get_u32(is));
}

inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

/// bulk f32 write/read as raw little-endian words
inline void put_f32_array(std::ostream& os, const float* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data),
                 static_cast<std::streamsize>(count * sizeof(float)));
    } else {
        for (std::size_t i = 0; i < count; ++i) put_f32(os, data[i]);
    }
}

inline void get_f32_array(std::istream& is, float* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (static_cast<std::size_t>(is.gcount()) != count * sizeof(float))
            throw FormatError("unexpected end of file in value block");
    } else {
        for (std::size_t i = 0; i < count; ++i) data[i] = get_f32(is);
    }
}

inline void put_f64_array(std::ostream& os, const double* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data),
                 static_cast<std::streamsize>(count * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < count; ++i) put_f64(os, data[i]);
    }
}

inline void get_f64_array(std::istream& is, double* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<std::size_t>(is.gcount()) != count * sizeof(double))
            throw FormatError("unexpected end of file in value block");
    } else {
        for (std::size_t i = 0; i < count; ++i) data[i] = get_f64(is);
    }
}

}  // namespace psta::io
