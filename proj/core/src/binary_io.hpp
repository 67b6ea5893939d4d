#pragma once

// Little-endian scalar helpers shared by the FGRID, weights and calibration
// file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "motionood/errors.hpp"

namespace motionood::detail {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

inline void write_magic(std::ostream& os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f32(std::ostream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f32s(std::ostream& os, std::span<const float> v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw IoError(what + ": unexpected end of file");
    }
}

inline void expect_magic(std::istream& is, std::string_view magic, const std::string& what) {
    char buf[8] = {};
    read_exact(is, buf, magic.size(), what);
    if (std::string_view(buf, magic.size()) != magic) {
        throw FormatError(what + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    read_exact(is, &v, sizeof v, what);
    return v;
}

inline float read_f32(std::istream& is, const std::string& what) {
    float v = 0;
    read_exact(is, &v, sizeof v, what);
    return v;
}

inline double read_f64(std::istream& is, const std::string& what) {
    double v = 0;
    read_exact(is, &v, sizeof v, what);
    return v;
}

inline void read_f32s(std::istream& is, std::span<float> dst, const std::string& what) {
    read_exact(is, dst.data(), dst.size_bytes(), what);
}

// True when the stream has no bytes left.
inline bool at_eof(std::istream& is) {
    return is.peek() == std::char_traits<char>::eof();
}

}  // namespace motionood::detail
