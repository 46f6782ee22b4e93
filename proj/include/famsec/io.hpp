// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/matrix.hpp"

namespace famsec {

// FNV-1a 64-bit. Used for parameter fingerprints and frozen-weight checksums;
// not cryptographic.
class Fnv64 {
public:
    void update(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= b[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    template <typename T>
    void update_value(const T& v) {
        update(&v, sizeof(v));
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[std::size_t(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// ----- little-endian binary stream helpers -----
// All on-disk numeric fields are little-endian regardless of host order.

namespace detail {
static_assert(sizeof(float) == 4 && sizeof(double) == 8, "unexpected float sizes");

template <typename T>
void store_le(T v, unsigned char* out) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out, &v, sizeof(T));
    } else {
        unsigned char tmp[sizeof(T)];
        std::memcpy(tmp, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = tmp[sizeof(T) - 1 - i];
    }
}

template <typename T>
T load_le(const unsigned char* in) {
    T v;
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(&v, in, sizeof(T));
    } else {
        unsigned char tmp[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) tmp[i] = in[sizeof(T) - 1 - i];
        std::memcpy(&v, tmp, sizeof(T));
    }
    return v;
}
}  // namespace detail

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    detail::store_le(v, buf);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw load_error("unexpected end of file");
    return detail::load_le<T>(buf);
}

inline void write_str(std::ostream& os, const std::string& s) {
    write_le<std::uint32_t>(os, std::uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_str(std::istream& is) {
    auto n = read_le<std::uint32_t>(is);
    if (n > (1u << 20)) throw load_error("string field too large");
    std::string s(n, '\0');
    is.read(s.data(), std::streamsize(n));
    if (!is) throw load_error("unexpected end of file");
    return s;
}

// Matrix payloads are stored as row-major 32-bit floats.
template <typename T>
void write_matrix_f32(std::ostream& os, const Matrix<T>& m) {
    write_le<std::uint32_t>(os, std::uint32_t(m.rows()));
    write_le<std::uint32_t>(os, std::uint32_t(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) write_le<float>(os, float(m.data()[i]));
}

template <typename T>
Matrix<T> read_matrix_f32(std::istream& is) {
    auto r = read_le<std::uint32_t>(is);
    auto c = read_le<std::uint32_t>(is);
    if (std::uint64_t(r) * c > (std::uint64_t(1) << 32))
        throw load_error("matrix payload too large");
    Matrix<T> m(static_cast<int>(r), static_cast<int>(c));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = T(read_le<float>(is));
    return m;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = true) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
    if (!os) throw load_error("cannot open for writing: " + p.string());
    return os;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = true) {
    std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
    if (!is) throw load_error("cannot open: " + p.string());
    return is;
}

inline std::string read_text_file(const std::filesystem::path& p) {
    auto is = open_in(p, false);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    auto os = open_out(p, false);
    os << text;
}

// Fixed-format float for CSV cells: enough digits to round-trip a double's
// decision-relevant part, stable across runs.
inline std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace famsec
