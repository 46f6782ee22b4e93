// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/image.hpp"

// Minimal PNG reader/writer on top of zlib. Writes 8-bit RGB, non-interlaced.
// Reads 8-bit grayscale / gray+alpha / RGB / RGBA with any scanline filter;
// palette and interlaced files are rejected with an ingestion_error.

namespace famsec {
namespace png {

namespace detail {

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back((v >> 24) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back(v & 0xff);
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const unsigned char* data, std::size_t n) {
    put_be32(out, std::uint32_t(n));
    std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + n);
    std::uint32_t crc = ::crc32(0, out.data() + type_at, uInt(4 + n));
    put_be32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

static const unsigned char kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace detail

// Quick validity probe: signature plus a parseable IHDR. Used by the dataset
// scanner so corrupt files are reported at manifest time without a full
// decode.
inline bool header_ok(const std::filesystem::path& path, int* w = nullptr, int* h = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    unsigned char buf[33];
    is.read(reinterpret_cast<char*>(buf), 33);
    if (is.gcount() != 33) return false;
    if (std::memcmp(buf, detail::kSig, 8) != 0) return false;
    if (detail::be32(buf + 8) != 13 || std::memcmp(buf + 12, "IHDR", 4) != 0) return false;
    std::uint32_t width = detail::be32(buf + 16), height = detail::be32(buf + 20);
    if (width == 0 || height == 0 || width > (1u << 24) || height > (1u << 24)) return false;
    unsigned char bit_depth = buf[24], color_type = buf[25];
    if (bit_depth != 8) return false;
    if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6) return false;
    if (w) *w = int(width);
    if (h) *h = int(height);
    return true;
}

inline std::vector<unsigned char> encode(const Image& img) {
    const int w = img.width, h = img.height;
    FAMSEC_REQUIRE(w > 0 && h > 0, contract_error, "png encode: empty image");

    // Raw scanlines, filter byte 0 (None) per row.
    std::vector<unsigned char> raw(std::size_t(h) * (1 + std::size_t(w) * 3));
    std::size_t at = 0;
    for (int y = 0; y < h; ++y) {
        raw[at++] = 0;
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = clamp01(img.at(y, x, c));
                raw[at++] = (unsigned char)(v * 255.0f + 0.5f);
            }
    }

    uLongf comp_cap = ::compressBound(uLong(raw.size()));
    std::vector<unsigned char> comp(comp_cap);
    if (::compress2(comp.data(), &comp_cap, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw ingestion_error("png encode: deflate failed");
    comp.resize(comp_cap);

    std::vector<unsigned char> out;
    out.insert(out.end(), detail::kSig, detail::kSig + 8);
    unsigned char ihdr[13];
    ihdr[0] = (w >> 24) & 0xff; ihdr[1] = (w >> 16) & 0xff; ihdr[2] = (w >> 8) & 0xff; ihdr[3] = w & 0xff;
    ihdr[4] = (h >> 24) & 0xff; ihdr[5] = (h >> 16) & 0xff; ihdr[6] = (h >> 8) & 0xff; ihdr[7] = h & 0xff;
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: truecolor
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // interlace
    detail::put_chunk(out, "IHDR", ihdr, 13);
    detail::put_chunk(out, "IDAT", comp.data(), comp.size());
    detail::put_chunk(out, "IEND", nullptr, 0);
    return out;
}

inline void write_file(const std::filesystem::path& path, const Image& img) {
    auto bytes = encode(img);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ingestion_error("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline Image decode(const unsigned char* bytes, std::size_t n, const std::string& name) {
    auto fail = [&](const std::string& why) -> Image {
        throw ingestion_error("bad png '" + name + "': " + why);
    };
    if (n < 45 || std::memcmp(bytes, detail::kSig, 8) != 0) return fail("signature");

    std::size_t at = 8;
    int w = 0, h = 0, color_type = -1, channels = 0;
    std::vector<unsigned char> idat;
    bool saw_end = false;
    while (at + 12 <= n && !saw_end) {
        std::uint32_t len = detail::be32(bytes + at);
        if (at + 12 + len > n) return fail("truncated chunk");
        const unsigned char* type = bytes + at + 4;
        const unsigned char* data = bytes + at + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) return fail("IHDR length");
            w = int(detail::be32(data));
            h = int(detail::be32(data + 4));
            if (data[8] != 8) return fail("unsupported bit depth");
            color_type = data[9];
            if (data[12] != 0) return fail("interlaced png unsupported");
            switch (color_type) {
                case 0: channels = 1; break;
                case 2: channels = 3; break;
                case 4: channels = 2; break;
                case 6: channels = 4; break;
                default: return fail("unsupported color type");
            }
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
        }
        at += 12 + len;
    }
    if (w <= 0 || h <= 0 || idat.empty() || !saw_end) return fail("missing chunks");

    const std::size_t stride = std::size_t(w) * channels;
    std::vector<unsigned char> raw(std::size_t(h) * (stride + 1));
    {
        z_stream zs{};
        if (inflateInit(&zs) != Z_OK) return fail("inflate init");
        zs.next_in = idat.data();
        zs.avail_in = uInt(idat.size());
        zs.next_out = raw.data();
        zs.avail_out = uInt(raw.size());
        int rc = inflate(&zs, Z_FINISH);
        inflateEnd(&zs);
        if (rc != Z_STREAM_END || zs.avail_out != 0) return fail("idat inflate");
    }

    // Undo scanline filters in place.
    std::vector<unsigned char> prev(stride, 0);
    Image img(h, w);
    const int bpp = channels;
    for (int y = 0; y < h; ++y) {
        unsigned char* line = raw.data() + std::size_t(y) * (stride + 1);
        int filter = line[0];
        unsigned char* cur = line + 1;
        switch (filter) {
            case 0:
                break;
            case 1:
                for (std::size_t x = bpp; x < stride; ++x) cur[x] = (unsigned char)(cur[x] + cur[x - bpp]);
                break;
            case 2:
                for (std::size_t x = 0; x < stride; ++x) cur[x] = (unsigned char)(cur[x] + prev[x]);
                break;
            case 3:
                for (std::size_t x = 0; x < stride; ++x) {
                    int left = x >= std::size_t(bpp) ? cur[x - bpp] : 0;
                    cur[x] = (unsigned char)(cur[x] + ((left + prev[x]) >> 1));
                }
                break;
            case 4:
                for (std::size_t x = 0; x < stride; ++x) {
                    int left = x >= std::size_t(bpp) ? cur[x - bpp] : 0;
                    int upleft = x >= std::size_t(bpp) ? prev[x - bpp] : 0;
                    cur[x] = (unsigned char)(cur[x] + detail::paeth(left, prev[x], upleft));
                }
                break;
            default:
                return fail("unknown filter type");
        }
        std::memcpy(prev.data(), cur, stride);

        for (int x = 0; x < w; ++x) {
            const unsigned char* px = cur + std::size_t(x) * channels;
            float r, g, b;
            switch (color_type) {
                case 0: r = g = b = px[0] / 255.0f; break;
                case 4: r = g = b = px[0] / 255.0f; break;
                case 2: r = px[0] / 255.0f; g = px[1] / 255.0f; b = px[2] / 255.0f; break;
                default: r = px[0] / 255.0f; g = px[1] / 255.0f; b = px[2] / 255.0f; break;
            }
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    }
    return img;
}

inline Image read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ingestion_error("cannot read " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    return decode(bytes.data(), bytes.size(), path.string());
}

}  // namespace png
}  // namespace famsec
