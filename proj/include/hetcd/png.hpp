#pragma once
// Dependency-free truecolor PNG writer. The zlib stream uses stored
// (uncompressed) deflate blocks, which every decoder accepts; change maps
// and plots are small enough that compression is not worth a dependency.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace hetcd {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // RGB, row-major

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
};

namespace detail_png {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed = 0xffffffffu) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    put_be32(out, crc32(body.data(), body.size()) ^ 0xffffffffu);
}

}  // namespace detail_png

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw std::invalid_argument("encode_png: bad image dimensions");

    // Raw scanlines: filter byte 0 followed by RGB triples.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * img.width));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const auto* row = &img.pixels[static_cast<std::size_t>(y) * img.width * 3];
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.width) * 3);
    }

    // zlib stream with stored deflate blocks.
    std::vector<std::uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t off = 0;
    while (off < raw.size()) {
        const std::size_t len = std::min<std::size_t>(65535, raw.size() - off);
        const bool final = off + len == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(len & 0xff));
        z.push_back(static_cast<std::uint8_t>(len >> 8));
        z.push_back(static_cast<std::uint8_t>(~len & 0xff));
        z.push_back(static_cast<std::uint8_t>((~len >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + off, raw.begin() + off + len);
        off += len;
    }
    detail_png::put_be32(z, detail_png::adler32(raw.data(), raw.size()));

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    detail_png::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
    detail_png::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    detail_png::append_chunk(out, "IHDR", ihdr);
    detail_png::append_chunk(out, "IDAT", z);
    detail_png::append_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write png: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short png write: " + path.string());
}

}  // namespace hetcd
