#ifndef VSHUFFLE_IMAGE_HPP
#define VSHUFFLE_IMAGE_HPP

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vshuffle/tensor.hpp"

namespace vshuffle {

// 8-bit RGB raster. The pixel-space "latent" convention everywhere else is a
// (3,H,W) tensor in [-1,1]; these two functions are the explicit encoder and
// decoder boundaries, identity up to quantization.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

    bool valid() const { return width > 0 && height > 0 && rgb.size() == static_cast<size_t>(width) * height * 3; }
};

template <typename Real = float>
Tensor<Real> encode_image(const Image& img) {
    if (!img.valid()) throw IoError("encode_image: malformed image");
    Tensor<Real> t({3, img.height, img.width});
    Real* p = t.ptr();
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < img.height; ++i)
            for (int j = 0; j < img.width; ++j)
                p[(static_cast<int64_t>(c) * img.height + i) * img.width + j] =
                    static_cast<Real>(img.rgb[(static_cast<size_t>(i) * img.width + j) * 3 + c] / 127.5 - 1.0);
    return t;
}

template <typename Real>
Image decode_image(const Tensor<Real>& t) {
    if (t.rank() != 3 || t.shape[0] != 3)
        throw ShapeError("decode_image: expected (3,H,W), got " + shape_str(t.shape));
    Image img;
    img.height = t.shape[1];
    img.width = t.shape[2];
    img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
    const Real* p = t.ptr();
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < img.height; ++i)
            for (int j = 0; j < img.width; ++j) {
                double v = static_cast<double>(p[(static_cast<int64_t>(c) * img.height + i) * img.width + j]);
                v = std::min(1.0, std::max(-1.0, v));
                const long q = std::lround((v + 1.0) * 127.5);
                img.rgb[(static_cast<size_t>(i) * img.width + j) * 3 + c] =
                    static_cast<uint8_t>(std::min(255L, std::max(0L, q)));
            }
    return img;
}

namespace detail_png {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail_png

inline std::vector<uint8_t> png_encode(const Image& img) {
    if (!img.valid()) throw IoError("png_encode: malformed image");
    const int w = img.width, h = img.height;
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 3));
    for (int i = 0; i < h; ++i) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), img.rgb.begin() + static_cast<size_t>(i) * w * 3,
                   img.rgb.begin() + static_cast<size_t>(i + 1) * w * 3);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png_encode: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out;
    const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);
    std::vector<uint8_t> ihdr;
    detail_png::put_u32(ihdr, static_cast<uint32_t>(w));
    detail_png::put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // adaptive filtering
    ihdr.push_back(0);   // no interlace
    detail_png::put_chunk(out, "IHDR", ihdr);
    detail_png::put_chunk(out, "IDAT", compressed);
    detail_png::put_chunk(out, "IEND", {});
    return out;
}

// Minimal decoder: 8-bit gray / RGB / RGBA, non-interlaced, any filter mix.
inline Image png_decode(const std::vector<uint8_t>& bytes) {
    const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw IoError("png_decode: not a PNG stream");
    size_t pos = 8;
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> idat;
    bool saw_end = false;
    while (pos + 12 <= bytes.size() && !saw_end) {
        const uint32_t len = detail_png::get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw IoError("png_decode: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png_decode: bad IHDR");
            w = static_cast<int>(detail_png::get_u32(payload));
            h = static_cast<int>(detail_png::get_u32(payload + 4));
            const int depth = payload[8], color = payload[9], interlace = payload[12];
            if (depth != 8 || interlace != 0)
                throw IoError("png_decode: only 8-bit non-interlaced images supported");
            if (color == 0) channels = 1;
            else if (color == 2) channels = 3;
            else if (color == 6) channels = 4;
            else throw IoError("png_decode: unsupported color type " + std::to_string(color));
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || channels == 0 || idat.empty()) throw IoError("png_decode: missing chunks");

    const size_t stride = static_cast<size_t>(w) * channels;
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("png_decode: inflate failed");

    std::vector<uint8_t> pixels(static_cast<size_t>(h) * stride);
    const int bpp = channels;
    for (int i = 0; i < h; ++i) {
        const uint8_t filter = raw[static_cast<size_t>(i) * (stride + 1)];
        const uint8_t* src = raw.data() + static_cast<size_t>(i) * (stride + 1) + 1;
        uint8_t* dst = pixels.data() + static_cast<size_t>(i) * stride;
        const uint8_t* up = i > 0 ? pixels.data() + static_cast<size_t>(i - 1) * stride : nullptr;
        for (size_t j = 0; j < stride; ++j) {
            const int a = j >= static_cast<size_t>(bpp) ? dst[j - bpp] : 0;
            const int b = up ? up[j] : 0;
            const int c = (up && j >= static_cast<size_t>(bpp)) ? up[j - bpp] : 0;
            int v = src[j];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail_png::paeth(a, b, c); break;
                default: throw IoError("png_decode: unknown filter " + std::to_string(filter));
            }
            dst[j] = static_cast<uint8_t>(v & 0xff);
        }
    }

    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    for (size_t px = 0; px < static_cast<size_t>(w) * h; ++px) {
        if (channels == 1) {
            img.rgb[px * 3 + 0] = img.rgb[px * 3 + 1] = img.rgb[px * 3 + 2] = pixels[px];
        } else {
            img.rgb[px * 3 + 0] = pixels[px * channels + 0];
            img.rgb[px * 3 + 1] = pixels[px * channels + 1];
            img.rgb[px * 3 + 2] = pixels[px * channels + 2];
        }
    }
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    const std::vector<uint8_t> bytes = png_encode(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write_png: short write to " + path);
}

inline Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_png: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return png_decode(bytes);
}

}  // namespace vshuffle

#endif
