#ifndef VSHUFFLE_TEXTURES_HPP
#define VSHUFFLE_TEXTURES_HPP

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vshuffle/image.hpp"
#include "vshuffle/rng.hpp"
#include "vshuffle/tensor.hpp"

namespace vshuffle {

// Procedural texture images grouped into style domains: one palette seed is
// one domain, every image drawn from it shares the palette while the
// geometry varies per image.

enum class TextureKind { Stripes, Checker, NoisePalette, Blobs };

inline TextureKind parse_texture_kind(const std::string& s) {
    if (s == "stripes") return TextureKind::Stripes;
    if (s == "checker") return TextureKind::Checker;
    if (s == "noise-palette") return TextureKind::NoisePalette;
    if (s == "blobs") return TextureKind::Blobs;
    throw ConfigError("unknown texture kind: " + s);
}

inline std::string texture_kind_name(TextureKind k) {
    switch (k) {
        case TextureKind::Stripes: return "stripes";
        case TextureKind::Checker: return "checker";
        case TextureKind::NoisePalette: return "noise-palette";
        case TextureKind::Blobs: return "blobs";
    }
    return "?";
}

struct TexturePalette {
    double base_hue_deg = 0;
    std::vector<std::array<uint8_t, 3>> colors;
};

namespace detail_tex {

inline std::array<uint8_t, 3> hsv_to_rgb(double h_deg, double s, double v) {
    const double h = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0) / 60.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    double r = 0, g = 0, b = 0;
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    auto q8 = [](double x) { return static_cast<uint8_t>(std::lround(std::min(1.0, std::max(0.0, x)) * 255.0)); };
    return {q8(r), q8(g), q8(b)};
}

}  // namespace detail_tex

// Hue-coherent palette: every color sits within a narrow band around the
// base hue so a palette defines a recognizable color domain.
inline TexturePalette make_palette(uint64_t seed, int ncolors) {
    Rng rng(mix_key(seed, 0x70616cULL));
    TexturePalette pal;
    pal.base_hue_deg = rng.uniform(0.0, 360.0);
    for (int i = 0; i < ncolors; ++i) {
        const double hue = pal.base_hue_deg + rng.uniform(-9.0, 9.0);
        const double sat = rng.uniform(0.55, 0.95);
        const double val = 0.30 + 0.62 * (ncolors > 1 ? static_cast<double>(i) / (ncolors - 1) : 0.5) +
                           rng.uniform(-0.03, 0.03);
        pal.colors.push_back(detail_tex::hsv_to_rgb(hue, sat, std::min(0.95, std::max(0.25, val))));
    }
    return pal;
}

// Chroma-weighted circular mean hue in degrees.
inline double mean_hue_deg(const Image& img) {
    double sx = 0, sy = 0;
    for (size_t px = 0; px < img.rgb.size(); px += 3) {
        const double r = img.rgb[px] / 255.0, g = img.rgb[px + 1] / 255.0, b = img.rgb[px + 2] / 255.0;
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        const double c = mx - mn;
        if (c < 1e-9) continue;
        double h;
        if (mx == r) h = std::fmod((g - b) / c, 6.0);
        else if (mx == g) h = (b - r) / c + 2.0;
        else h = (r - g) / c + 4.0;
        const double rad = h * 60.0 * 3.14159265358979323846 / 180.0;
        sx += c * std::cos(rad);
        sy += c * std::sin(rad);
    }
    const double deg = std::atan2(sy, sx) * 180.0 / 3.14159265358979323846;
    return std::fmod(deg + 360.0, 360.0);
}

inline double hue_distance_deg(double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

namespace detail_tex {

inline Image stripes_image(int size, const TexturePalette& pal, Rng& rng) {
    Image img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(size) * size * 3);
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    const double period = rng.uniform(3.0, static_cast<double>(size) / 2.0);
    const double phase = rng.uniform(0.0, period);
    const double cx = std::cos(angle), sy = std::sin(angle);
    const int nc = static_cast<int>(pal.colors.size());
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double proj = j * cx + i * sy + phase;
            int band = static_cast<int>(std::floor(proj / period));
            band = ((band % nc) + nc) % nc;
            const auto& c = pal.colors[static_cast<size_t>(band)];
            uint8_t* px = &img.rgb[(static_cast<size_t>(i) * size + j) * 3];
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
        }
    return img;
}

inline Image checker_image(int size, const TexturePalette& pal, Rng& rng) {
    Image img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(size) * size * 3);
    const int cell = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(size / 4)));
    const int oi = static_cast<int>(rng.below(static_cast<uint64_t>(cell)));
    const int oj = static_cast<int>(rng.below(static_cast<uint64_t>(cell)));
    const uint64_t salt = rng.next_u64();
    const int nc = static_cast<int>(pal.colors.size());
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const int ci = (i + oi) / cell, cj = (j + oj) / cell;
            uint64_t k = salt;
            const int idx = static_cast<int>(mix_key(k, static_cast<uint64_t>(ci), static_cast<uint64_t>(cj)) %
                                             static_cast<uint64_t>(nc));
            const auto& c = pal.colors[static_cast<size_t>(idx)];
            uint8_t* px = &img.rgb[(static_cast<size_t>(i) * size + j) * 3];
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
        }
    return img;
}

inline Image noise_palette_image(int size, const TexturePalette& pal, Rng& rng) {
    // value noise on a coarse grid, bilinearly interpolated, mapped through
    // the palette gradient
    const int grid = 4 + static_cast<int>(rng.below(4));
    std::vector<double> knots(static_cast<size_t>(grid + 1) * (grid + 1));
    for (auto& k : knots) k = rng.uniform();
    Image img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(size) * size * 3);
    const int nc = static_cast<int>(pal.colors.size());
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double gi = static_cast<double>(i) * grid / size;
            const double gj = static_cast<double>(j) * grid / size;
            const int i0 = static_cast<int>(gi), j0 = static_cast<int>(gj);
            const double fi = gi - i0, fj = gj - j0;
            auto at = [&](int a, int b) { return knots[static_cast<size_t>(a) * (grid + 1) + b]; };
            const double v = at(i0, j0) * (1 - fi) * (1 - fj) + at(i0 + 1, j0) * fi * (1 - fj) +
                             at(i0, j0 + 1) * (1 - fi) * fj + at(i0 + 1, j0 + 1) * fi * fj;
            const double pos = v * (nc - 1);
            const int k0 = std::min(nc - 2, static_cast<int>(pos));
            const double f = pos - k0;
            uint8_t* px = &img.rgb[(static_cast<size_t>(i) * size + j) * 3];
            for (int c = 0; c < 3; ++c)
                px[c] = static_cast<uint8_t>(std::lround(pal.colors[static_cast<size_t>(k0)][c] * (1 - f) +
                                                         pal.colors[static_cast<size_t>(k0 + 1)][c] * f));
        }
    return img;
}

inline Image blobs_image(int size, const TexturePalette& pal, Rng& rng) {
    Image img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(size) * size * 3);
    const int nc = static_cast<int>(pal.colors.size());
    const auto& bg = pal.colors[0];
    for (size_t px = 0; px < img.rgb.size(); px += 3) {
        img.rgb[px] = bg[0];
        img.rgb[px + 1] = bg[1];
        img.rgb[px + 2] = bg[2];
    }
    const int nblobs = 3 + static_cast<int>(rng.below(4));
    for (int b = 0; b < nblobs; ++b) {
        const double cx = rng.uniform(0.0, size);
        const double cy = rng.uniform(0.0, size);
        const double rad = rng.uniform(size / 8.0, size / 3.0);
        const auto& c = pal.colors[static_cast<size_t>(1 + rng.below(static_cast<uint64_t>(nc - 1)))];
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const double d2 = (j - cx) * (j - cx) + (i - cy) * (i - cy);
                if (d2 <= rad * rad) {
                    uint8_t* px = &img.rgb[(static_cast<size_t>(i) * size + j) * 3];
                    px[0] = c[0];
                    px[1] = c[1];
                    px[2] = c[2];
                }
            }
    }
    return img;
}

}  // namespace detail_tex

struct TextureDomainSpec {
    TextureKind kind = TextureKind::Blobs;
    uint64_t palette_seed = 0;
    int ncolors = 4;
    int size = 32;
};

inline std::vector<Image> make_texture_dataset(const TextureDomainSpec& spec, int count) {
    if (count < 1) throw ConfigError("make_texture_dataset: count must be >= 1");
    if (spec.size < 4) throw ConfigError("make_texture_dataset: size too small");
    const TexturePalette pal = make_palette(spec.palette_seed, spec.kind == TextureKind::Stripes ? 2 : spec.ncolors);
    std::vector<Image> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(mix_key(spec.palette_seed, 0x696d67ULL, static_cast<uint64_t>(i),
                        static_cast<uint64_t>(spec.kind)));
        switch (spec.kind) {
            case TextureKind::Stripes: out.push_back(detail_tex::stripes_image(spec.size, pal, rng)); break;
            case TextureKind::Checker: out.push_back(detail_tex::checker_image(spec.size, pal, rng)); break;
            case TextureKind::NoisePalette:
                out.push_back(detail_tex::noise_palette_image(spec.size, pal, rng));
                break;
            case TextureKind::Blobs: out.push_back(detail_tex::blobs_image(spec.size, pal, rng)); break;
        }
    }
    return out;
}

inline std::vector<Image> make_texture_dataset(TextureKind kind, int count, uint64_t palette_seed,
                                               int size = 32) {
    TextureDomainSpec spec;
    spec.kind = kind;
    spec.palette_seed = palette_seed;
    spec.size = size;
    return make_texture_dataset(spec, count);
}

}  // namespace vshuffle

#endif
