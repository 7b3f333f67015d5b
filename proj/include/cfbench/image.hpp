// Grayscale 8-bit patches: container, distortion metrics, grid extraction,
// PGM (P5) round-trip, and the parametric synthetic "device" generator.
#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cfbench/core.hpp"

namespace cfbench {

struct ImagePatch {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, values 0..255

    ImagePatch() = default;
    ImagePatch(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h),
          pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::uint8_t& at(int y, int x) {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t at(int y, int x) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    std::size_t size() const { return pixels.size(); }

    bool operator==(const ImagePatch& o) const = default;
};

// ---------------------------------------------------------------------------
// Distortion metrics

inline double mse(const ImagePatch& a, const ImagePatch& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("mse: dimension mismatch");
    if (a.size() == 0) throw std::invalid_argument("mse: empty patch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// PSNR in dB against peak 255. Returns nullopt for identical inputs
// (infinite PSNR is a distinct outcome, not a number).
inline std::optional<double> psnr(const ImagePatch& a, const ImagePatch& b) {
    double m = mse(a, b);
    if (m == 0.0) return std::nullopt;
    return 10.0 * std::log10(255.0 * 255.0 / m);
}

inline double psnr_from_mse(double m) { return 10.0 * std::log10(255.0 * 255.0 / m); }

// ---------------------------------------------------------------------------
// Patch extraction

// Top-left anchored regular grid, raster order, truncated at max_patches.
inline std::vector<ImagePatch> extract_patches(const ImagePatch& image, int patch_size,
                                               int stride,
                                               std::size_t max_patches =
                                                   std::numeric_limits<std::size_t>::max()) {
    if (patch_size <= 0 || stride <= 0)
        throw std::invalid_argument("extract_patches: non-positive size/stride");
    if (patch_size > image.width || patch_size > image.height)
        throw std::invalid_argument("extract_patches: patch larger than image");
    std::vector<ImagePatch> out;
    for (int y = 0; y + patch_size <= image.height; y += stride) {
        for (int x = 0; x + patch_size <= image.width; x += stride) {
            if (out.size() >= max_patches) return out;
            ImagePatch p(patch_size, patch_size);
            for (int r = 0; r < patch_size; ++r)
                for (int c = 0; c < patch_size; ++c)
                    p.at(r, c) = image.at(y + r, x + c);
            out.push_back(std::move(p));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255)

namespace detail {
inline int pgm_read_token(const std::string& buf, std::size_t& pos, const char* what) {
    // skip whitespace and '#' comments
    while (pos < buf.size()) {
        char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size())
        throw ParseError(std::string("pgm: missing ") + what, pos);
    if (buf[pos] < '0' || buf[pos] > '9')
        throw ParseError(std::string("pgm: bad ") + what, pos);
    long v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
        v = v * 10 + (buf[pos] - '0');
        if (v > 1 << 30) throw ParseError(std::string("pgm: huge ") + what, pos);
        ++pos;
    }
    return static_cast<int>(v);
}
}  // namespace detail

inline ImagePatch parse_pgm(const std::string& buf) {
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
        throw ParseError("pgm: not a P5 file", 0);
    std::size_t pos = 2;
    int w = detail::pgm_read_token(buf, pos, "width");
    int h = detail::pgm_read_token(buf, pos, "height");
    int maxval = detail::pgm_read_token(buf, pos, "maxval");
    if (w <= 0 || h <= 0) throw ParseError("pgm: non-positive dimensions", pos);
    if (maxval != 255) throw ParseError("pgm: unsupported maxval (want 255)", pos);
    if (pos >= buf.size()) throw ParseError("pgm: missing pixel data", pos);
    ++pos;  // single whitespace byte after maxval
    std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (buf.size() - pos < need)
        throw ParseError("pgm: truncated pixel data", buf.size());
    ImagePatch p(w, h);
    for (std::size_t i = 0; i < need; ++i)
        p.pixels[i] = static_cast<std::uint8_t>(buf[pos + i]);
    return p;
}

inline ImagePatch read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_pgm(ss.str());
}

inline std::string serialize_pgm(const ImagePatch& p) {
    std::string out = "P5\n" + std::to_string(p.width) + " " + std::to_string(p.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(p.pixels.data()), p.size());
    return out;
}

inline void write_pgm(const ImagePatch& p, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::string s = serialize_pgm(p);
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic devices
//
// Stand-in for physical cameras: each device couples a band-limited texture
// scale, a sensor noise level, and a tone-curve exponent. Generation is a
// pure function of (spec, dims, seed).

struct DeviceSpec {
    int device_id = 0;
    double noise_sigma = 2.0;       // gray levels, >= 0
    double gamma = 1.0;             // > 0
    double base_texture_scale = 2.0;  // pixels, >= 1
};

struct DatasetSpec {
    std::vector<DeviceSpec> devices;
    int images_per_device = 10;
    int image_width = 256;
    int image_height = 256;
    int patch_size = 64;
    int patch_stride = 32;
    int patches_per_image = 192;  // grid truncated in raster order
    std::uint64_t seed = 1;
};

namespace detail {

// Separable Gaussian smoothing of a double field, mirror (whole-sample)
// boundary. Radius ceil(3*sigma), kernel renormalized after truncation.
inline int mirror_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
    int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int t = -r; t <= r; ++t) {
        double v = std::exp(-0.5 * (static_cast<double>(t) * t) / (sigma * sigma));
        k[static_cast<std::size_t>(t + r)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

inline void smooth_field(std::vector<double>& f, int w, int h, double sigma) {
    if (sigma <= 0.0) return;
    std::vector<double> k = gaussian_kernel(sigma);
    int r = (static_cast<int>(k.size()) - 1) / 2;
    std::vector<double> tmp(f.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t)
                acc += k[static_cast<std::size_t>(t + r)] *
                       f[static_cast<std::size_t>(y) * w + mirror_index(x + t, w)];
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t)
                acc += k[static_cast<std::size_t>(t + r)] *
                       tmp[static_cast<std::size_t>(mirror_index(y + t, h)) * w + x];
            f[static_cast<std::size_t>(y) * w + x] = acc;
        }
}

}  // namespace detail

inline ImagePatch generate_synthetic_image(const DeviceSpec& spec, int width, int height,
                                           std::uint64_t seed) {
    if (width < 16 || height < 16)
        throw std::invalid_argument("generate_synthetic_image: dimensions below 16");
    if (spec.noise_sigma < 0.0 || spec.gamma <= 0.0 || spec.base_texture_scale < 1.0)
        throw std::invalid_argument("generate_synthetic_image: bad device spec");

    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    // Texture and sensor noise use distinct substreams so that changing
    // noise_sigma keeps the texture draw identical.
    Rng texture_rng(mix_seed({seed, 0xA11CE5ULL}));
    Rng noise_rng(mix_seed({seed, 0xB0B5EEDULL}));

    std::vector<double> field(n);
    for (double& v : field) v = texture_rng.normal();
    detail::smooth_field(field, width, height, spec.base_texture_scale);

    // Normalize the smoothed field so texture contrast is comparable across
    // texture scales, then place it mid-range.
    double mean = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : field) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    double sd = std::sqrt(var);
    if (sd < 1e-12) sd = 1.0;

    ImagePatch out(width, height);
    for (std::size_t i = 0; i < n; ++i) {
        double texture = 128.0 + 40.0 * (field[i] - mean) / sd;
        double v = texture + spec.noise_sigma * noise_rng.normal();
        double t = v / 255.0;
        if (t < 0.0) t = 0.0;
        if (t > 1.0) t = 1.0;
        double mapped = 255.0 * std::pow(t, spec.gamma);
        out.pixels[i] = static_cast<std::uint8_t>(clamp_u8(lround_half_away(mapped)));
    }
    return out;
}

}  // namespace cfbench
