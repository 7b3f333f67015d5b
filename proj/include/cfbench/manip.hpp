// The four manipulation families used by the detection tasks, pinned to
// fully deterministic conventions: mirror boundaries for filters, bilinear
// resize with half-pixel mapping, and a decode-equivalent JPEG pipeline.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "cfbench/core.hpp"
#include "cfbench/image.hpp"

namespace cfbench {

// ---------------------------------------------------------------------------
// Gaussian blur: separable, radius ceil(3*sigma), kernel renormalized after
// truncation, mirror boundaries, one final round/clip.

inline ImagePatch gaussian_blur(const ImagePatch& x, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
    std::vector<double> f(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) f[i] = static_cast<double>(x.pixels[i]);
    detail::smooth_field(f, x.width, x.height, sigma);
    ImagePatch out(x.width, x.height);
    for (std::size_t i = 0; i < x.size(); ++i)
        out.pixels[i] = static_cast<std::uint8_t>(clamp_u8(lround_half_away(f[i])));
    return out;
}

// ---------------------------------------------------------------------------
// Median filter: exact median of the kernel x kernel window, mirror boundary.

inline ImagePatch median_filter(const ImagePatch& x, int kernel) {
    if (kernel < 3 || kernel % 2 == 0)
        throw std::invalid_argument("median_filter: kernel must be odd and >= 3");
    const int r = kernel / 2;
    ImagePatch out(x.width, x.height);
    std::vector<std::uint8_t> window(static_cast<std::size_t>(kernel) * kernel);
    for (int y = 0; y < x.height; ++y) {
        for (int c = 0; c < x.width; ++c) {
            std::size_t n = 0;
            for (int dy = -r; dy <= r; ++dy) {
                int yy = detail::mirror_index(y + dy, x.height);
                for (int dx = -r; dx <= r; ++dx)
                    window[n++] = x.at(yy, detail::mirror_index(c + dx, x.width));
            }
            auto mid = window.begin() + static_cast<std::ptrdiff_t>(n / 2);
            std::nth_element(window.begin(), mid, window.begin() + static_cast<std::ptrdiff_t>(n));
            out.at(y, c) = *mid;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear resize, half-pixel-centered mapping src = (dst+0.5)/scale - 0.5,
// edge clamping, round-half-up. Output dims = round(scale * input dims).

inline ImagePatch resize(const ImagePatch& x, double scale) {
    if (scale <= 0.0) throw std::invalid_argument("resize: scale must be > 0");
    int ow = static_cast<int>(std::lround(scale * x.width));
    int oh = static_cast<int>(std::lround(scale * x.height));
    if (ow < 1 || oh < 1) throw std::invalid_argument("resize: output dimension is zero");
    ImagePatch out(ow, oh);
    auto sample_axis = [](int dst, double scale_, int n, int& i0, int& i1, double& frac) {
        double src = (static_cast<double>(dst) + 0.5) / scale_ - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > static_cast<double>(n - 1)) src = static_cast<double>(n - 1);
        i0 = static_cast<int>(std::floor(src));
        if (i0 > n - 1) i0 = n - 1;
        i1 = std::min(i0 + 1, n - 1);
        frac = src - static_cast<double>(i0);
    };
    for (int y = 0; y < oh; ++y) {
        int y0, y1;
        double fy;
        sample_axis(y, scale, x.height, y0, y1, fy);
        for (int c = 0; c < ow; ++c) {
            int x0, x1;
            double fx;
            sample_axis(c, scale, x.width, x0, x1, fx);
            double top = (1.0 - fx) * x.at(y0, x0) + fx * x.at(y0, x1);
            double bot = (1.0 - fx) * x.at(y1, x0) + fx * x.at(y1, x1);
            double v = (1.0 - fy) * top + fy * bot;
            out.at(y, c) = static_cast<std::uint8_t>(
                clamp_u8(static_cast<long>(std::floor(v + 0.5))));
        }
    }
    return out;
}

inline ImagePatch center_crop(const ImagePatch& x, int w, int h) {
    if (w > x.width || h > x.height)
        throw std::invalid_argument("center_crop: crop larger than image");
    int ox = (x.width - w) / 2;
    int oy = (x.height - h) / 2;
    ImagePatch out(w, h);
    for (int y = 0; y < h; ++y)
        for (int c = 0; c < w; ++c) out.at(y, c) = x.at(oy + y, ox + c);
    return out;
}

// ---------------------------------------------------------------------------
// JPEG luminance round-trip (decode-equivalent; no entropy coding).
// Level shift, orthonormal 8x8 DCT-II, Annex-K luminance table with the
// standard quality scaling, dequantize, inverse DCT.

namespace jpegdetail {

inline const std::array<int, 64>& annex_k_luminance() {
    static const std::array<int, 64> t = {
        16, 11, 10, 16, 24,  40,  51,  61,   //
        12, 12, 14, 19, 26,  58,  60,  55,   //
        14, 13, 16, 24, 40,  57,  69,  56,   //
        14, 17, 22, 29, 51,  87,  80,  62,   //
        18, 22, 37, 56, 68,  109, 103, 77,   //
        24, 35, 55, 64, 81,  104, 113, 92,   //
        49, 64, 78, 87, 103, 121, 120, 101,  //
        72, 92, 95, 98, 112, 100, 103, 99};
    return t;
}

// 8-point orthonormal DCT-II basis, M[u][n].
inline const std::array<std::array<double, 8>, 8>& dct_matrix() {
    static const auto m = [] {
        std::array<std::array<double, 8>, 8> mm{};
        const double pi = 3.14159265358979323846;
        for (int u = 0; u < 8; ++u) {
            double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : 0.5;
            for (int n = 0; n < 8; ++n)
                mm[static_cast<std::size_t>(u)][static_cast<std::size_t>(n)] =
                    alpha * std::cos((2.0 * n + 1.0) * u * pi / 16.0);
        }
        return mm;
    }();
    return m;
}

}  // namespace jpegdetail

// Quality-scaled quantization table (libjpeg convention): S = 5000/Q for
// Q < 50 else 200 - 2Q; entries clamp(floor((q*S + 50)/100), 1, 255).
inline std::array<int, 64> jpeg_quant_table(int quality) {
    if (quality < 1 || quality > 100)
        throw std::invalid_argument("jpeg_quant_table: quality out of 1..100");
    int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> out{};
    const auto& base = jpegdetail::annex_k_luminance();
    for (int i = 0; i < 64; ++i) {
        int v = (base[static_cast<std::size_t>(i)] * s + 50) / 100;
        out[static_cast<std::size_t>(i)] = std::clamp(v, 1, 255);
    }
    return out;
}

inline ImagePatch jpeg_roundtrip(const ImagePatch& x, int quality) {
    const std::array<int, 64> qt = jpeg_quant_table(quality);
    const auto& m = jpegdetail::dct_matrix();

    // pad to multiples of 8 by edge replication
    int pw = (x.width + 7) / 8 * 8;
    int ph = (x.height + 7) / 8 * 8;
    std::vector<double> img(static_cast<std::size_t>(pw) * ph);
    for (int y = 0; y < ph; ++y) {
        int sy = std::min(y, x.height - 1);
        for (int c = 0; c < pw; ++c)
            img[static_cast<std::size_t>(y) * pw + c] =
                static_cast<double>(x.at(sy, std::min(c, x.width - 1))) - 128.0;
    }

    double block[8][8], tmp[8][8], coef[8][8];
    for (int by = 0; by < ph; by += 8) {
        for (int bx = 0; bx < pw; bx += 8) {
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j)
                    block[i][j] = img[static_cast<std::size_t>(by + i) * pw + bx + j];
            // coef = M * block * M^T
            for (int u = 0; u < 8; ++u)
                for (int j = 0; j < 8; ++j) {
                    double acc = 0.0;
                    for (int n = 0; n < 8; ++n) acc += m[u][n] * block[n][j];
                    tmp[u][j] = acc;
                }
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v) {
                    double acc = 0.0;
                    for (int n = 0; n < 8; ++n) acc += tmp[u][n] * m[v][n];
                    coef[u][v] = acc;
                }
            // quantize / dequantize
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v) {
                    int q = qt[static_cast<std::size_t>(u) * 8 + v];
                    long lv = lround_half_away(coef[u][v] / q);
                    coef[u][v] = static_cast<double>(lv) * q;
                }
            // block = M^T * coef * M
            for (int i = 0; i < 8; ++i)
                for (int v = 0; v < 8; ++v) {
                    double acc = 0.0;
                    for (int u = 0; u < 8; ++u) acc += m[u][i] * coef[u][v];
                    tmp[i][v] = acc;
                }
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j) {
                    double acc = 0.0;
                    for (int v = 0; v < 8; ++v) acc += tmp[i][v] * m[v][j];
                    img[static_cast<std::size_t>(by + i) * pw + bx + j] = acc;
                }
        }
    }

    ImagePatch out(x.width, x.height);
    for (int y = 0; y < x.height; ++y)
        for (int c = 0; c < x.width; ++c)
            out.at(y, c) = static_cast<std::uint8_t>(
                clamp_u8(lround_half_away(img[static_cast<std::size_t>(y) * pw + c] + 128.0)));
    return out;
}

// ---------------------------------------------------------------------------
// Dispatch

enum class ManipKind { Blur, Jpeg, Median, Resize };

struct ManipulationSpec {
    ManipKind kind = ManipKind::Blur;
    double sigma = 1.10;  // blur
    int quality = 70;     // jpeg
    int kernel = 7;       // median
    double scale = 1.5;   // resize

    std::string name() const {
        char buf[48];
        switch (kind) {
            case ManipKind::Blur:
                std::snprintf(buf, sizeof buf, "blur_%.2f", sigma);
                return buf;
            case ManipKind::Jpeg:
                std::snprintf(buf, sizeof buf, "jpeg_q%d", quality);
                return buf;
            case ManipKind::Median:
                std::snprintf(buf, sizeof buf, "median_%dx%d", kernel, kernel);
                return buf;
            case ManipKind::Resize:
                std::snprintf(buf, sizeof buf, "resize_%.3f", scale);
                return buf;
        }
        return "unknown";
    }
};

// Applies the manipulation, preserving patch dimensions. Resize upscales and
// center-crops back, so it requires scale >= 1 here.
inline ImagePatch apply_manipulation(const ImagePatch& x, const ManipulationSpec& spec) {
    switch (spec.kind) {
        case ManipKind::Blur:
            return gaussian_blur(x, spec.sigma);
        case ManipKind::Jpeg:
            return jpeg_roundtrip(x, spec.quality);
        case ManipKind::Median:
            return median_filter(x, spec.kernel);
        case ManipKind::Resize: {
            if (spec.scale < 1.0)
                throw std::invalid_argument(
                    "apply_manipulation: resize scale must be >= 1 to crop back");
            ImagePatch big = resize(x, spec.scale);
            return center_crop(big, x.width, x.height);
        }
    }
    throw std::invalid_argument("apply_manipulation: unknown kind");
}

// The eight detection tasks: easy and challenging settings per family.
inline std::vector<ManipulationSpec> standard_tasks() {
    std::vector<ManipulationSpec> v;
    v.push_back({ManipKind::Blur, 1.10, 0, 0, 0.0});
    v.push_back({ManipKind::Jpeg, 0.0, 70, 0, 0.0});
    v.push_back({ManipKind::Median, 0.0, 0, 7, 0.0});
    v.push_back({ManipKind::Resize, 0.0, 0, 0, 1.5});
    v.push_back({ManipKind::Blur, 0.50, 0, 0, 0.0});
    v.push_back({ManipKind::Jpeg, 0.0, 90, 0, 0.0});
    v.push_back({ManipKind::Median, 0.0, 0, 3, 0.0});
    v.push_back({ManipKind::Resize, 0.0, 0, 0, 1.01});
    return v;
}

}  // namespace cfbench
