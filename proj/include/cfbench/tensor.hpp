// Dense row-major double tensor; the only numeric container the network
// engine uses. Images are (channels, height, width); vectors are (n).
#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfbench/image.hpp"

namespace cfbench {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), 0.0);
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive extent");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    // (c, y, x) accessor for rank-3 tensors
    double& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }
};

// Raw gray levels as doubles, shape (1, H, W).
inline Tensor tensor_from_patch(const ImagePatch& p) {
    Tensor t({1, p.height, p.width});
    for (std::size_t i = 0; i < p.size(); ++i) t.v[i] = static_cast<double>(p.pixels[i]);
    return t;
}

inline ImagePatch patch_from_tensor(const Tensor& t) {
    if (t.rank() != 3 || t.shape[0] != 1)
        throw std::invalid_argument("patch_from_tensor: want shape (1,H,W)");
    ImagePatch p(t.shape[2], t.shape[1]);
    for (std::size_t i = 0; i < t.numel(); ++i)
        p.pixels[i] = static_cast<std::uint8_t>(clamp_u8(lround_half_away(t.v[i])));
    return p;
}

}  // namespace cfbench
