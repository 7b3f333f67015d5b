// Minimal sequential network engine: forward, exact reverse-mode gradients,
// SGD with momentum, the constrained high-pass first-layer projection, and
// a versioned binary model format.
//
// Conventions that make runs bit-reproducible: max-pool and hardmax break
// ties toward the lowest index, relu uses subgradient 0 at exactly 0, and
// all accumulation orders are fixed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "cfbench/core.hpp"
#include "cfbench/tensor.hpp"

namespace cfbench {

enum class LayerKind : std::uint32_t {
    Conv2d = 0,
    MaxPool = 1,
    GlobalAvgPool = 2,
    Relu = 3,
    FullyConnected = 4,
    SoftmaxChannels = 5,
    HardmaxChannels = 6,
    ResidualBlock = 7,
};

enum class LossKind : std::uint32_t { SoftmaxCrossEntropy = 0, Hinge = 1 };

struct Layer {
    LayerKind kind = LayerKind::Relu;
    // conv2d / residual block geometry
    int in_ch = 0, out_ch = 0, kh = 0, kw = 0, stride = 1, pad = 0;
    // pooling geometry
    int pool = 2, pool_stride = 2;
    // fully connected geometry
    int fc_in = 0, fc_out = 0;
    // softmax sharpness
    double temperature = 1.0;
    // parameters; residual block uses (w,b) and (w2,b2) for its two convs
    std::vector<double> w, b, w2, b2;

    static Layer conv2d(int in_ch, int out_ch, int kh, int kw, int stride = 1, int pad = 0) {
        Layer l;
        l.kind = LayerKind::Conv2d;
        l.in_ch = in_ch;
        l.out_ch = out_ch;
        l.kh = kh;
        l.kw = kw;
        l.stride = stride;
        l.pad = pad;
        l.w.assign(static_cast<std::size_t>(out_ch) * in_ch * kh * kw, 0.0);
        l.b.assign(static_cast<std::size_t>(out_ch), 0.0);
        return l;
    }
    static Layer maxpool(int size, int stride = 0) {
        Layer l;
        l.kind = LayerKind::MaxPool;
        l.pool = size;
        l.pool_stride = stride > 0 ? stride : size;
        return l;
    }
    static Layer global_avgpool() {
        Layer l;
        l.kind = LayerKind::GlobalAvgPool;
        return l;
    }
    static Layer relu() { return Layer{}; }
    static Layer fully_connected(int in, int out) {
        Layer l;
        l.kind = LayerKind::FullyConnected;
        l.fc_in = in;
        l.fc_out = out;
        l.w.assign(static_cast<std::size_t>(in) * out, 0.0);
        l.b.assign(static_cast<std::size_t>(out), 0.0);
        return l;
    }
    static Layer softmax_channels(double temperature = 1.0) {
        Layer l;
        l.kind = LayerKind::SoftmaxChannels;
        l.temperature = temperature;
        return l;
    }
    static Layer hardmax_channels() {
        Layer l;
        l.kind = LayerKind::HardmaxChannels;
        return l;
    }
    // two same-padded convs with a relu between, plus identity skip
    static Layer residual_block(int ch, int k = 3) {
        Layer l;
        l.kind = LayerKind::ResidualBlock;
        l.in_ch = ch;
        l.out_ch = ch;
        l.kh = k;
        l.kw = k;
        l.stride = 1;
        l.pad = k / 2;
        l.w.assign(static_cast<std::size_t>(ch) * ch * k * k, 0.0);
        l.b.assign(static_cast<std::size_t>(ch), 0.0);
        l.w2.assign(static_cast<std::size_t>(ch) * ch * k * k, 0.0);
        l.b2.assign(static_cast<std::size_t>(ch), 0.0);
        return l;
    }
};

struct Network {
    std::vector<Layer> layers;
    LossKind loss = LossKind::SoftmaxCrossEntropy;
};

// Per-layer forward context kept for the backward pass.
struct LayerCache {
    Tensor in;
    Tensor aux1;               // softmax output / residual conv1 pre-activation
    Tensor aux2;               // residual relu output
    std::vector<std::int32_t> idx;  // maxpool argmax routes
};

namespace netdetail {

inline void conv2d_raw(const double* in, int ic_n, int ih, int iw, const double* w,
                       const double* bias, int oc_n, int kh, int kw, int stride, int pad,
                       double* out, int oh, int ow) {
    for (int oc = 0; oc < oc_n; ++oc) {
        double* oplane = out + static_cast<std::size_t>(oc) * oh * ow;
        double bv = bias ? bias[oc] : 0.0;
        for (int i = 0; i < oh * ow; ++i) oplane[i] = bv;
        for (int ic = 0; ic < ic_n; ++ic) {
            const double* iplane = in + static_cast<std::size_t>(ic) * ih * iw;
            const double* wbase =
                w + ((static_cast<std::size_t>(oc) * ic_n + ic) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double wv = wbase[static_cast<std::size_t>(ky) * kw + kx];
                    if (wv == 0.0) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= ih) continue;
                        const double* irow = iplane + static_cast<std::size_t>(iy) * iw;
                        double* orow = oplane + static_cast<std::size_t>(oy) * ow;
                        if (stride == 1) {
                            int ox0 = std::max(0, pad - kx);
                            int ox1 = std::min(ow, iw + pad - kx);
                            const double* ib = irow - pad + kx;
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * ib[ox];
                        } else {
                            for (int ox = 0; ox < ow; ++ox) {
                                int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= iw) continue;
                                orow[ox] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

inline void conv2d_out_dims(const Layer& l, int ih, int iw, int& oh, int& ow) {
    oh = (ih + 2 * l.pad - l.kh) / l.stride + 1;
    ow = (iw + 2 * l.pad - l.kw) / l.stride + 1;
}

}  // namespace netdetail

// Gradients for one layer; vectors sized like the layer's parameters.
struct LayerGrads {
    std::vector<double> w, b, w2, b2;
};

struct NetGrads {
    std::vector<LayerGrads> layers;
};

inline NetGrads zero_grads(const Network& net) {
    NetGrads g;
    g.layers.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        g.layers[i].w.assign(net.layers[i].w.size(), 0.0);
        g.layers[i].b.assign(net.layers[i].b.size(), 0.0);
        g.layers[i].w2.assign(net.layers[i].w2.size(), 0.0);
        g.layers[i].b2.assign(net.layers[i].b2.size(), 0.0);
    }
    return g;
}

inline void accumulate_grads(NetGrads& into, const NetGrads& from) {
    for (std::size_t i = 0; i < into.layers.size(); ++i) {
        auto add = [](std::vector<double>& a, const std::vector<double>& b) {
            for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
        };
        add(into.layers[i].w, from.layers[i].w);
        add(into.layers[i].b, from.layers[i].b);
        add(into.layers[i].w2, from.layers[i].w2);
        add(into.layers[i].b2, from.layers[i].b2);
    }
}

inline void scale_grads(NetGrads& g, double s) {
    for (auto& l : g.layers) {
        for (double& v : l.w) v *= s;
        for (double& v : l.b) v *= s;
        for (double& v : l.w2) v *= s;
        for (double& v : l.b2) v *= s;
    }
}

// ---------------------------------------------------------------------------
// Forward

inline Tensor layer_forward(const Layer& l, const Tensor& x, LayerCache* cache,
                            std::size_t layer_index) {
    auto bad = [&](const char* why) {
        throw std::invalid_argument("layer " + std::to_string(layer_index) + " (" +
                                    std::to_string(static_cast<int>(l.kind)) + "): " + why +
                                    ", input " + x.shape_str());
    };
    switch (l.kind) {
        case LayerKind::Conv2d: {
            if (x.rank() != 3 || x.shape[0] != l.in_ch) bad("channel mismatch");
            int oh, ow;
            netdetail::conv2d_out_dims(l, x.shape[1], x.shape[2], oh, ow);
            if (oh <= 0 || ow <= 0) bad("kernel larger than padded input");
            Tensor y({l.out_ch, oh, ow});
            netdetail::conv2d_raw(x.v.data(), l.in_ch, x.shape[1], x.shape[2], l.w.data(),
                                  l.b.data(), l.out_ch, l.kh, l.kw, l.stride, l.pad,
                                  y.v.data(), oh, ow);
            if (cache) cache->in = x;
            return y;
        }
        case LayerKind::MaxPool: {
            if (x.rank() != 3) bad("want rank-3 input");
            int c = x.shape[0], ih = x.shape[1], iw = x.shape[2];
            int oh = (ih - l.pool) / l.pool_stride + 1;
            int ow = (iw - l.pool) / l.pool_stride + 1;
            if (oh <= 0 || ow <= 0) bad("pool window larger than input");
            Tensor y({c, oh, ow});
            if (cache) cache->idx.assign(y.numel(), 0);
            for (int ch = 0; ch < c; ++ch)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double best = -std::numeric_limits<double>::infinity();
                        int best_idx = -1;
                        for (int ky = 0; ky < l.pool; ++ky)
                            for (int kx = 0; kx < l.pool; ++kx) {
                                int iy = oy * l.pool_stride + ky;
                                int ix = ox * l.pool_stride + kx;
                                double v = x.at(ch, iy, ix);
                                if (v > best) {  // strict: ties keep lowest index
                                    best = v;
                                    best_idx = (ch * ih + iy) * iw + ix;
                                }
                            }
                        y.at(ch, oy, ox) = best;
                        if (cache)
                            cache->idx[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] =
                                best_idx;
                    }
            if (cache) cache->in = x;
            return y;
        }
        case LayerKind::GlobalAvgPool: {
            if (x.rank() != 3) bad("want rank-3 input");
            int c = x.shape[0];
            double denom = static_cast<double>(x.shape[1]) * x.shape[2];
            Tensor y({c});
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                const double* plane =
                    x.v.data() + static_cast<std::size_t>(ch) * x.shape[1] * x.shape[2];
                for (int i = 0; i < x.shape[1] * x.shape[2]; ++i) acc += plane[i];
                y.v[static_cast<std::size_t>(ch)] = acc / denom;
            }
            if (cache) cache->in = x;
            return y;
        }
        case LayerKind::Relu: {
            Tensor y = x;
            for (double& v : y.v)
                if (v < 0.0) v = 0.0;
            if (cache) cache->in = x;
            return y;
        }
        case LayerKind::FullyConnected: {
            if (static_cast<int>(x.numel()) != l.fc_in) bad("flattened size mismatch");
            Tensor y({l.fc_out});
            for (int o = 0; o < l.fc_out; ++o) {
                double acc = l.b[static_cast<std::size_t>(o)];
                const double* wrow = l.w.data() + static_cast<std::size_t>(o) * l.fc_in;
                for (int i = 0; i < l.fc_in; ++i) acc += wrow[i] * x.v[static_cast<std::size_t>(i)];
                y.v[static_cast<std::size_t>(o)] = acc;
            }
            if (cache) cache->in = x;
            return y;
        }
        case LayerKind::SoftmaxChannels: {
            Tensor y = x;
            const double invt = 1.0 / l.temperature;
            auto softmax_span = [&](double* v, int n, std::size_t sstride) {
                double m = -std::numeric_limits<double>::infinity();
                for (int i = 0; i < n; ++i) m = std::max(m, v[static_cast<std::size_t>(i) * sstride]);
                double z = 0.0;
                for (int i = 0; i < n; ++i) {
                    double e = std::exp((v[static_cast<std::size_t>(i) * sstride] - m) * invt);
                    v[static_cast<std::size_t>(i) * sstride] = e;
                    z += e;
                }
                for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * sstride] /= z;
            };
            if (x.rank() == 3) {
                int c = x.shape[0];
                std::size_t plane = static_cast<std::size_t>(x.shape[1]) * x.shape[2];
                for (std::size_t p = 0; p < plane; ++p) softmax_span(y.v.data() + p, c, plane);
            } else {
                softmax_span(y.v.data(), static_cast<int>(y.numel()), 1);
            }
            if (cache) {
                cache->in = x;
                cache->aux1 = y;
            }
            return y;
        }
        case LayerKind::HardmaxChannels: {
            Tensor y = x;
            auto hardmax_span = [&](double* v, int n, std::size_t sstride) {
                int best = 0;
                for (int i = 1; i < n; ++i)
                    if (v[static_cast<std::size_t>(i) * sstride] >
                        v[static_cast<std::size_t>(best) * sstride])
                        best = i;
                for (int i = 0; i < n; ++i)
                    v[static_cast<std::size_t>(i) * sstride] = i == best ? 1.0 : 0.0;
            };
            if (x.rank() == 3) {
                int c = x.shape[0];
                std::size_t plane = static_cast<std::size_t>(x.shape[1]) * x.shape[2];
                for (std::size_t p = 0; p < plane; ++p) hardmax_span(y.v.data() + p, c, plane);
            } else {
                hardmax_span(y.v.data(), static_cast<int>(y.numel()), 1);
            }
            if (cache) cache->in = x;
            return y;
        }
        case LayerKind::ResidualBlock: {
            if (x.rank() != 3 || x.shape[0] != l.in_ch) bad("channel mismatch");
            int oh, ow;
            netdetail::conv2d_out_dims(l, x.shape[1], x.shape[2], oh, ow);
            if (oh != x.shape[1] || ow != x.shape[2]) bad("residual block must preserve dims");
            Tensor a({l.out_ch, oh, ow});
            netdetail::conv2d_raw(x.v.data(), l.in_ch, x.shape[1], x.shape[2], l.w.data(),
                                  l.b.data(), l.out_ch, l.kh, l.kw, 1, l.pad, a.v.data(), oh,
                                  ow);
            Tensor r = a;
            for (double& v : r.v)
                if (v < 0.0) v = 0.0;
            Tensor y({l.out_ch, oh, ow});
            netdetail::conv2d_raw(r.v.data(), l.out_ch, oh, ow, l.w2.data(), l.b2.data(),
                                  l.out_ch, l.kh, l.kw, 1, l.pad, y.v.data(), oh, ow);
            for (std::size_t i = 0; i < y.numel(); ++i) y.v[i] += x.v[i];
            if (cache) {
                cache->in = x;
                cache->aux1 = a;
                cache->aux2 = r;
            }
            return y;
        }
    }
    bad("unknown layer kind");
    return {};
}

inline Tensor forward(const Network& net, const Tensor& x,
                      std::vector<LayerCache>* caches = nullptr) {
    if (caches) caches->assign(net.layers.size(), {});
    Tensor cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        cur = layer_forward(net.layers[i], cur, caches ? &(*caches)[i] : nullptr, i);
    return cur;
}

// ---------------------------------------------------------------------------
// Backward

namespace netdetail {

inline void conv2d_backward(const Layer& l, const Tensor& in, const Tensor& dout,
                            const std::vector<double>& w, std::vector<double>* dw,
                            std::vector<double>* db, Tensor* din) {
    int ih = in.shape[1], iw = in.shape[2];
    int oh = dout.shape[1], ow = dout.shape[2];
    for (int oc = 0; oc < dout.shape[0]; ++oc) {
        const double* dplane = dout.v.data() + static_cast<std::size_t>(oc) * oh * ow;
        if (db) {
            double acc = 0.0;
            for (int i = 0; i < oh * ow; ++i) acc += dplane[i];
            (*db)[static_cast<std::size_t>(oc)] += acc;
        }
        for (int ic = 0; ic < in.shape[0]; ++ic) {
            const double* iplane = in.v.data() + static_cast<std::size_t>(ic) * ih * iw;
            double* diplane =
                din ? din->v.data() + static_cast<std::size_t>(ic) * ih * iw : nullptr;
            std::size_t wbase = ((static_cast<std::size_t>(oc) * in.shape[0] + ic) * l.kh) * l.kw;
            for (int ky = 0; ky < l.kh; ++ky)
                for (int kx = 0; kx < l.kw; ++kx) {
                    double wv = w[wbase + static_cast<std::size_t>(ky) * l.kw + kx];
                    double dwacc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * l.stride - l.pad + ky;
                        if (iy < 0 || iy >= ih) continue;
                        const double* irow = iplane + static_cast<std::size_t>(iy) * iw;
                        double* dirow =
                            diplane ? diplane + static_cast<std::size_t>(iy) * iw : nullptr;
                        const double* drow = dplane + static_cast<std::size_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            int ix = ox * l.stride - l.pad + kx;
                            if (ix < 0 || ix >= iw) continue;
                            double d = drow[ox];
                            dwacc += d * irow[ix];
                            if (dirow) dirow[ix] += d * wv;
                        }
                    }
                    if (dw) (*dw)[wbase + static_cast<std::size_t>(ky) * l.kw + kx] += dwacc;
                }
        }
    }
}

}  // namespace netdetail

inline Tensor layer_backward(const Layer& l, const LayerCache& cache, const Tensor& dout,
                             LayerGrads* grads) {
    switch (l.kind) {
        case LayerKind::Conv2d: {
            Tensor din(cache.in.shape);
            netdetail::conv2d_backward(l, cache.in, dout, l.w, grads ? &grads->w : nullptr,
                                       grads ? &grads->b : nullptr, &din);
            return din;
        }
        case LayerKind::MaxPool: {
            Tensor din(cache.in.shape);
            for (std::size_t i = 0; i < dout.numel(); ++i)
                din.v[static_cast<std::size_t>(cache.idx[i])] += dout.v[i];
            return din;
        }
        case LayerKind::GlobalAvgPool: {
            Tensor din(cache.in.shape);
            double inv = 1.0 / (static_cast<double>(cache.in.shape[1]) * cache.in.shape[2]);
            for (int c = 0; c < cache.in.shape[0]; ++c) {
                double g = dout.v[static_cast<std::size_t>(c)] * inv;
                double* plane = din.v.data() +
                                static_cast<std::size_t>(c) * cache.in.shape[1] * cache.in.shape[2];
                for (int i = 0; i < cache.in.shape[1] * cache.in.shape[2]; ++i) plane[i] = g;
            }
            return din;
        }
        case LayerKind::Relu: {
            Tensor din = dout;
            for (std::size_t i = 0; i < din.numel(); ++i)
                if (cache.in.v[i] <= 0.0) din.v[i] = 0.0;
            return din;
        }
        case LayerKind::FullyConnected: {
            Tensor din(cache.in.shape);
            for (int o = 0; o < l.fc_out; ++o) {
                double d = dout.v[static_cast<std::size_t>(o)];
                const double* wrow = l.w.data() + static_cast<std::size_t>(o) * l.fc_in;
                if (grads) {
                    grads->b[static_cast<std::size_t>(o)] += d;
                    double* gw = grads->w.data() + static_cast<std::size_t>(o) * l.fc_in;
                    for (int i = 0; i < l.fc_in; ++i) gw[i] += d * cache.in.v[static_cast<std::size_t>(i)];
                }
                for (int i = 0; i < l.fc_in; ++i) din.v[static_cast<std::size_t>(i)] += d * wrow[i];
            }
            return din;
        }
        case LayerKind::SoftmaxChannels: {
            const Tensor& y = cache.aux1;
            Tensor din(cache.in.shape);
            const double invt = 1.0 / l.temperature;
            auto span_bwd = [&](const double* yv, const double* dv, double* out, int n,
                                std::size_t sstride) {
                double dot = 0.0;
                for (int i = 0; i < n; ++i)
                    dot += yv[static_cast<std::size_t>(i) * sstride] *
                           dv[static_cast<std::size_t>(i) * sstride];
                for (int i = 0; i < n; ++i) {
                    std::size_t k = static_cast<std::size_t>(i) * sstride;
                    out[k] = invt * yv[k] * (dv[k] - dot);
                }
            };
            if (cache.in.rank() == 3) {
                int c = cache.in.shape[0];
                std::size_t plane =
                    static_cast<std::size_t>(cache.in.shape[1]) * cache.in.shape[2];
                for (std::size_t p = 0; p < plane; ++p)
                    span_bwd(y.v.data() + p, dout.v.data() + p, din.v.data() + p, c, plane);
            } else {
                span_bwd(y.v.data(), dout.v.data(), din.v.data(),
                         static_cast<int>(y.numel()), 1);
            }
            return din;
        }
        case LayerKind::HardmaxChannels:
            throw UnsupportedOperation(
                "backward through hardmax is undefined; use the softmax variant");
        case LayerKind::ResidualBlock: {
            Tensor dr(cache.aux2.shape);
            netdetail::conv2d_backward(l, cache.aux2, dout, l.w2, grads ? &grads->w2 : nullptr,
                                       grads ? &grads->b2 : nullptr, &dr);
            for (std::size_t i = 0; i < dr.numel(); ++i)
                if (cache.aux1.v[i] <= 0.0) dr.v[i] = 0.0;
            Tensor din(cache.in.shape);
            netdetail::conv2d_backward(l, cache.in, dr, l.w, grads ? &grads->w : nullptr,
                                       grads ? &grads->b : nullptr, &din);
            for (std::size_t i = 0; i < din.numel(); ++i) din.v[i] += dout.v[i];
            return din;
        }
    }
    throw std::invalid_argument("layer_backward: unknown layer kind");
}

// Full reverse pass; returns the input gradient, fills parameter gradients.
inline Tensor backward(const Network& net, const std::vector<LayerCache>& caches,
                       const Tensor& upstream, NetGrads* grads) {
    Tensor cur = upstream;
    for (std::size_t i = net.layers.size(); i-- > 0;)
        cur = layer_backward(net.layers[i], caches[i], cur,
                             grads ? &grads->layers[i] : nullptr);
    return cur;
}

// ---------------------------------------------------------------------------
// Losses

inline double loss_and_grad(LossKind kind, const Tensor& out, int label, Tensor* dout) {
    if (dout) *dout = Tensor(out.shape);
    switch (kind) {
        case LossKind::SoftmaxCrossEntropy: {
            int n = static_cast<int>(out.numel());
            if (label < 0 || label >= n)
                throw std::invalid_argument("loss: label out of range");
            double m = out.v[0];
            for (double v : out.v) m = std::max(m, v);
            double z = 0.0;
            for (double v : out.v) z += std::exp(v - m);
            double logz = std::log(z) + m;
            double loss = logz - out.v[static_cast<std::size_t>(label)];
            if (dout)
                for (int i = 0; i < n; ++i)
                    dout->v[static_cast<std::size_t>(i)] =
                        std::exp(out.v[static_cast<std::size_t>(i)] - logz) -
                        (i == label ? 1.0 : 0.0);
            return loss;
        }
        case LossKind::Hinge: {
            double y = label > 0 ? 1.0 : -1.0;
            double s;
            if (out.numel() == 1)
                s = out.v[0];
            else if (out.numel() == 2)
                s = out.v[1] - out.v[0];
            else
                throw std::invalid_argument("hinge loss wants 1 or 2 outputs");
            double margin = 1.0 - y * s;
            if (margin <= 0.0) return 0.0;
            if (dout) {
                if (out.numel() == 1) {
                    dout->v[0] = -y;
                } else {
                    dout->v[0] = y;
                    dout->v[1] = -y;
                }
            }
            return margin;
        }
    }
    throw std::invalid_argument("unknown loss kind");
}

// Gradient of the loss at (x, label) with respect to every input element.
inline Tensor input_gradient(const Network& net, const Tensor& x, int label) {
    std::vector<LayerCache> caches;
    Tensor out = forward(net, x, &caches);
    Tensor dout;
    loss_and_grad(net.loss, out, label, &dout);
    return backward(net, caches, dout, nullptr);
}

// ---------------------------------------------------------------------------
// SGD with classical momentum

struct SgdState {
    NetGrads velocity;
};

inline void sgd_step(Network& net, const NetGrads& grads, double lr, double momentum,
                     SgdState& state) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
    if (state.velocity.layers.empty()) state.velocity = zero_grads(net);
    auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!std::isfinite(g[i])) throw TrainingDiverged("non-finite gradient");
            v[i] = momentum * v[i] - lr * g[i];
            p[i] += v[i];
        }
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        update(net.layers[i].w, grads.layers[i].w, state.velocity.layers[i].w);
        update(net.layers[i].b, grads.layers[i].b, state.velocity.layers[i].b);
        update(net.layers[i].w2, grads.layers[i].w2, state.velocity.layers[i].w2);
        update(net.layers[i].b2, grads.layers[i].b2, state.velocity.layers[i].b2);
    }
}

// ---------------------------------------------------------------------------
// Constrained high-pass first layer: center weight pinned to -1, off-center
// weights renormalized to unit sum. Applied after every update step.

inline void project_constrained_kernel(std::vector<double>& k, int kh, int kw) {
    if (static_cast<int>(k.size()) != kh * kw || kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("project_constrained_kernel: want odd kernel");
    std::size_t center = static_cast<std::size_t>(kh / 2) * kw + kw / 2;
    double sum = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i)
        if (i != center) sum += k[i];
    if (std::abs(sum) < 1e-12)
        throw DegenerateKernel("off-center weights sum to zero; reinitialize this filter");
    for (std::size_t i = 0; i < k.size(); ++i)
        if (i != center) k[i] /= sum;
    k[center] = -1.0;
}

// Projects every (out_ch, in_ch) kernel slice of a conv layer.
inline void project_constrained_layer(Layer& conv) {
    if (conv.kind != LayerKind::Conv2d)
        throw std::invalid_argument("project_constrained_layer: not a conv layer");
    const int ksz = conv.kh * conv.kw;
    std::vector<double> k(static_cast<std::size_t>(ksz));
    for (int oc = 0; oc < conv.out_ch; ++oc)
        for (int ic = 0; ic < conv.in_ch; ++ic) {
            std::size_t base = (static_cast<std::size_t>(oc) * conv.in_ch + ic) *
                               static_cast<std::size_t>(ksz);
            std::copy(conv.w.begin() + static_cast<std::ptrdiff_t>(base),
                      conv.w.begin() + static_cast<std::ptrdiff_t>(base + ksz), k.begin());
            project_constrained_kernel(k, conv.kh, conv.kw);
            std::copy(k.begin(), k.end(), conv.w.begin() + static_cast<std::ptrdiff_t>(base));
        }
}

// ---------------------------------------------------------------------------
// Initialization

inline void init_he_normal(Layer& l, Rng& rng) {
    auto fill = [&](std::vector<double>& w, int fan_in) {
        double s = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : w) v = s * rng.normal();
    };
    switch (l.kind) {
        case LayerKind::Conv2d:
            fill(l.w, l.in_ch * l.kh * l.kw);
            break;
        case LayerKind::ResidualBlock:
            fill(l.w, l.in_ch * l.kh * l.kw);
            fill(l.w2, l.out_ch * l.kh * l.kw);
            break;
        case LayerKind::FullyConnected:
            fill(l.w, l.fc_in);
            break;
        default:
            break;
    }
}

// ---------------------------------------------------------------------------
// Serialization: magic, loss, layer list, parameter blobs. Little-endian
// 64-bit floats; integers are little-endian 32/64-bit.

namespace netdetail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}
inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    os.write(b, 8);
}
inline void put_blob(std::ostream& os, const std::vector<double>& v) {
    std::uint64_t n = v.size();
    char b[8];
    std::memcpy(b, &n, 8);
    os.write(b, 8);
    if (n) os.write(reinterpret_cast<const char*>(v.data()),
                    static_cast<std::streamsize>(n * 8));
}
inline std::uint32_t get_u32(std::istream& is) {
    char b[4];
    is.read(b, 4);
    if (!is) throw ParseError("model: truncated", static_cast<std::size_t>(is.tellg()));
    std::uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}
inline std::int32_t get_i32(std::istream& is) { return static_cast<std::int32_t>(get_u32(is)); }
inline double get_f64(std::istream& is) {
    char b[8];
    is.read(b, 8);
    if (!is) throw ParseError("model: truncated", static_cast<std::size_t>(is.tellg()));
    double v;
    std::memcpy(&v, b, 8);
    return v;
}
inline std::vector<double> get_blob(std::istream& is) {
    char b[8];
    is.read(b, 8);
    if (!is) throw ParseError("model: truncated", static_cast<std::size_t>(is.tellg()));
    std::uint64_t n;
    std::memcpy(&n, b, 8);
    if (n > (1ull << 32)) throw ParseError("model: absurd blob size", static_cast<std::size_t>(is.tellg()));
    std::vector<double> v(n);
    if (n) {
        is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
        if (!is) throw ParseError("model: truncated blob", static_cast<std::size_t>(is.tellg()));
    }
    return v;
}

}  // namespace netdetail

inline constexpr char kNetMagic[8] = {'C', 'F', 'B', 'N', 'E', 'T', '1', '\n'};

inline void save_network(std::ostream& os, const Network& net) {
    os.write(kNetMagic, 8);
    netdetail::put_u32(os, static_cast<std::uint32_t>(net.loss));
    netdetail::put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& l : net.layers) {
        netdetail::put_u32(os, static_cast<std::uint32_t>(l.kind));
        for (int f : {l.in_ch, l.out_ch, l.kh, l.kw, l.stride, l.pad, l.pool, l.pool_stride,
                      l.fc_in, l.fc_out})
            netdetail::put_i32(os, f);
        netdetail::put_f64(os, l.temperature);
        netdetail::put_blob(os, l.w);
        netdetail::put_blob(os, l.b);
        netdetail::put_blob(os, l.w2);
        netdetail::put_blob(os, l.b2);
    }
}

inline Network load_network(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kNetMagic, 8) != 0)
        throw ParseError("model: bad magic", 0);
    Network net;
    net.loss = static_cast<LossKind>(netdetail::get_u32(is));
    std::uint32_t n = netdetail::get_u32(is);
    net.layers.resize(n);
    for (Layer& l : net.layers) {
        l.kind = static_cast<LayerKind>(netdetail::get_u32(is));
        l.in_ch = netdetail::get_i32(is);
        l.out_ch = netdetail::get_i32(is);
        l.kh = netdetail::get_i32(is);
        l.kw = netdetail::get_i32(is);
        l.stride = netdetail::get_i32(is);
        l.pad = netdetail::get_i32(is);
        l.pool = netdetail::get_i32(is);
        l.pool_stride = netdetail::get_i32(is);
        l.fc_in = netdetail::get_i32(is);
        l.fc_out = netdetail::get_i32(is);
        l.temperature = netdetail::get_f64(is);
        l.w = netdetail::get_blob(is);
        l.b = netdetail::get_blob(is);
        l.w2 = netdetail::get_blob(is);
        l.b2 = netdetail::get_blob(is);
    }
    return net;
}

}  // namespace cfbench
