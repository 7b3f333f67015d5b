// The three desk-scale detectors under one scoring contract: linear
// classification on residual co-occurrence features, the network that
// computes those features exactly (hard mode) or differentiably (soft
// mode), and the constrained-first-layer CNN. Positive score = manipulated.
#pragma once

#include <cstdio>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cfbench/core.hpp"
#include "cfbench/image.hpp"
#include "cfbench/net.hpp"
#include "cfbench/spam.hpp"
#include "cfbench/tensor.hpp"

namespace cfbench {

enum class DetectorKind : std::uint32_t {
    SpamLinear = 0,
    CozzHard = 1,
    CozzSoft = 2,
    BayarNet = 3,
};

inline const char* detector_kind_name(DetectorKind k) {
    switch (k) {
        case DetectorKind::SpamLinear: return "spam_linear";
        case DetectorKind::CozzHard: return "cozz_net_hard";
        case DetectorKind::CozzSoft: return "cozz_net_soft";
        case DetectorKind::BayarNet: return "bayar_net";
    }
    return "unknown";
}

struct TrainSet {
    std::vector<ImagePatch> patches;
    std::vector<int> labels;      // 0 pristine, 1 manipulated
    std::vector<int> device_ids;  // provenance, used by split assertions
};

// ---------------------------------------------------------------------------
// Payloads

struct LinearModel {
    SpamConfig cfg;
    std::vector<double> w;
    double b = 0.0;
};

// Two per-direction conv stacks ending at global average pooling (each
// yields the bins^order raw histogram), plus a final linear read-out with
// the symmetrization folded into its weights.
struct CozzModel {
    SpamConfig cfg;  // normalization must be L1 (pooling yields L1 natively)
    bool hard = true;
    double temperature = 0.1;
    Network horiz, vert;
    std::vector<double> fc_w;  // 2 * raw_dim entries, h block then v block
    double fc_b = 0.0;
};

struct BayarModel {
    Network net;
    // fixed affine input map applied before the network
    double in_shift = 128.0;
    double in_scale = 32.0;
};

struct DetectorModel {
    DetectorKind kind = DetectorKind::SpamLinear;
    double threshold = 0.0;  // label = score > threshold
    std::string id = "spam_linear";
    std::variant<LinearModel, CozzModel, BayarModel> payload;
};

// ---------------------------------------------------------------------------
// SPAM-network construction

namespace cozzdetail {

// residual taps (-1, 3, -3, 1) as a 1x4 (or 4x1) valid convolution
inline Layer residual_conv(ResidualDirection dir) {
    Layer l = dir == ResidualDirection::Horizontal ? Layer::conv2d(1, 1, 1, 4)
                                                   : Layer::conv2d(1, 1, 4, 1);
    l.w = {-1.0, 3.0, -3.0, 1.0};
    return l;
}

// 1x1 conv whose channel argmax equals clamp(round(r/q), -T, T): channel c
// (center value c-T) scores (c-T) * r/q - (c-T)^2 / 2, a concave-in-center
// score maximized by the nearest quantization center.
inline Layer quantizer_conv(double q, int T) {
    int bins = 2 * T + 1;
    Layer l = Layer::conv2d(1, bins, 1, 1);
    for (int c = 0; c < bins; ++c) {
        double center = static_cast<double>(c - T);
        l.w[static_cast<std::size_t>(c)] = center / q;
        l.b[static_cast<std::size_t>(c)] = -0.5 * center * center;
    }
    return l;
}

// bins -> bins^order conv matching each co-occurrence tuple against the
// one-hot channel planes; filter t scores the number of positions agreeing
// with tuple t (max `order`, attained uniquely at the observed tuple).
inline Layer pattern_conv(int T, int order, ResidualDirection dir) {
    int bins = 2 * T + 1;
    int dim = 1;
    for (int i = 0; i < order; ++i) dim *= bins;
    Layer l = dir == ResidualDirection::Horizontal ? Layer::conv2d(bins, dim, 1, order)
                                                   : Layer::conv2d(bins, dim, order, 1);
    for (int t = 0; t < dim; ++t) {
        int rest = t;
        for (int k = 0; k < order; ++k) {
            int digit = rest % bins;
            rest /= bins;
            // weight index ((t*bins + digit)*kh + ky)*kw + kx with the
            // nonzero tap at scan position k
            std::size_t pos = dir == ResidualDirection::Horizontal
                                  ? ((static_cast<std::size_t>(t) * bins + digit) * 1 + 0) *
                                            static_cast<std::size_t>(order) +
                                        static_cast<std::size_t>(k)
                                  : ((static_cast<std::size_t>(t) * bins + digit) *
                                         static_cast<std::size_t>(order) +
                                     static_cast<std::size_t>(k)) *
                                            1 +
                                        0;
            l.w[pos] = 1.0;
        }
    }
    return l;
}

inline Network direction_stack(const SpamConfig& cfg, ResidualDirection dir, bool hard,
                               double temperature) {
    Network net;
    net.layers.push_back(residual_conv(dir));
    net.layers.push_back(quantizer_conv(cfg.q, cfg.T));
    net.layers.push_back(hard ? Layer::hardmax_channels()
                              : Layer::softmax_channels(temperature));
    net.layers.push_back(pattern_conv(cfg.T, cfg.cooc_order, dir));
    net.layers.push_back(hard ? Layer::hardmax_channels()
                              : Layer::softmax_channels(temperature));
    net.layers.push_back(Layer::global_avgpool());
    return net;
}

}  // namespace cozzdetail

// Builds the network detector from a linear model trained on L1-normalized
// features. The linear weights (symmetrized or raw) are folded into the
// read-out over raw pooled bins; per-direction L1 scaling makes the folding
// exact for any patch size.
inline DetectorModel build_cozznet(const LinearModel& linear, bool hard,
                                   double temperature = 0.1) {
    const SpamConfig& cfg = linear.cfg;
    if (cfg.normalization != FeatureNorm::L1)
        throw std::invalid_argument(
            "build_cozznet: linear stage must be trained on L1-normalized features");
    const int raw = cfg.raw_dim_per_direction();
    const int feat_dim = cfg.symmetrize ? 2 * symmetry_table(cfg.T, cfg.cooc_order).class_count
                                        : 2 * raw;
    if (static_cast<int>(linear.w.size()) != feat_dim)
        throw std::invalid_argument("build_cozznet: weight dimension mismatch");

    CozzModel m;
    m.cfg = cfg;
    m.hard = hard;
    m.temperature = temperature;
    m.horiz = cozzdetail::direction_stack(cfg, ResidualDirection::Horizontal, hard, temperature);
    m.vert = cozzdetail::direction_stack(cfg, ResidualDirection::Vertical, hard, temperature);
    m.fc_w.assign(static_cast<std::size_t>(2 * raw), 0.0);
    m.fc_b = linear.b;
    if (cfg.symmetrize) {
        const SymmetryTable& table = symmetry_table(cfg.T, cfg.cooc_order);
        for (int t = 0; t < raw; ++t) {
            int cls = table.class_of[static_cast<std::size_t>(t)];
            m.fc_w[static_cast<std::size_t>(t)] = linear.w[static_cast<std::size_t>(cls)];
            m.fc_w[static_cast<std::size_t>(raw + t)] =
                linear.w[static_cast<std::size_t>(table.class_count + cls)];
        }
    } else {
        for (int t = 0; t < 2 * raw; ++t)
            m.fc_w[static_cast<std::size_t>(t)] = linear.w[static_cast<std::size_t>(t)];
    }

    DetectorModel d;
    d.kind = hard ? DetectorKind::CozzHard : DetectorKind::CozzSoft;
    d.id = detector_kind_name(d.kind);
    d.payload = std::move(m);
    return d;
}

// Pooled per-direction histograms (the network's feature read-back).
inline std::pair<std::vector<double>, std::vector<double>> cozz_pooled_histograms(
    const CozzModel& m, const ImagePatch& x) {
    Tensor t = tensor_from_patch(x);
    Tensor ph = forward(m.horiz, t);
    Tensor pv = forward(m.vert, t);
    return {ph.v, pv.v};
}

// ---------------------------------------------------------------------------
// Scoring

inline double score_detector(const DetectorModel& d, const ImagePatch& x) {
    switch (d.kind) {
        case DetectorKind::SpamLinear: {
            const auto& m = std::get<LinearModel>(d.payload);
            SpamFeature f = extract_spam(x, m.cfg);
            if (f.values.size() != m.w.size())
                throw std::invalid_argument("score: feature/weight dimension mismatch");
            double s = m.b;
            for (std::size_t i = 0; i < m.w.size(); ++i) s += m.w[i] * f.values[i];
            return s;
        }
        case DetectorKind::CozzHard:
        case DetectorKind::CozzSoft: {
            const auto& m = std::get<CozzModel>(d.payload);
            auto [ph, pv] = cozz_pooled_histograms(m, x);
            double s = m.fc_b;
            const std::size_t raw = ph.size();
            for (std::size_t i = 0; i < raw; ++i) s += m.fc_w[i] * ph[i];
            for (std::size_t i = 0; i < raw; ++i) s += m.fc_w[raw + i] * pv[i];
            return s;
        }
        case DetectorKind::BayarNet: {
            const auto& m = std::get<BayarModel>(d.payload);
            Tensor t = tensor_from_patch(x);
            for (double& v : t.v) v = (v - m.in_shift) / m.in_scale;
            Tensor logits = forward(m.net, t);
            if (logits.numel() != 2)
                throw std::invalid_argument("score: expected 2 logits");
            return logits.v[1] - logits.v[0];
        }
    }
    throw std::invalid_argument("score: unknown detector kind");
}

inline bool detector_label(const DetectorModel& d, const ImagePatch& x) {
    return score_detector(d, x) > d.threshold;
}

inline bool detector_differentiable(const DetectorModel& d) {
    return d.kind == DetectorKind::CozzSoft || d.kind == DetectorKind::BayarNet;
}

// Score and its gradient with respect to raw gray levels, shape (1,H,W).
// Defined for the differentiable detectors only.
struct ScoreGrad {
    double score = 0.0;
    Tensor grad;
};

inline ScoreGrad detector_score_grad(const DetectorModel& d, const Tensor& raw_input) {
    ScoreGrad out;
    switch (d.kind) {
        case DetectorKind::CozzSoft: {
            const auto& m = std::get<CozzModel>(d.payload);
            std::vector<LayerCache> ch, cv;
            Tensor ph = forward(m.horiz, raw_input, &ch);
            Tensor pv = forward(m.vert, raw_input, &cv);
            const std::size_t raw = ph.numel();
            double s = m.fc_b;
            for (std::size_t i = 0; i < raw; ++i) s += m.fc_w[i] * ph.v[i];
            for (std::size_t i = 0; i < raw; ++i) s += m.fc_w[raw + i] * pv.v[i];
            Tensor dh(ph.shape), dv(pv.shape);
            for (std::size_t i = 0; i < raw; ++i) dh.v[i] = m.fc_w[i];
            for (std::size_t i = 0; i < raw; ++i) dv.v[i] = m.fc_w[raw + i];
            Tensor gh = backward(m.horiz, ch, dh, nullptr);
            Tensor gv = backward(m.vert, cv, dv, nullptr);
            for (std::size_t i = 0; i < gh.numel(); ++i) gh.v[i] += gv.v[i];
            out.score = s;
            out.grad = std::move(gh);
            return out;
        }
        case DetectorKind::BayarNet: {
            const auto& m = std::get<BayarModel>(d.payload);
            Tensor t = raw_input;
            for (double& v : t.v) v = (v - m.in_shift) / m.in_scale;
            std::vector<LayerCache> caches;
            Tensor logits = forward(m.net, t, &caches);
            Tensor up(logits.shape);
            up.v[0] = -1.0;
            up.v[1] = 1.0;
            Tensor g = backward(m.net, caches, up, nullptr);
            for (double& v : g.v) v /= m.in_scale;  // chain through the input map
            out.score = logits.v[1] - logits.v[0];
            out.grad = std::move(g);
            return out;
        }
        case DetectorKind::CozzHard:
            throw UnsupportedOperation(
                "hard network is not differentiable; build the soft variant");
        case DetectorKind::SpamLinear:
            throw UnsupportedOperation("linear feature detector has no input gradient");
    }
    throw std::invalid_argument("detector_score_grad: unknown kind");
}

// ---------------------------------------------------------------------------
// Linear max-margin training (hinge + L2, SGD, fixed visiting order per seed)

struct LinearTrainHyper {
    int epochs = 60;
    double lr = 0.5;
    double lambda = 1e-4;
    std::uint64_t seed = 1;
};

inline void train_linear_on_features(const std::vector<std::vector<double>>& feats,
                                     const std::vector<int>& labels,
                                     const LinearTrainHyper& hyper, std::vector<double>& w,
                                     double& b) {
    if (feats.size() != labels.size() || feats.empty())
        throw std::invalid_argument("train_linear: empty or mismatched inputs");
    int pos = 0, neg = 0;
    for (int l : labels) (l > 0 ? pos : neg)++;
    if (pos < 2 || neg < 2)
        throw std::invalid_argument("train_linear: need at least 2 examples per class");
    const std::size_t dim = feats.front().size();
    w.assign(dim, 0.0);
    b = 0.0;
    Rng rng(hyper.seed);
    std::vector<std::size_t> order(feats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t idx : order) {
            const auto& f = feats[idx];
            double y = labels[idx] > 0 ? 1.0 : -1.0;
            double s = b;
            for (std::size_t i = 0; i < dim; ++i) s += w[i] * f[i];
            double shrink = 1.0 - hyper.lr * hyper.lambda;
            if (y * s < 1.0) {
                for (std::size_t i = 0; i < dim; ++i)
                    w[i] = shrink * w[i] + hyper.lr * y * f[i];
                b += hyper.lr * y;
            } else {
                for (std::size_t i = 0; i < dim; ++i) w[i] = shrink * w[i];
            }
        }
    }
}

inline std::vector<std::vector<double>> extract_features_parallel(
    const std::vector<ImagePatch>& patches, const SpamConfig& cfg) {
    std::vector<std::vector<double>> feats(patches.size());
    parallel_chunks(patches.size(), 16, [&](std::size_t, std::size_t b0, std::size_t e0) {
        for (std::size_t i = b0; i < e0; ++i) feats[i] = extract_spam(patches[i], cfg).values;
    });
    return feats;
}

inline DetectorModel train_spam_linear(const TrainSet& train, const SpamConfig& cfg,
                                       const LinearTrainHyper& hyper = {}) {
    auto feats = extract_features_parallel(train.patches, cfg);
    LinearModel m;
    m.cfg = cfg;
    train_linear_on_features(feats, train.labels, hyper, m.w, m.b);
    DetectorModel d;
    d.kind = DetectorKind::SpamLinear;
    d.id = detector_kind_name(d.kind);
    d.payload = std::move(m);
    return d;
}

// ---------------------------------------------------------------------------
// Constrained-first-layer CNN

struct BayarTrainHyper {
    int epochs = 6;
    int batch = 32;
    double lr = 0.01;
    double momentum = 0.9;
    double lr_decay = 0.7;      // per-epoch multiplicative decay
    double val_fraction = 0.1;  // held out for snapshot selection
    int max_train = 0;          // 0 = use everything
    std::uint64_t seed = 1;
    bool verbose = false;
};

// conv(5x5x8, constrained) -> pool -> conv(3x3x16) -> relu -> pool ->
// conv(3x3x16) -> relu -> gap -> fc(64) -> relu -> fc(32) -> relu -> fc(2).
// No activation directly after the constrained layer: its output is a
// signed prediction error.
inline Network make_bayar_network(std::uint64_t seed) {
    Network net;
    net.loss = LossKind::SoftmaxCrossEntropy;
    net.layers.push_back(Layer::conv2d(1, 8, 5, 5));
    net.layers.push_back(Layer::maxpool(2));
    net.layers.push_back(Layer::conv2d(8, 16, 3, 3));
    net.layers.push_back(Layer::relu());
    net.layers.push_back(Layer::maxpool(2));
    net.layers.push_back(Layer::conv2d(16, 16, 3, 3));
    net.layers.push_back(Layer::relu());
    net.layers.push_back(Layer::global_avgpool());
    net.layers.push_back(Layer::fully_connected(16, 64));
    net.layers.push_back(Layer::relu());
    net.layers.push_back(Layer::fully_connected(64, 32));
    net.layers.push_back(Layer::relu());
    net.layers.push_back(Layer::fully_connected(32, 2));
    Rng rng(mix_seed({seed, 0xBA4A12ULL}));
    for (Layer& l : net.layers) init_he_normal(l, rng);
    project_constrained_layer(net.layers.front());
    return net;
}

namespace bayardetail {

inline Tensor bayar_input(const ImagePatch& p, const BayarModel& m) {
    Tensor t = tensor_from_patch(p);
    for (double& v : t.v) v = (v - m.in_shift) / m.in_scale;
    return t;
}

inline double batch_accuracy(const Network& net, const BayarModel& m,
                             const std::vector<ImagePatch>& patches,
                             const std::vector<int>& labels,
                             const std::vector<std::size_t>& idx) {
    std::vector<int> hits(idx.size(), 0);
    parallel_chunks(idx.size(), 8, [&](std::size_t, std::size_t b0, std::size_t e0) {
        for (std::size_t i = b0; i < e0; ++i) {
            Tensor out = forward(net, bayar_input(patches[idx[i]], m));
            int pred = out.v[1] > out.v[0] ? 1 : 0;
            hits[i] = pred == labels[idx[i]] ? 1 : 0;
        }
    });
    std::size_t correct = 0;
    for (int h : hits) correct += static_cast<std::size_t>(h);
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace bayardetail

inline DetectorModel train_bayar(const TrainSet& train, const BayarTrainHyper& hyper = {}) {
    int pos = 0, neg = 0;
    for (int l : train.labels) (l > 0 ? pos : neg)++;
    if (pos < 2 || neg < 2)
        throw std::invalid_argument("train_bayar: need at least 2 examples per class");

    BayarModel model;
    model.net = make_bayar_network(hyper.seed);

    Rng rng(mix_seed({hyper.seed, 0x7a117ULL}));
    std::vector<std::size_t> order(train.patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    if (hyper.max_train > 0 && order.size() > static_cast<std::size_t>(hyper.max_train))
        order.resize(static_cast<std::size_t>(hyper.max_train));

    std::size_t val_n = static_cast<std::size_t>(
        std::max(1.0, hyper.val_fraction * static_cast<double>(order.size())));
    if (val_n >= order.size()) val_n = order.size() / 4 + 1;
    std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(val_n),
                                     order.end());
    std::vector<std::size_t> train_idx(order.begin(),
                                       order.end() - static_cast<std::ptrdiff_t>(val_n));

    SgdState sgd;
    Network best = model.net;
    double best_acc = -1.0;
    double lr = hyper.lr;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(train_idx);
        for (std::size_t base = 0; base < train_idx.size();
             base += static_cast<std::size_t>(hyper.batch)) {
            std::size_t bn =
                std::min(train_idx.size() - base, static_cast<std::size_t>(hyper.batch));
            // chunk-ordered parallel gradient accumulation
            const std::size_t chunk = 8;
            std::size_t nchunks = (bn + chunk - 1) / chunk;
            std::vector<NetGrads> partial(nchunks);
            std::vector<double> losses(nchunks, 0.0);
            parallel_chunks(bn, chunk, [&](std::size_t c, std::size_t b0, std::size_t e0) {
                NetGrads g = zero_grads(model.net);
                double lsum = 0.0;
                for (std::size_t i = b0; i < e0; ++i) {
                    std::size_t s = train_idx[base + i];
                    Tensor in = bayardetail::bayar_input(train.patches[s], model);
                    std::vector<LayerCache> caches;
                    Tensor out = forward(model.net, in, &caches);
                    Tensor dout;
                    lsum += loss_and_grad(model.net.loss, out, train.labels[s], &dout);
                    backward(model.net, caches, dout, &g);
                }
                partial[c] = std::move(g);
                losses[c] = lsum;
            });
            NetGrads grads = zero_grads(model.net);
            double loss_sum = 0.0;
            for (std::size_t c = 0; c < nchunks; ++c) {
                accumulate_grads(grads, partial[c]);
                loss_sum += losses[c];
            }
            if (!std::isfinite(loss_sum)) throw TrainingDiverged("non-finite training loss");
            scale_grads(grads, 1.0 / static_cast<double>(bn));
            sgd_step(model.net, grads, lr, hyper.momentum, sgd);
            project_constrained_layer(model.net.layers.front());
        }
        double acc = bayardetail::batch_accuracy(model.net, model, train.patches,
                                                 train.labels, val_idx);
        if (hyper.verbose)
            std::fprintf(stderr, "epoch %d val_acc %.4f lr %.5f\n", epoch, acc, lr);
        if (acc > best_acc) {
            best_acc = acc;
            best = model.net;
        }
        lr *= hyper.lr_decay;
    }
    model.net = best;

    DetectorModel d;
    d.kind = DetectorKind::BayarNet;
    d.id = detector_kind_name(d.kind);
    d.payload = std::move(model);
    return d;
}

// ---------------------------------------------------------------------------
// Soft-network fine-tuning: logistic loss on the score, gradients into the
// read-out and both conv stacks.

// Fine-tuning protocol is unpinned; per-part rates because the pooled
// histogram features are small (entries ~1/active-bins) while the stack
// weights are structural O(1) values. The read-out step is normalized by
// the squared feature norm so one visit moves the score by about
// lr_readout * |dloss/dscore| at any patch size.
struct FinetuneHyper {
    int epochs = 4;
    double lr_readout = 0.05;
    double lr_stacks = 0.001;
    std::uint64_t seed = 1;
};

inline void finetune_cozznet(DetectorModel& d, const TrainSet& train,
                             const FinetuneHyper& hyper = {}) {
    if (d.kind != DetectorKind::CozzSoft)
        throw std::invalid_argument("finetune_cozznet: soft variant required");
    auto& m = std::get<CozzModel>(d.payload);
    Rng rng(mix_seed({hyper.seed, 0xF1DE7ULL}));
    std::vector<std::size_t> order(train.patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SgdState sgd_h, sgd_v;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t idx : order) {
            Tensor in = tensor_from_patch(train.patches[idx]);
            std::vector<LayerCache> ch, cv;
            Tensor ph = forward(m.horiz, in, &ch);
            Tensor pv = forward(m.vert, in, &cv);
            const std::size_t raw = ph.numel();
            double s = m.fc_b;
            for (std::size_t i = 0; i < raw; ++i) s += m.fc_w[i] * ph.v[i];
            for (std::size_t i = 0; i < raw; ++i) s += m.fc_w[raw + i] * pv.v[i];
            double y = train.labels[idx] > 0 ? 1.0 : -1.0;
            // d/ds log(1 + exp(-y s)) = -y * sigmoid(-y s)
            double z = -y * s;
            double sig = z > 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            double ds = -y * sig;
            if (!std::isfinite(ds)) throw TrainingDiverged("finetune: non-finite gradient");
            // read-out update and upstream for the stacks
            double p2 = 1.0;  // bias column
            for (std::size_t i = 0; i < raw; ++i) p2 += ph.v[i] * ph.v[i] + pv.v[i] * pv.v[i];
            double step = hyper.lr_readout * ds / p2;
            Tensor dh(ph.shape), dv(pv.shape);
            for (std::size_t i = 0; i < raw; ++i) {
                dh.v[i] = ds * m.fc_w[i];
                dv.v[i] = ds * m.fc_w[raw + i];
                m.fc_w[i] -= step * ph.v[i];
                m.fc_w[raw + i] -= step * pv.v[i];
            }
            m.fc_b -= step;
            if (hyper.lr_stacks > 0.0) {
                NetGrads gh = zero_grads(m.horiz), gv = zero_grads(m.vert);
                backward(m.horiz, ch, dh, &gh);
                backward(m.vert, cv, dv, &gv);
                sgd_step(m.horiz, gh, hyper.lr_stacks, 0.0, sgd_h);
                sgd_step(m.vert, gv, hyper.lr_stacks, 0.0, sgd_v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model files: magic, kind, threshold, id, then the kind-specific payload.
// All multi-byte values little-endian; see README for the exact layout.

inline constexpr char kModelMagic[8] = {'C', 'F', 'B', 'M', 'D', 'L', '1', '\n'};

namespace modeldetail {

inline void put_string(std::ostream& os, const std::string& s) {
    netdetail::put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
    std::uint32_t n = netdetail::get_u32(is);
    if (n > (1u << 20)) throw ParseError("model: absurd string", static_cast<std::size_t>(is.tellg()));
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw ParseError("model: truncated string", static_cast<std::size_t>(is.tellg()));
    return s;
}
inline void put_spam_config(std::ostream& os, const SpamConfig& c) {
    netdetail::put_f64(os, c.q);
    netdetail::put_i32(os, c.T);
    netdetail::put_i32(os, c.cooc_order);
    netdetail::put_u32(os, c.symmetrize ? 1 : 0);
    netdetail::put_u32(os, static_cast<std::uint32_t>(c.normalization));
}
inline SpamConfig get_spam_config(std::istream& is) {
    SpamConfig c;
    c.q = netdetail::get_f64(is);
    c.T = netdetail::get_i32(is);
    c.cooc_order = netdetail::get_i32(is);
    c.symmetrize = netdetail::get_u32(is) != 0;
    c.normalization = static_cast<FeatureNorm>(netdetail::get_u32(is));
    return c;
}

}  // namespace modeldetail

inline void save_detector(std::ostream& os, const DetectorModel& d) {
    os.write(kModelMagic, 8);
    netdetail::put_u32(os, static_cast<std::uint32_t>(d.kind));
    netdetail::put_f64(os, d.threshold);
    modeldetail::put_string(os, d.id);
    switch (d.kind) {
        case DetectorKind::SpamLinear: {
            const auto& m = std::get<LinearModel>(d.payload);
            modeldetail::put_spam_config(os, m.cfg);
            modeldetail::put_string(os, m.cfg.fingerprint());
            netdetail::put_blob(os, m.w);
            netdetail::put_f64(os, m.b);
            break;
        }
        case DetectorKind::CozzHard:
        case DetectorKind::CozzSoft: {
            const auto& m = std::get<CozzModel>(d.payload);
            modeldetail::put_spam_config(os, m.cfg);
            modeldetail::put_string(os, m.cfg.fingerprint());
            netdetail::put_u32(os, m.hard ? 1 : 0);
            netdetail::put_f64(os, m.temperature);
            netdetail::put_f64(os, m.fc_b);
            netdetail::put_blob(os, m.fc_w);
            save_network(os, m.horiz);
            save_network(os, m.vert);
            break;
        }
        case DetectorKind::BayarNet: {
            const auto& m = std::get<BayarModel>(d.payload);
            netdetail::put_f64(os, m.in_shift);
            netdetail::put_f64(os, m.in_scale);
            save_network(os, m.net);
            break;
        }
    }
}

inline DetectorModel load_detector(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kModelMagic, 8) != 0)
        throw ParseError("model: bad magic", 0);
    DetectorModel d;
    d.kind = static_cast<DetectorKind>(netdetail::get_u32(is));
    d.threshold = netdetail::get_f64(is);
    d.id = modeldetail::get_string(is);
    switch (d.kind) {
        case DetectorKind::SpamLinear: {
            LinearModel m;
            m.cfg = modeldetail::get_spam_config(is);
            std::string fp = modeldetail::get_string(is);
            if (fp != m.cfg.fingerprint())
                throw ParseError("model: config fingerprint mismatch",
                                 static_cast<std::size_t>(is.tellg()));
            m.w = netdetail::get_blob(is);
            m.b = netdetail::get_f64(is);
            d.payload = std::move(m);
            break;
        }
        case DetectorKind::CozzHard:
        case DetectorKind::CozzSoft: {
            CozzModel m;
            m.cfg = modeldetail::get_spam_config(is);
            std::string fp = modeldetail::get_string(is);
            if (fp != m.cfg.fingerprint())
                throw ParseError("model: config fingerprint mismatch",
                                 static_cast<std::size_t>(is.tellg()));
            m.hard = netdetail::get_u32(is) != 0;
            m.temperature = netdetail::get_f64(is);
            m.fc_b = netdetail::get_f64(is);
            m.fc_w = netdetail::get_blob(is);
            m.horiz = load_network(is);
            m.vert = load_network(is);
            d.payload = std::move(m);
            break;
        }
        case DetectorKind::BayarNet: {
            BayarModel m;
            m.in_shift = netdetail::get_f64(is);
            m.in_scale = netdetail::get_f64(is);
            m.net = load_network(is);
            d.payload = std::move(m);
            break;
        }
        default:
            throw ParseError("model: unknown detector kind", 8);
    }
    return d;
}

}  // namespace cfbench
