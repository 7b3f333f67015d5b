// Counter-forensic attacks: gradient-sign noise (single and multi step),
// coordinate-descent feature restoration / boundary crossing with O(window)
// feature maintenance, and a residual restoration generator trained against
// a differentiable detector.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "cfbench/core.hpp"
#include "cfbench/detector.hpp"
#include "cfbench/image.hpp"
#include "cfbench/manip.hpp"
#include "cfbench/net.hpp"
#include "cfbench/spam.hpp"

namespace cfbench {

enum class IcmMode { RestorePristine, CrossBoundary };

struct AttackConfig {
    int epsilon = 1;        // gray levels, integer by contract
    int pgd_steps = 10;
    int pgd_alpha = 1;      // gray levels per step
    IcmMode icm_mode = IcmMode::CrossBoundary;
    std::vector<int> icm_deltas = {-1, 1};
    double distortion_T = 6.5;  // max MSE against the attacked input
    int max_sweeps = 30;
    double margin = 0.0;        // boundary-crossing slack
    double restore_tol = 1e-6;  // stop when the feature objective falls below
    bool incremental = true;    // false = recompute features from scratch (oracle)
    std::uint64_t seed = 1;
};

struct AttackResult {
    ImagePatch adversarial;
    bool success = false;  // detector label flipped to pristine
    double psnr_db = std::numeric_limits<double>::infinity();
    int sweeps_or_steps = 0;
    std::vector<double> objective_trace;
};

namespace attackdetail {

inline void finish_result(AttackResult& r, const DetectorModel& model,
                          const ImagePatch& x0) {
    r.success = !(score_detector(model, r.adversarial) > model.threshold);
    double m = mse(r.adversarial, x0);
    r.psnr_db = m == 0.0 ? std::numeric_limits<double>::infinity() : psnr_from_mse(m);
}

inline void require_noise_target(const DetectorModel& model) {
    if (!detector_differentiable(model))
        throw UnsupportedOperation(
            "gradient-sign attacks need a differentiable detector (soft network); "
            "use the coordinate-descent attack for feature-space models");
}

}  // namespace attackdetail

// Multi-step gradient-sign attack: descend the detector score by alpha *
// sign per pixel, clip to valid gray levels, project onto the l_inf ball of
// radius eps around the input. Integer arithmetic throughout.
inline AttackResult pgd(const DetectorModel& model, const ImagePatch& x0, int eps,
                        int steps, int alpha) {
    attackdetail::require_noise_target(model);
    if (eps < 1 || alpha < 1 || steps < 1)
        throw std::invalid_argument("pgd: eps, alpha and steps must be >= 1");
    AttackResult r;
    r.adversarial = x0;
    for (int k = 0; k < steps; ++k) {
        ScoreGrad sg = detector_score_grad(model, tensor_from_patch(r.adversarial));
        r.objective_trace.push_back(sg.score);
        for (int y = 0; y < x0.height; ++y)
            for (int x = 0; x < x0.width; ++x) {
                double g = sg.grad.at(0, y, x);
                if (g == 0.0) continue;
                int step = g > 0.0 ? -alpha : alpha;  // descend the score
                int v = static_cast<int>(r.adversarial.at(y, x)) + step;
                int lo = std::max(0, static_cast<int>(x0.at(y, x)) - eps);
                int hi = std::min(255, static_cast<int>(x0.at(y, x)) + eps);
                r.adversarial.at(y, x) =
                    static_cast<std::uint8_t>(std::clamp(v, lo, hi));
            }
        ++r.sweeps_or_steps;
        if (!(score_detector(model, r.adversarial) > model.threshold)) break;  // flipped
    }
    attackdetail::finish_result(r, model, x0);
    return r;
}

// Single gradient-sign step of magnitude eps; equals pgd with one step of
// alpha = eps, bit for bit.
inline AttackResult fgsm(const DetectorModel& model, const ImagePatch& x0, int eps) {
    attackdetail::require_noise_target(model);
    if (eps < 1) throw std::invalid_argument("fgsm: eps must be >= 1");
    AttackResult r;
    r.adversarial = x0;
    ScoreGrad sg = detector_score_grad(model, tensor_from_patch(x0));
    r.objective_trace.push_back(sg.score);
    for (int y = 0; y < x0.height; ++y)
        for (int x = 0; x < x0.width; ++x) {
            double g = sg.grad.at(0, y, x);
            if (g == 0.0) continue;
            int v = static_cast<int>(x0.at(y, x)) + (g > 0.0 ? -eps : eps);
            r.adversarial.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
    r.sweeps_or_steps = 1;
    attackdetail::finish_result(r, model, x0);
    return r;
}

// ---------------------------------------------------------------------------
// Coordinate-descent attack in feature space.
//
// Visits pixels in seeded random order; a candidate +-1 change is kept only
// if it strictly lowers the objective and respects the MSE budget. Features
// are maintained by O(window) incremental histogram updates; the
// from-scratch path (`incremental = false`) exists as an oracle and takes
// identical decisions.

inline AttackResult icm_attack(const DetectorModel& detector, const ImagePatch& x0,
                               const std::optional<SpamFeature>& f_target,
                               const AttackConfig& cfg) {
    if (detector.kind != DetectorKind::SpamLinear)
        throw std::invalid_argument("icm_attack: target must be the linear feature detector");
    const auto& lm = std::get<LinearModel>(detector.payload);
    if (cfg.icm_mode == IcmMode::RestorePristine && !f_target.has_value())
        throw std::invalid_argument("icm_attack: restore mode needs a target feature");
    if (cfg.icm_mode == IcmMode::CrossBoundary && f_target.has_value())
        throw std::invalid_argument("icm_attack: boundary mode takes no target feature");
    if (f_target && f_target->dimension() != static_cast<int>(lm.w.size()))
        throw std::invalid_argument("icm_attack: target feature dimension mismatch");

    SpamAccumulator acc(x0, lm.cfg);
    std::vector<double> scratch;
    std::vector<std::int64_t> fresh;
    auto objective = [&]() {
        const std::vector<std::int64_t>* counts = &acc.counts();
        if (!cfg.incremental) {
            fresh = acc.counts_fresh();
            counts = &fresh;
        }
        detail::normalize_counts_into(scratch, *counts, acc.hist_h().total,
                                      acc.hist_v().total, lm.cfg);
        if (cfg.icm_mode == IcmMode::CrossBoundary) {
            double s = lm.b;
            for (std::size_t i = 0; i < lm.w.size(); ++i) s += lm.w[i] * scratch[i];
            return std::max(0.0, s - detector.threshold + cfg.margin);
        }
        double d = 0.0;
        for (std::size_t i = 0; i < scratch.size(); ++i) {
            double diff = scratch[i] - f_target->values[i];
            d += diff * diff;
        }
        return d;
    };
    auto goal_reached = [&](double obj) {
        return cfg.icm_mode == IcmMode::CrossBoundary ? obj == 0.0 : obj <= cfg.restore_tol;
    };

    AttackResult r;
    double obj = objective();
    if (goal_reached(obj)) {
        r.adversarial = x0;
        r.sweeps_or_steps = 0;
        attackdetail::finish_result(r, detector, x0);
        return r;
    }

    const std::size_t n = x0.size();
    const double sse_budget = cfg.distortion_T * static_cast<double>(n);
    long long sse = 0;
    Rng rng(cfg.seed);
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);

    bool done = false;
    for (int sweep = 0; sweep < cfg.max_sweeps && !done; ++sweep) {
        rng.shuffle(order);
        ++r.sweeps_or_steps;
        int accepted = 0;
        for (std::uint32_t idx : order) {
            int y = static_cast<int>(idx) / x0.width;
            int x = static_cast<int>(idx) % x0.width;
            int cur = acc.patch().at(y, x);
            int orig = x0.at(y, x);
            int best_delta = 0;
            double best_obj = obj;
            for (int delta : cfg.icm_deltas) {
                int nv = cur + delta;
                if (nv < 0 || nv > 255) continue;
                long long d_old = cur - orig;
                long long d_new = nv - orig;
                long long nsse = sse - d_old * d_old + d_new * d_new;
                if (static_cast<double>(nsse) > sse_budget) continue;
                acc.apply_edit(y, x, delta);
                double o = objective();
                acc.apply_edit(y, x, -delta);
                if (o < best_obj) {
                    best_obj = o;
                    best_delta = delta;
                }
            }
            if (best_delta != 0) {
                int nv = cur + best_delta;
                long long d_old = cur - orig;
                long long d_new = nv - orig;
                sse += d_new * d_new - d_old * d_old;
                acc.apply_edit(y, x, best_delta);
                obj = best_obj;
                r.objective_trace.push_back(obj);
                ++accepted;
                if (goal_reached(obj)) {
                    done = true;
                    break;
                }
            }
        }
        if (accepted == 0) break;
    }
    r.adversarial = acc.patch();
    attackdetail::finish_result(r, detector, x0);
    return r;
}

// ---------------------------------------------------------------------------
// Restoration generator: normalized-input residual CNN with a global skip,
// trained with adversarial + pixel + high-pass feature losses against a
// differentiable detector. The caller's detector is never modified; the
// adversarial game plays against an internal copy.

struct RestorerHyper {
    int channels = 16;
    int blocks = 4;
    int epochs = 6;
    double lr = 1e-3;
    double momentum = 0.9;
    double lambda_adv = 1.0;
    double lambda_pix = 10.0;
    double lambda_feat = 1.0;
    double grad_clip = 1.0;      // global l2 cap on parameter gradients
    int detector_every = 0;      // 0 = frozen detector; k = one update per k steps
    double detector_lr = 0.01;   // read-out rate for the co-trained copy
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct Restorer {
    Network body;        // operates on (x - shift) / scale
    double in_shift = 128.0;
    double in_scale = 32.0;
    int in_h = 0, in_w = 0;  // training dims; restore() enforces them
};

inline Restorer make_restorer(int channels, int blocks, std::uint64_t seed) {
    Restorer g;
    Rng rng(mix_seed({seed, 0x6E57ULL}));
    Layer stem = Layer::conv2d(1, channels, 3, 3, 1, 1);
    init_he_normal(stem, rng);
    g.body.layers.push_back(stem);
    g.body.layers.push_back(Layer::relu());
    for (int i = 0; i < blocks; ++i) {
        Layer rb = Layer::residual_block(channels, 3);
        init_he_normal(rb, rng);
        g.body.layers.push_back(rb);
    }
    // zero-initialized head: the whole generator starts as the identity
    g.body.layers.push_back(Layer::conv2d(channels, 1, 3, 3, 1, 1));
    return g;
}

// Continuous-valued generator output in raw gray levels (no rounding).
inline Tensor restorer_forward(const Restorer& g, const Tensor& raw,
                               std::vector<LayerCache>* caches = nullptr) {
    Tensor u = raw;
    for (double& v : u.v) v = (v - g.in_shift) / g.in_scale;
    Tensor body = forward(g.body, u, caches);
    Tensor y = raw;
    for (std::size_t i = 0; i < y.numel(); ++i) y.v[i] += g.in_scale * body.v[i];
    return y;
}

inline ImagePatch restore(const Restorer& g, const ImagePatch& x) {
    if (g.in_h > 0 && (x.height != g.in_h || x.width != g.in_w))
        throw std::invalid_argument("restore: patch dims differ from training dims");
    Tensor y = restorer_forward(g, tensor_from_patch(x));
    return patch_from_tensor(y);
}

namespace restordetail {

// third-difference maps of a continuous image, both directions
struct HighPass {
    Layer horiz = cozzdetail::residual_conv(ResidualDirection::Horizontal);
    Layer vert = cozzdetail::residual_conv(ResidualDirection::Vertical);
};

// adds lambda * d/dy mean(((R(y)-R(p))/norm)^2) to dy; returns the loss term
inline double feat_loss_grad(const HighPass& hp, const Tensor& y, const Tensor& p,
                             double lambda, double norm, Tensor& dy) {
    double total = 0.0;
    for (const Layer* l : {&hp.horiz, &hp.vert}) {
        LayerCache cy;
        Tensor ry = layer_forward(*l, y, &cy, 0);
        Tensor rp = layer_forward(*l, p, nullptr, 0);
        double inv = 1.0 / static_cast<double>(ry.numel());
        Tensor up(ry.shape);
        for (std::size_t i = 0; i < ry.numel(); ++i) {
            double diff = (ry.v[i] - rp.v[i]) / norm;
            total += diff * diff * inv;
            up.v[i] = lambda * 2.0 * diff * inv / norm;
        }
        Tensor g = layer_backward(*l, cy, up, nullptr);
        for (std::size_t i = 0; i < dy.numel(); ++i) dy.v[i] += g.v[i];
    }
    return total;
}

inline void detector_update(DetectorModel& d, const ImagePatch& restored,
                            const ImagePatch& pristine, double lr, std::uint64_t step_seed) {
    TrainSet pair;
    pair.patches = {restored, pristine};
    pair.labels = {1, 0};
    pair.device_ids = {0, 0};
    if (d.kind == DetectorKind::CozzSoft) {
        FinetuneHyper h;
        h.epochs = 1;
        h.lr_readout = lr;
        h.lr_stacks = 0.0;
        h.seed = step_seed;
        finetune_cozznet(d, pair, h);
    } else if (d.kind == DetectorKind::BayarNet) {
        auto& m = std::get<BayarModel>(d.payload);
        NetGrads g = zero_grads(m.net);
        for (int i = 0; i < 2; ++i) {
            Tensor in = tensor_from_patch(pair.patches[static_cast<std::size_t>(i)]);
            for (double& v : in.v) v = (v - m.in_shift) / m.in_scale;
            std::vector<LayerCache> caches;
            Tensor out = forward(m.net, in, &caches);
            Tensor dout;
            loss_and_grad(LossKind::SoftmaxCrossEntropy, out, pair.labels[static_cast<std::size_t>(i)], &dout);
            backward(m.net, caches, dout, &g);
        }
        scale_grads(g, 0.5);
        SgdState st;
        sgd_step(m.net, g, lr, 0.0, st);
    }
}

}  // namespace restordetail

inline Restorer train_restorer(const DetectorModel& detector,
                               const std::vector<std::pair<ImagePatch, ImagePatch>>& pairs,
                               const RestorerHyper& hyper = {},
                               std::vector<double>* epoch_loss_out = nullptr) {
    if (!detector_differentiable(detector) && hyper.lambda_adv != 0.0)
        throw std::invalid_argument("train_restorer: adversarial term needs a soft detector");
    if (pairs.empty()) throw std::invalid_argument("train_restorer: no training pairs");
    for (const auto& pr : pairs)
        if (pr.first.width != pr.second.width || pr.first.height != pr.second.height)
            throw std::invalid_argument("train_restorer: pair dimensions differ");

    Restorer g = make_restorer(hyper.channels, hyper.blocks, hyper.seed);
    g.in_h = pairs.front().first.height;
    g.in_w = pairs.front().first.width;
    DetectorModel live = detector;  // adversarial game plays against this copy
    restordetail::HighPass hp;

    SgdState sgd;
    Rng rng(mix_seed({hyper.seed, 0x9A5ULL}));
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> recent_losses;
    long long step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            const ImagePatch& manip = pairs[idx].first;
            const ImagePatch& prist = pairs[idx].second;
            Tensor raw = tensor_from_patch(manip);
            Tensor target = tensor_from_patch(prist);
            std::vector<LayerCache> caches;
            Tensor y = restorer_forward(g, raw, &caches);

            Tensor dy(y.shape);
            double n_inv = 1.0 / static_cast<double>(y.numel());
            const double norm = g.in_scale;  // quality terms in normalized units
            double loss = 0.0;
            // pixel term
            for (std::size_t i = 0; i < y.numel(); ++i) {
                double diff = (y.v[i] - target.v[i]) / norm;
                loss += hyper.lambda_pix * diff * diff * n_inv;
                dy.v[i] += hyper.lambda_pix * 2.0 * diff * n_inv / norm;
            }
            // high-pass feature term
            if (hyper.lambda_feat != 0.0)
                loss += hyper.lambda_feat * restordetail::feat_loss_grad(
                                                hp, y, target, hyper.lambda_feat, norm, dy);
            // adversarial term: softplus of the live detector's score
            if (hyper.lambda_adv != 0.0) {
                ScoreGrad sg = detector_score_grad(live, y);
                double s = sg.score;
                double softplus = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
                double sigma = s > 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
                loss += hyper.lambda_adv * softplus;
                for (std::size_t i = 0; i < dy.numel(); ++i)
                    dy.v[i] += hyper.lambda_adv * sigma * sg.grad.v[i];
            }
            if (!std::isfinite(loss)) {
                std::string trace;
                for (double v : recent_losses) trace += " " + std::to_string(v);
                throw TrainingDiverged("restorer loss non-finite; recent losses:" + trace);
            }
            epoch_loss += loss;
            recent_losses.push_back(loss);
            if (recent_losses.size() > 8) recent_losses.erase(recent_losses.begin());

            // chain through the global skip: dL/dbody_out = in_scale * dL/dy
            Tensor dbody(dy.shape);
            for (std::size_t i = 0; i < dy.numel(); ++i) dbody.v[i] = g.in_scale * dy.v[i];
            NetGrads grads = zero_grads(g.body);
            backward(g.body, caches, dbody, &grads);
            if (hyper.grad_clip > 0.0) {
                double sq = 0.0;
                for (const auto& lg : grads.layers) {
                    for (double v : lg.w) sq += v * v;
                    for (double v : lg.b) sq += v * v;
                    for (double v : lg.w2) sq += v * v;
                    for (double v : lg.b2) sq += v * v;
                }
                double gn = std::sqrt(sq);
                if (gn > hyper.grad_clip) scale_grads(grads, hyper.grad_clip / gn);
            }
            sgd_step(g.body, grads, hyper.lr, hyper.momentum, sgd);

            ++step;
            if (hyper.detector_every > 0 && step % hyper.detector_every == 0)
                restordetail::detector_update(live, patch_from_tensor(y), prist,
                                              hyper.detector_lr,
                                              mix_seed({hyper.seed, static_cast<std::uint64_t>(step)}));
        }
        if (epoch_loss_out)
            epoch_loss_out->push_back(epoch_loss / static_cast<double>(pairs.size()));
        if (hyper.verbose)
            std::fprintf(stderr, "restorer epoch %d mean loss %.5f\n", epoch,
                         epoch_loss / static_cast<double>(pairs.size()));
    }
    return g;
}

}  // namespace cfbench
