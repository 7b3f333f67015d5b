// Residual co-occurrence features: third-difference residuals, 5-bin
// quantization, order-4 co-occurrence histograms along the residual
// direction, sign/reversal symmetrization, and O(window) histogram updates
// under single-pixel edits.
#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "cfbench/core.hpp"
#include "cfbench/image.hpp"

namespace cfbench {

enum class FeatureNorm { L2, L1, None };

struct SpamConfig {
    double q = 3.0;          // quantization step
    int T = 2;               // truncation bound; bins = 2T+1
    int cooc_order = 4;      // jointly binned residuals
    bool symmetrize = true;  // merge sign/reversal orbits
    FeatureNorm normalization = FeatureNorm::L2;

    int bins() const { return 2 * T + 1; }
    int raw_dim_per_direction() const {
        int d = 1;
        for (int i = 0; i < cooc_order; ++i) d *= bins();
        return d;
    }
    std::string fingerprint() const {
        std::ostringstream ss;
        ss << "q=" << q << ";T=" << T << ";order=" << cooc_order
           << ";sym=" << (symmetrize ? 1 : 0) << ";norm="
           << (normalization == FeatureNorm::L2 ? "l2"
                                                : normalization == FeatureNorm::L1 ? "l1" : "none");
        return hex64(fnv1a64(ss.str()));
    }
};

enum class ResidualDirection { Horizontal, Vertical };

// Raw (unquantized) third-difference residuals. Horizontal grid is
// (W-3) x H; vertical is W x (H-3). Values are exact integers.
struct RawResidualGrid {
    ResidualDirection direction;
    int width = 0;
    int height = 0;
    std::vector<std::int32_t> values;

    std::int32_t at(int y, int x) const {
        return values[static_cast<std::size_t>(y) * width + x];
    }
};

// Third finite difference along the direction, computed only where the
// 4-pixel support fits. Taps (-1, 3, -3, 1).
inline RawResidualGrid residual(const ImagePatch& x, ResidualDirection dir) {
    RawResidualGrid g;
    g.direction = dir;
    if (dir == ResidualDirection::Horizontal) {
        if (x.width < 4)
            throw std::invalid_argument("residual: patch narrower than filter support");
        g.width = x.width - 3;
        g.height = x.height;
        g.values.resize(static_cast<std::size_t>(g.width) * g.height);
        for (int y = 0; y < x.height; ++y)
            for (int j = 0; j < g.width; ++j)
                g.values[static_cast<std::size_t>(y) * g.width + j] =
                    -static_cast<int>(x.at(y, j)) + 3 * static_cast<int>(x.at(y, j + 1)) -
                    3 * static_cast<int>(x.at(y, j + 2)) + static_cast<int>(x.at(y, j + 3));
    } else {
        if (x.height < 4)
            throw std::invalid_argument("residual: patch shorter than filter support");
        g.width = x.width;
        g.height = x.height - 3;
        g.values.resize(static_cast<std::size_t>(g.width) * g.height);
        for (int i = 0; i < g.height; ++i)
            for (int c = 0; c < x.width; ++c)
                g.values[static_cast<std::size_t>(i) * g.width + c] =
                    -static_cast<int>(x.at(i, c)) + 3 * static_cast<int>(x.at(i + 1, c)) -
                    3 * static_cast<int>(x.at(i + 2, c)) + static_cast<int>(x.at(i + 3, c));
    }
    return g;
}

// clamp(round(r/q), -T, T), round half away from zero.
inline int quantize_residual(double r, double q, int T) {
    long v = lround_half_away(r / q);
    if (v < -T) v = -T;
    if (v > T) v = T;
    return static_cast<int>(v);
}

struct ResidualMap {
    ResidualDirection direction;
    int width = 0;
    int height = 0;
    std::vector<std::int8_t> values;  // in [-T, T]

    int at(int y, int x) const {
        return values[static_cast<std::size_t>(y) * width + x];
    }
};

inline ResidualMap quantize_truncate(const RawResidualGrid& g, double q, int T) {
    if (q <= 0.0) throw std::invalid_argument("quantize_truncate: q must be > 0");
    ResidualMap m;
    m.direction = g.direction;
    m.width = g.width;
    m.height = g.height;
    m.values.resize(g.values.size());
    for (std::size_t i = 0; i < g.values.size(); ++i)
        m.values[i] = static_cast<std::int8_t>(quantize_residual(g.values[i], q, T));
    return m;
}

struct CoocHistogram {
    ResidualDirection direction;
    std::vector<std::uint64_t> counts;  // bins^order entries
    std::uint64_t total = 0;
};

// Tuple (v0..v_{order-1}) maps to sum (v_k + T) * bins^k.
inline int cooc_index(const int* tuple, int order, int T) {
    const int bins = 2 * T + 1;
    int idx = 0;
    int weight = 1;
    for (int k = 0; k < order; ++k) {
        idx += (tuple[k] + T) * weight;
        weight *= bins;
    }
    return idx;
}

// Scan direction equals the residual direction: along rows for horizontal
// maps, down columns for vertical maps.
inline CoocHistogram cooc_histogram(const ResidualMap& m, int order, int T) {
    CoocHistogram h;
    h.direction = m.direction;
    const int bins = 2 * T + 1;
    int dim = 1;
    for (int i = 0; i < order; ++i) dim *= bins;
    h.counts.assign(static_cast<std::size_t>(dim), 0);
    int tuple[16];
    if (order > 16) throw std::invalid_argument("cooc_histogram: order too large");
    if (m.direction == ResidualDirection::Horizontal) {
        if (m.width < order)
            throw std::invalid_argument("cooc_histogram: residual grid too small");
        for (int y = 0; y < m.height; ++y)
            for (int s = 0; s + order <= m.width; ++s) {
                for (int k = 0; k < order; ++k) tuple[k] = m.at(y, s + k);
                ++h.counts[static_cast<std::size_t>(cooc_index(tuple, order, T))];
                ++h.total;
            }
    } else {
        if (m.height < order)
            throw std::invalid_argument("cooc_histogram: residual grid too small");
        for (int c = 0; c < m.width; ++c)
            for (int s = 0; s + order <= m.height; ++s) {
                for (int k = 0; k < order; ++k) tuple[k] = m.at(s + k, c);
                ++h.counts[static_cast<std::size_t>(cooc_index(tuple, order, T))];
                ++h.total;
            }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Symmetrization: raw bins share a class iff their tuples are related by
// sign negation, sequence reversal, or both. Classes are indexed in
// ascending order of their smallest raw member.

struct SymmetryTable {
    std::vector<std::int32_t> class_of;  // raw index -> class
    int class_count = 0;
    int T = 2;
    int order = 4;
};

namespace detail {
inline void decode_tuple(int idx, int order, int T, int* tuple) {
    const int bins = 2 * T + 1;
    for (int k = 0; k < order; ++k) {
        tuple[k] = idx % bins - T;
        idx /= bins;
    }
}
}  // namespace detail

inline SymmetryTable build_symmetry_table(int T, int order) {
    SymmetryTable t;
    t.T = T;
    t.order = order;
    const int bins = 2 * T + 1;
    int dim = 1;
    for (int i = 0; i < order; ++i) dim *= bins;
    t.class_of.assign(static_cast<std::size_t>(dim), -1);
    int tuple[16], alt[16];
    int next_class = 0;
    for (int idx = 0; idx < dim; ++idx) {
        if (t.class_of[static_cast<std::size_t>(idx)] >= 0) continue;
        detail::decode_tuple(idx, order, T, tuple);
        int orbit[4];
        // identity, negation, reversal, negation+reversal
        orbit[0] = idx;
        for (int k = 0; k < order; ++k) alt[k] = -tuple[k];
        orbit[1] = cooc_index(alt, order, T);
        for (int k = 0; k < order; ++k) alt[k] = tuple[order - 1 - k];
        orbit[2] = cooc_index(alt, order, T);
        for (int k = 0; k < order; ++k) alt[k] = -tuple[order - 1 - k];
        orbit[3] = cooc_index(alt, order, T);
        for (int member : orbit) t.class_of[static_cast<std::size_t>(member)] = next_class;
        ++next_class;
    }
    t.class_count = next_class;
    return t;
}

// Process-wide cache; tables are tiny and immutable.
inline const SymmetryTable& symmetry_table(int T, int order) {
    static std::vector<std::unique_ptr<SymmetryTable>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    for (const auto& t : cache)
        if (t->T == T && t->order == order) return *t;
    cache.push_back(std::make_unique<SymmetryTable>(build_symmetry_table(T, order)));
    return *cache.back();
}

// ---------------------------------------------------------------------------
// Feature assembly

struct SpamFeature {
    std::vector<double> values;  // horizontal block then vertical block
    FeatureNorm normalization = FeatureNorm::L2;
    int dimension() const { return static_cast<int>(values.size()); }
};

namespace detail {

// Integer per-direction histogram (optionally symmetrized), h then v.
inline std::vector<std::int64_t> collect_counts(const CoocHistogram& h,
                                                const CoocHistogram& v,
                                                const SpamConfig& cfg) {
    const int raw = cfg.raw_dim_per_direction();
    if (cfg.symmetrize) {
        const SymmetryTable& table = symmetry_table(cfg.T, cfg.cooc_order);
        std::vector<std::int64_t> out(static_cast<std::size_t>(2 * table.class_count), 0);
        for (int i = 0; i < raw; ++i) {
            out[static_cast<std::size_t>(table.class_of[static_cast<std::size_t>(i)])] +=
                static_cast<std::int64_t>(h.counts[static_cast<std::size_t>(i)]);
            out[static_cast<std::size_t>(table.class_count +
                                         table.class_of[static_cast<std::size_t>(i)])] +=
                static_cast<std::int64_t>(v.counts[static_cast<std::size_t>(i)]);
        }
        return out;
    }
    std::vector<std::int64_t> out(static_cast<std::size_t>(2 * raw), 0);
    for (int i = 0; i < raw; ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(h.counts[static_cast<std::size_t>(i)]);
        out[static_cast<std::size_t>(raw + i)] =
            static_cast<std::int64_t>(v.counts[static_cast<std::size_t>(i)]);
    }
    return out;
}

// Normalization conventions: L2 normalizes the whole vector to unit
// Euclidean norm; L1 normalizes each direction's block to unit sum (this is
// what average pooling over co-occurrence indicators produces natively).
inline void normalize_counts_into(std::vector<double>& out,
                                  const std::vector<std::int64_t>& counts,
                                  std::uint64_t total_h, std::uint64_t total_v,
                                  const SpamConfig& cfg) {
    const std::size_t half = counts.size() / 2;
    out.resize(counts.size());
    switch (cfg.normalization) {
        case FeatureNorm::None:
            for (std::size_t i = 0; i < counts.size(); ++i)
                out[i] = static_cast<double>(counts[i]);
            break;
        case FeatureNorm::L1:
            for (std::size_t i = 0; i < half; ++i)
                out[i] = static_cast<double>(counts[i]) / static_cast<double>(total_h);
            for (std::size_t i = half; i < counts.size(); ++i)
                out[i] = static_cast<double>(counts[i]) / static_cast<double>(total_v);
            break;
        case FeatureNorm::L2: {
            double ss = 0.0;
            for (std::int64_t c : counts) ss += static_cast<double>(c) * static_cast<double>(c);
            double norm = std::sqrt(ss);
            if (norm == 0.0) norm = 1.0;
            for (std::size_t i = 0; i < counts.size(); ++i)
                out[i] = static_cast<double>(counts[i]) / norm;
            break;
        }
    }
}

inline SpamFeature finalize_feature(const std::vector<std::int64_t>& counts,
                                    std::uint64_t total_h, std::uint64_t total_v,
                                    const SpamConfig& cfg) {
    SpamFeature f;
    f.normalization = cfg.normalization;
    normalize_counts_into(f.values, counts, total_h, total_v, cfg);
    return f;
}

}  // namespace detail

inline std::pair<CoocHistogram, CoocHistogram> spam_histograms(const ImagePatch& x,
                                                               const SpamConfig& cfg) {
    auto rh = residual(x, ResidualDirection::Horizontal);
    auto rv = residual(x, ResidualDirection::Vertical);
    auto mh = quantize_truncate(rh, cfg.q, cfg.T);
    auto mv = quantize_truncate(rv, cfg.q, cfg.T);
    return {cooc_histogram(mh, cfg.cooc_order, cfg.T),
            cooc_histogram(mv, cfg.cooc_order, cfg.T)};
}

inline SpamFeature extract_spam(const ImagePatch& x, const SpamConfig& cfg) {
    if (x.width < 8 || x.height < 8)
        throw std::invalid_argument("extract_spam: patch must be at least 8x8");
    auto [h, v] = spam_histograms(x, cfg);
    auto counts = detail::collect_counts(h, v, cfg);
    return detail::finalize_feature(counts, h.total, v.total, cfg);
}

// ---------------------------------------------------------------------------
// Incremental updates.
//
// A single-pixel edit at (y, x) touches at most 4 residuals per direction
// and at most order + 3 co-occurrence sites per affected residual line, so
// the histograms can be patched in O(window) work independent of patch size.

namespace detail {

inline int residual_h(const ImagePatch& p, int y, int j) {
    return -static_cast<int>(p.at(y, j)) + 3 * static_cast<int>(p.at(y, j + 1)) -
           3 * static_cast<int>(p.at(y, j + 2)) + static_cast<int>(p.at(y, j + 3));
}
inline int residual_v(const ImagePatch& p, int i, int x) {
    return -static_cast<int>(p.at(i, x)) + 3 * static_cast<int>(p.at(i + 1, x)) -
           3 * static_cast<int>(p.at(i + 2, x)) + static_cast<int>(p.at(i + 3, x));
}

// Visits every co-occurrence site whose window overlaps residual positions
// [c-3, c] on one residual line of length rlen; fn(site_start).
template <typename Fn>
inline void affected_sites(int c, int rlen, int order, Fn&& fn) {
    int lo = c - 3 - (order - 1);
    if (lo < 0) lo = 0;
    int hi = c;
    if (hi > rlen - order) hi = rlen - order;
    for (int s = lo; s <= hi; ++s) fn(s);
}

}  // namespace detail

// Applies `delta` to pixel (y, x) of `patch` and patches the histogram pair
// so it matches a from-scratch recomputation on the edited image. `sign` is
// +1 to add new tuples / -1 to remove old ones, exposed for state wrappers.
template <typename OnBin>
inline void visit_edit_bins(const ImagePatch& patch, int y, int x, const SpamConfig& cfg,
                            OnBin&& on_bin) {
    const int order = cfg.cooc_order;
    int tuple[16];
    // horizontal: residual row y, residual cols [x-3, x]
    const int rw = patch.width - 3;
    if (rw >= order) {
        detail::affected_sites(x, rw, order, [&](int s) {
            for (int k = 0; k < order; ++k)
                tuple[k] = quantize_residual(detail::residual_h(patch, y, s + k), cfg.q, cfg.T);
            on_bin(ResidualDirection::Horizontal, cooc_index(tuple, order, cfg.T));
        });
    }
    // vertical: residual col x, residual rows [y-3, y]
    const int rh = patch.height - 3;
    if (rh >= order) {
        detail::affected_sites(y, rh, order, [&](int s) {
            for (int k = 0; k < order; ++k)
                tuple[k] = quantize_residual(detail::residual_v(patch, s + k, x), cfg.q, cfg.T);
            on_bin(ResidualDirection::Vertical, cooc_index(tuple, order, cfg.T));
        });
    }
}

// Free-function form per the histogram-pair contract: mutates `x` and the
// histograms in place. Exact counter equality with full recomputation.
inline void incremental_update(ImagePatch& x, CoocHistogram& hist_h, CoocHistogram& hist_v,
                               int y, int col, int delta, const SpamConfig& cfg) {
    if (y < 0 || y >= x.height || col < 0 || col >= x.width)
        throw std::invalid_argument("incremental_update: pixel out of bounds");
    int nv = static_cast<int>(x.at(y, col)) + delta;
    if (nv < 0 || nv > 255)
        throw std::invalid_argument("incremental_update: resulting pixel out of range");
    if (delta == 0) return;
    visit_edit_bins(x, y, col, cfg, [&](ResidualDirection d, int bin) {
        auto& h = d == ResidualDirection::Horizontal ? hist_h : hist_v;
        --h.counts[static_cast<std::size_t>(bin)];
        --h.total;
    });
    x.at(y, col) = static_cast<std::uint8_t>(nv);
    visit_edit_bins(x, y, col, cfg, [&](ResidualDirection d, int bin) {
        auto& h = d == ResidualDirection::Horizontal ? hist_h : hist_v;
        ++h.counts[static_cast<std::size_t>(bin)];
        ++h.total;
    });
}

// Stateful wrapper used by the coordinate-descent attack: keeps the patch,
// the raw histogram pair, and (when symmetrize is on) the per-class counts
// in lockstep under edits. apply_edit(+d) followed by apply_edit(-d)
// restores the state exactly.
class SpamAccumulator {
public:
    SpamAccumulator(const ImagePatch& patch, const SpamConfig& cfg)
        : patch_(patch), cfg_(cfg) {
        auto [h, v] = spam_histograms(patch_, cfg_);
        hist_h_ = std::move(h);
        hist_v_ = std::move(v);
        counts_ = detail::collect_counts(hist_h_, hist_v_, cfg_);
        half_ = static_cast<int>(counts_.size() / 2);
        if (cfg_.symmetrize) table_ = &symmetry_table(cfg_.T, cfg_.cooc_order);
    }

    void apply_edit(int y, int x, int delta) {
        if (delta == 0) return;
        int nv = static_cast<int>(patch_.at(y, x)) + delta;
        if (nv < 0 || nv > 255)
            throw std::invalid_argument("apply_edit: resulting pixel out of range");
        visit_edit_bins(patch_, y, x, cfg_, [&](ResidualDirection d, int bin) {
            bump(d, bin, -1);
        });
        patch_.at(y, x) = static_cast<std::uint8_t>(nv);
        visit_edit_bins(patch_, y, x, cfg_, [&](ResidualDirection d, int bin) {
            bump(d, bin, +1);
        });
    }

    const ImagePatch& patch() const { return patch_; }
    const CoocHistogram& hist_h() const { return hist_h_; }
    const CoocHistogram& hist_v() const { return hist_v_; }
    const std::vector<std::int64_t>& counts() const { return counts_; }

    SpamFeature feature() const {
        return detail::finalize_feature(counts_, hist_h_.total, hist_v_.total, cfg_);
    }

    // Counts recomputed from scratch (oracle path for equivalence checks).
    std::vector<std::int64_t> counts_fresh() const {
        auto [h, v] = spam_histograms(patch_, cfg_);
        return detail::collect_counts(h, v, cfg_);
    }

private:
    void bump(ResidualDirection d, int bin, int sign) {
        auto& h = d == ResidualDirection::Horizontal ? hist_h_ : hist_v_;
        h.counts[static_cast<std::size_t>(bin)] += static_cast<std::uint64_t>(sign);
        h.total += static_cast<std::uint64_t>(sign);
        int slot = cfg_.symmetrize ? table_->class_of[static_cast<std::size_t>(bin)] : bin;
        if (d == ResidualDirection::Vertical) slot += half_;
        counts_[static_cast<std::size_t>(slot)] += sign;
    }

    ImagePatch patch_;
    SpamConfig cfg_;
    CoocHistogram hist_h_, hist_v_;
    std::vector<std::int64_t> counts_;
    int half_ = 0;
    const SymmetryTable* table_ = nullptr;
};

// ---------------------------------------------------------------------------
// CSV export: one feature per row; first line carries the config fingerprint.

inline void write_features_csv(std::ostream& os, const std::vector<SpamFeature>& feats,
                               const std::vector<int>& labels, const SpamConfig& cfg) {
    os << "# spam_config=" << cfg.fingerprint() << "\n";
    os << "label";
    int dim = feats.empty() ? 0 : feats.front().dimension();
    for (int i = 0; i < dim; ++i) os << ",f" << i;
    os << "\n";
    os.precision(17);
    for (std::size_t r = 0; r < feats.size(); ++r) {
        os << (r < labels.size() ? labels[r] : -1);
        for (double v : feats[r].values) os << "," << v;
        os << "\n";
    }
}

}  // namespace cfbench
