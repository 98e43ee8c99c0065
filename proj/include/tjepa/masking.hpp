#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "tjepa/data.hpp"
#include "tjepa/errors.hpp"
#include "tjepa/rng.hpp"
#include "tjepa/tensor.hpp"

namespace tjepa {

// Binary mask over the d features; bit 1 = masked/dropped. REG tokens live
// outside the mask domain entirely: masks never index them.
struct Mask {
    std::vector<std::uint8_t> bits;

    Mask() = default;
    explicit Mask(std::vector<std::uint8_t> b) : bits(std::move(b)) {}

    static Mask none(std::size_t d) { return Mask(std::vector<std::uint8_t>(d, 0)); }

    static Mask from_visible(std::size_t d, const std::vector<std::size_t>& visible) {
        Mask m(std::vector<std::uint8_t>(d, 1));
        for (std::size_t i : visible) m.bits[i] = 0;
        return m;
    }

    std::size_t size() const { return bits.size(); }

    std::size_t visible_count() const {
        std::size_t n = 0;
        for (std::uint8_t b : bits) n += b == 0;
        return n;
    }

    std::vector<std::size_t> visible_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i] == 0) out.push_back(i);
        return out;
    }

    Mask complement() const {
        Mask m = *this;
        for (std::uint8_t& b : m.bits) b ^= 1;
        return m;
    }

    bool operator==(const Mask& o) const { return bits == o.bits; }
    bool operator<(const Mask& o) const { return bits < o.bits; }
};

struct MaskSet {
    std::vector<Mask> context_masks;
    std::vector<Mask> target_masks;
    std::string rng_state;  // snapshot taken before sampling, for replay

    bool operator==(const MaskSet& o) const {
        return context_masks == o.context_masks && target_masks == o.target_masks;
    }
    bool operator<(const MaskSet& o) const {
        if (context_masks != o.context_masks) return context_masks < o.context_masks;
        return target_masks < o.target_masks;
    }
};

struct ShareBounds {
    double lo = 0.0;
    double hi = 0.0;
};

namespace detail {

inline std::size_t share_to_count(double share, std::size_t d, std::size_t max_count) {
    long r = std::lround(share * static_cast<double>(d));
    if (r < 1) r = 1;
    if (r > static_cast<long>(max_count)) r = static_cast<long>(max_count);
    return static_cast<std::size_t>(r);
}

// uniform k-subset of {0..d-1} via partial Fisher-Yates
inline std::vector<std::size_t> sample_subset(std::size_t d, std::size_t k, DetRng& rng) {
    std::vector<std::size_t> pool(d);
    for (std::size_t i = 0; i < d; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(d - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

inline std::vector<std::size_t> pick(const std::vector<std::size_t>& from, std::size_t k, DetRng& rng) {
    std::vector<std::size_t> pool = from;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace detail

// Samples |M_target| target masks followed by |M_context| context masks.
// Target visible counts follow clamp(round(s*d), 1, d-1) with s drawn
// uniformly from tgt_share. The union P of target visible sets is capped at
// d-1 features (a draw that would swallow the last free feature is trimmed
// back onto P, preserving the mask's size), so context masks always have a
// non-empty pool: they draw clamp(round(s*d), 1, |complement(P)|) features
// from complement(P) only. Masks within one set may overlap; a context mask
// can never share a visible feature with any target mask.
inline MaskSet sample_mask_set(std::size_t d, std::size_t n_context, std::size_t n_target,
                               ShareBounds ctx_share, ShareBounds tgt_share, DetRng& rng) {
    if (d < 2) throw config_error("mask sampling requires d >= 2");
    if (n_context < 1) throw config_error("mask sampling requires n_context >= 1");
    if (n_target < 1) throw config_error("mask sampling requires n_target >= 1");
    auto check_bounds = [](const char* which, ShareBounds b) {
        if (!(b.lo > 0.0 && b.hi < 1.0))
            throw config_error(std::string(which) + " share bounds violate 0 < min <= max < 1");
        if (!(b.lo <= b.hi))
            throw config_error(std::string(which) + " share bounds violate min <= max");
    };
    check_bounds("context", ctx_share);
    check_bounds("target", tgt_share);

    MaskSet out;
    out.rng_state = rng.serialize();

    std::vector<std::uint8_t> in_pool(d, 0);  // P = union of target visible sets
    std::size_t pool_size = 0;
    out.target_masks.reserve(n_target);
    for (std::size_t t = 0; t < n_target; ++t) {
        double s = rng.uniform(tgt_share.lo, tgt_share.hi);
        std::size_t k = detail::share_to_count(s, d, d - 1);
        std::vector<std::size_t> visible = detail::sample_subset(d, k, rng);
        // trim back onto P if this draw would leave no feature for the context
        std::vector<std::uint8_t> in_set(d, 0);
        for (std::size_t i : visible) in_set[i] = 1;
        std::size_t fresh = 0;
        for (std::size_t i : visible) fresh += in_pool[i] ? 0 : 1;
        if (pool_size + fresh > d - 1) {
            std::size_t excess = pool_size + fresh - (d - 1);
            std::vector<std::size_t> fresh_ids, pool_only;
            for (std::size_t i : visible)
                if (!in_pool[i]) fresh_ids.push_back(i);
            for (std::size_t i = 0; i < d; ++i)
                if (in_pool[i] && !in_set[i]) pool_only.push_back(i);
            std::vector<std::size_t> drop = detail::pick(fresh_ids, excess, rng);
            std::vector<std::size_t> swap_in = detail::pick(pool_only, excess, rng);
            for (std::size_t i : drop) in_set[i] = 0;
            for (std::size_t i : swap_in) in_set[i] = 1;
            visible.clear();
            for (std::size_t i = 0; i < d; ++i)
                if (in_set[i]) visible.push_back(i);
        }
        for (std::size_t i : visible)
            if (!in_pool[i]) {
                in_pool[i] = 1;
                ++pool_size;
            }
        out.target_masks.push_back(Mask::from_visible(d, visible));
    }

    std::vector<std::size_t> complement;
    for (std::size_t i = 0; i < d; ++i)
        if (!in_pool[i]) complement.push_back(i);

    out.context_masks.reserve(n_context);
    for (std::size_t c = 0; c < n_context; ++c) {
        double s = rng.uniform(ctx_share.lo, ctx_share.hi);
        std::size_t k = detail::share_to_count(s, d, complement.size());
        out.context_masks.push_back(Mask::from_visible(d, detail::pick(complement, k, rng)));
    }
    return out;
}

// Ordered sublist of unmasked features with their original indices, feeding
// the index embeddings downstream.
template <typename Real>
std::vector<std::pair<std::size_t, std::vector<Real>>> apply_context_mask(
    const EncodedSample<Real>& encoded, const Mask& m) {
    if (encoded.feature_count() != m.size())
        throw shape_error("apply_context_mask: mask length " + std::to_string(m.size()) +
                          " vs " + std::to_string(encoded.feature_count()) + " features");
    std::vector<std::pair<std::size_t, std::vector<Real>>> kept;
    kept.reserve(m.visible_count());
    for (std::size_t j = 0; j < m.size(); ++j)
        if (m.bits[j] == 0) kept.emplace_back(j, encoded.features[j]);
    return kept;
}

// Row selection on an encoded representation: rows where the mask bit is 0,
// order preserved. The REG rows must already be stripped by the caller.
template <typename Real>
Tensor<Real> apply_target_mask(const Tensor<Real>& h_target, const Mask& m) {
    if (h_target.rows() != m.size())
        throw shape_error("apply_target_mask: tensor has " + std::to_string(h_target.rows()) +
                          " rows, mask expects " + std::to_string(m.size()));
    std::size_t h = h_target.cols();
    Tensor<Real> out({m.visible_count(), h});
    std::size_t r = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m.bits[i] == 0) {
            std::copy(h_target.data() + i * h, h_target.data() + (i + 1) * h, out.data() + r * h);
            ++r;
        }
    return out;
}

}  // namespace tjepa
