#pragma once

#include "putt/error.hpp"
#include "putt/qtt_layout.hpp"
#include "putt/tensor_train.hpp"
#include "putt/ttsvd.hpp"

#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace putt {

/// Rank cap meaning "no truncation".
inline constexpr std::size_t kUnboundedRank = std::numeric_limits<std::size_t>::max();

namespace detail {

// One-dimensional prolongation cores, indexed [borrow_out][out_bit][in_bit][borrow_in].
//
// Fine sample 2c+1 copies coarse sample c; fine sample 2c averages coarse
// samples c-1 and c (c-1 = -1 contributes nothing). The bond carries the
// borrow of the decrement c -> c-1 from the least significant core upward.
inline MpoCore prolongation_core_1d(std::size_t k, std::size_t D) {
    if (k == D) {
        MpoCore c(2, 2, 1, 1);
        c(0, 1, 0, 0) = 1.0;
        c(0, 0, 0, 0) = 0.5;
        c(1, 0, 0, 0) = 0.5;
        return c;
    }
    const std::size_t left = (k == 0) ? 1 : 2;
    MpoCore c(left, 2, 2, 2);
    c(0, 0, 0, 0) = 1.0;  // no borrow: identity
    c(0, 1, 1, 0) = 1.0;
    c(0, 1, 0, 1) = 1.0;  // borrow absorbed by a set bit
    if (left == 2) c(1, 0, 1, 1) = 1.0;  // borrow propagates past a clear bit
    return c;
}

} // namespace detail

/// Prolongation operator mapping a 2^D vector to its 2^(D+1) linear
/// interpolant, as a D+1 core MPO of bond dimension 2.
[[nodiscard]] inline Mpo prolongation_mpo_1d(int D) {
    detail::require(D >= 1, "prolongation_mpo_1d: D must be >= 1");
    std::vector<MpoCore> cores;
    for (std::size_t k = 0; k <= static_cast<std::size_t>(D); ++k)
        cores.push_back(detail::prolongation_core_1d(k, static_cast<std::size_t>(D)));
    return Mpo(std::move(cores));
}

/// Tensor product of d one-dimensional prolongation operators, with axis bits
/// packed into each core the same way as the QTT layout (x-major).
[[nodiscard]] inline Mpo prolongation_mpo_nd(const QttLayout& layout) {
    const int d = layout.spatial_dim;
    detail::require(d >= 1 && d <= 3, "prolongation_mpo_nd: spatial_dim must be 1, 2 or 3");
    const auto D = static_cast<std::size_t>(layout.depth);
    std::vector<MpoCore> cores;
    for (std::size_t k = 0; k <= D; ++k) {
        const MpoCore base = detail::prolongation_core_1d(k, D);
        std::size_t left = 1, out = 1, in = 1, right = 1;
        for (int a = 0; a < d; ++a) {
            left *= base.left();
            out *= base.out();
            in *= base.in();
            right *= base.right();
        }
        MpoCore c(left, out, in, right);
        for (std::size_t s = 0; s < left; ++s)
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t i = 0; i < in; ++i)
                    for (std::size_t t = 0; t < right; ++t) {
                        double v = 1.0;
                        for (int a = 0; a < d && v != 0.0; ++a) {
                            // digit of axis a in a mixed-radix packing, x most significant
                            auto digit = [&](std::size_t packed, std::size_t radix) {
                                std::size_t p = packed;
                                for (int b = d - 1; b > a; --b) p /= radix;
                                return p % radix;
                            };
                            v *= base(digit(s, base.left()), digit(o, base.out()), digit(i, base.in()),
                                      digit(t, base.right()));
                        }
                        c(s, o, i, t) = v;
                    }
        cores.push_back(std::move(c));
    }
    return Mpo(std::move(cores));
}

/// Contracts an MPO with a TT core by core. Output bond at each cut is R_k * S_k.
/// MPO cores beyond the TT depth must have a single input index.
[[nodiscard]] inline TensorTrain apply_mpo(const Mpo& mpo, const TensorTrain& tt) {
    detail::require(mpo.size() >= tt.depth(), "apply_mpo: MPO shorter than TT");
    std::vector<TtCore> out;
    out.reserve(mpo.size());
    for (std::size_t k = 0; k < mpo.size(); ++k) {
        const auto& m = mpo.core(k);
        const bool has_tt = k < tt.depth();
        const std::size_t ra = has_tt ? tt.core(k).left() : 1;
        const std::size_t rb = has_tt ? tt.core(k).right() : 1;
        const std::size_t n_in = has_tt ? tt.core(k).phys() : 1;
        if (m.in() != n_in)
            throw InvalidArgument("apply_mpo: MPO input dimension " + std::to_string(m.in()) +
                                  " differs from TT physical dimension " + std::to_string(n_in) + " at core " +
                                  std::to_string(k));
        TtCore c(ra * m.left(), m.out(), rb * m.right());
        for (std::size_t a = 0; a < ra; ++a)
            for (std::size_t s = 0; s < m.left(); ++s)
                for (std::size_t o = 0; o < m.out(); ++o)
                    for (std::size_t i = 0; i < n_in; ++i)
                        for (std::size_t t = 0; t < m.right(); ++t) {
                            const double w = m(s, o, i, t);
                            if (w == 0.0) continue;
                            for (std::size_t b = 0; b < rb; ++b) {
                                const double x = has_tt ? tt.core(k)(a, i, b) : 1.0;
                                c(a * m.left() + s, o, b * m.right() + t) += w * x;
                            }
                        }
        out.push_back(std::move(c));
    }
    return TensorTrain(std::move(out));
}

/// One upsampling step: interpolate to depth D+1, then truncate to r_max.
[[nodiscard]] inline std::pair<TensorTrain, QttLayout> prolong(const TensorTrain& tt, const QttLayout& layout,
                                                               std::size_t r_max) {
    detail::require(tt.depth() == static_cast<std::size_t>(layout.depth), "prolong: TT depth differs from layout");
    for (std::size_t p : tt.phys_dims())
        detail::require(p == layout.core_phys_dim(), "prolong: TT core size differs from layout");
    const auto lifted = apply_mpo(prolongation_mpo_nd(layout), tt);
    return {truncate(lifted, r_max), layout.refined()};
}

} // namespace putt
