#pragma once

#include "putt/error.hpp"
#include "putt/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace putt {

namespace detail {

// Visits every coarse cell with the list of its 2^d fine offsets.
template <typename Fn>
void for_each_block(const std::vector<std::size_t>& fine_dims, Fn&& fn) {
    const std::size_t d = fine_dims.size();
    std::vector<std::size_t> coarse(d);
    for (std::size_t a = 0; a < d; ++a) coarse[a] = fine_dims[a] / 2;
    const std::size_t n_coarse = Grid::count(coarse);
    const std::size_t block = std::size_t{1} << d;
    std::vector<std::size_t> cc(d), offsets(block);
    for (std::size_t ci = 0; ci < n_coarse; ++ci) {
        std::size_t rem = ci;
        for (std::size_t a = d; a-- > 0;) {
            cc[a] = rem % coarse[a];
            rem /= coarse[a];
        }
        for (std::size_t b = 0; b < block; ++b) {
            std::size_t off = 0;
            for (std::size_t a = 0; a < d; ++a) off = off * fine_dims[a] + 2 * cc[a] + ((b >> (d - 1 - a)) & 1U);
            offsets[b] = off;
        }
        fn(ci, offsets);
    }
}

inline std::vector<std::size_t> halved_dims(const Grid& g, const char* who) {
    std::vector<std::size_t> out;
    for (std::size_t x : g.dims) {
        if (x < 2 || x % 2 != 0) throw InvalidArgument(std::string(who) + ": every side must be even and >= 2");
        out.push_back(x / 2);
    }
    return out;
}

} // namespace detail

/// Half resolution per axis; each output cell is the mean of its 2^d block.
/// Any mask is dropped.
[[nodiscard]] inline Grid downsample_avg(const Grid& grid) {
    Grid out(detail::halved_dims(grid, "downsample_avg"));
    const double inv = 1.0 / static_cast<double>(std::size_t{1} << grid.dims.size());
    detail::for_each_block(grid.dims, [&](std::size_t ci, const std::vector<std::size_t>& offs) {
        double s = 0.0;
        for (std::size_t o : offs) s += grid.values[o];
        out.values[ci] = s * inv;
    });
    return out;
}

/// Masked average pooling: mean over observed cells of each block. A block
/// with no observed cell yields value 0 and stays unobserved.
[[nodiscard]] inline Grid masked_avg_pool(const Grid& grid) {
    detail::require(grid.has_mask(), "masked_avg_pool: grid has no mask");
    Grid out(detail::halved_dims(grid, "masked_avg_pool"));
    out.mask = std::vector<std::uint8_t>(out.size(), 0);
    const auto& mask = *grid.mask;
    detail::for_each_block(grid.dims, [&](std::size_t ci, const std::vector<std::size_t>& offs) {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t o : offs)
            if (mask[o]) {
                s += grid.values[o];
                ++n;
            }
        if (n > 0) {
            out.values[ci] = s / static_cast<double>(n);
            (*out.mask)[ci] = 1;
        }
    });
    return out;
}

/// Coarse-to-fine pyramid; the last element is the input itself.
[[nodiscard]] inline std::vector<Grid> build_pyramid(const Grid& grid, int levels) {
    const auto layout = grid.layout();
    if (levels < 0 || levels > layout.depth - 1)
        throw InvalidArgument("build_pyramid: levels must be in [0, " + std::to_string(layout.depth - 1) + "]");
    std::vector<Grid> pyr{grid};
    for (int l = 0; l < levels; ++l)
        pyr.push_back(pyr.back().has_mask() ? masked_avg_pool(pyr.back()) : downsample_avg(pyr.back()));
    std::reverse(pyr.begin(), pyr.end());
    return pyr;
}

enum class NoiseKind { gaussian, laplace };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double scale = 0.0;  // sigma for gaussian, b for laplace
    std::uint64_t seed = 0;
};

/// Adds i.i.d. noise to every value (no clamping). The mask is kept.
[[nodiscard]] inline Grid add_noise(const Grid& grid, const NoiseSpec& spec) {
    detail::require(spec.scale >= 0.0 && std::isfinite(spec.scale), "add_noise: scale must be >= 0");
    Grid out = grid;
    if (spec.scale == 0.0) return out;
    std::mt19937_64 rng(spec.seed);
    if (spec.kind == NoiseKind::gaussian) {
        std::normal_distribution<double> nd(0.0, spec.scale);
        for (double& v : out.values) v += nd(rng);
    } else {
        // inverse CDF on u in (-1/2, 1/2)
        std::uniform_real_distribution<double> ud(-0.5, 0.5);
        for (double& v : out.values) {
            double u = ud(rng);
            while (u == -0.5) u = ud(rng);
            v += -spec.scale * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
        }
    }
    return out;
}

/// Exactly round(p * N) observed cells chosen uniformly without replacement.
[[nodiscard]] inline std::vector<std::uint8_t> random_mask(const std::vector<std::size_t>& dims,
                                                           double observed_fraction, std::uint64_t seed) {
    detail::require(observed_fraction >= 0.0 && observed_fraction <= 1.0, "random_mask: p must be in [0, 1]");
    const std::size_t n = Grid::count(dims);
    const auto k = static_cast<std::size_t>(std::llround(observed_fraction * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // partial Fisher-Yates: the first k slots become a uniform k-subset
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i < k; ++i) mask[idx[i]] = 1;
    return mask;
}

} // namespace putt
