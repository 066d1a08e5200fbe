#pragma once

#include "putt/error.hpp"
#include "putt/grid.hpp"
#include "putt/qtt_layout.hpp"
#include "putt/tensor_train.hpp"

#include <cstdlib>
#include <string>
#include <vector>

namespace putt {

inline constexpr std::size_t kDefaultSafetyCap = std::size_t{1} << 24;

/// Maximum number of dense entries materialized by to_dense and friends.
/// QTT_SAFETY_CAP overrides the default of 2^24.
[[nodiscard]] inline std::size_t safety_cap() {
    if (const char* env = std::getenv("QTT_SAFETY_CAP")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return kDefaultSafetyCap;
}

/// Grid (row-major) -> dense tensor in interleaved QTT order.
[[nodiscard]] inline std::vector<double> quantize_grid(const Grid& grid, const QttLayout& layout) {
    detail::require(static_cast<int>(grid.dims.size()) == layout.spatial_dim, "quantize_grid: dimension mismatch");
    for (std::size_t x : grid.dims)
        detail::require(x == layout.side_length(), "quantize_grid: side length must equal 2^D");
    const auto perm = quantize_permutation(layout);
    std::vector<double> out(grid.size());
    for (std::size_t off = 0; off < perm.size(); ++off) out[perm[off]] = grid.values[off];
    return out;
}

/// Inverse of quantize_grid.
[[nodiscard]] inline Grid unquantize(std::span<const double> dense, const QttLayout& layout) {
    detail::require(dense.size() == layout.total_entries(), "unquantize: entry count differs from layout");
    Grid g(std::vector<std::size_t>(static_cast<std::size_t>(layout.spatial_dim), layout.side_length()));
    const auto perm = quantize_permutation(layout);
    for (std::size_t off = 0; off < perm.size(); ++off) g.values[off] = dense[perm[off]];
    return g;
}

/// Prefix products: env[k] has shape [n_0 * ... * n_{k-1}, R_k] with rows in
/// core-major order. env[D] is the full contraction as a column.
[[nodiscard]] inline std::vector<RowMatrix> left_environments(const TensorTrain& tt) {
    std::vector<RowMatrix> env(tt.depth() + 1);
    env[0] = RowMatrix::Ones(1, 1);
    for (std::size_t k = 0; k < tt.depth(); ++k) {
        const auto& c = tt.core(k);
        RowMatrix prod = env[k] * c.right_unfolding();  // [P, n * R']
        // reinterpret as [P * n, R'] (same memory, row-major)
        env[k + 1] = ConstRowMatrixMap(prod.data(), prod.rows() * static_cast<Eigen::Index>(c.phys()),
                                       static_cast<Eigen::Index>(c.right()));
    }
    return env;
}

/// Suffix products: env[k] has shape [R_{k+1}, n_{k+1} * ... * n_{D-1}].
/// env[D-1] is [1, 1].
[[nodiscard]] inline std::vector<RowMatrix> right_environments(const TensorTrain& tt) {
    const std::size_t D = tt.depth();
    std::vector<RowMatrix> env(D);
    env[D - 1] = RowMatrix::Ones(1, 1);
    for (std::size_t k = D - 1; k > 0; --k) {
        const auto& c = tt.core(k);
        RowMatrix prod = c.left_unfolding() * env[k];  // [R_k * n, S]
        env[k - 1] = ConstRowMatrixMap(prod.data(), static_cast<Eigen::Index>(c.left()),
                                       prod.cols() * static_cast<Eigen::Index>(c.phys()));
    }
    return env;
}

/// All entries of the TT in core-major (quantized) order.
[[nodiscard]] inline std::vector<double> contract_full(const TensorTrain& tt, std::size_t cap = safety_cap()) {
    std::size_t n = 1;
    for (std::size_t p : tt.phys_dims()) {
        if (n > cap / p) throw ResourceLimit("contract_full: dense size exceeds safety cap " + std::to_string(cap));
        n *= p;
    }
    if (n > cap) throw ResourceLimit("contract_full: dense size exceeds safety cap " + std::to_string(cap));
    RowMatrix acc = RowMatrix::Ones(1, 1);
    for (std::size_t k = 0; k < tt.depth(); ++k) {
        const auto& c = tt.core(k);
        RowMatrix prod = acc * c.right_unfolding();
        acc = ConstRowMatrixMap(prod.data(), prod.rows() * static_cast<Eigen::Index>(c.phys()),
                                static_cast<Eigen::Index>(c.right()));
    }
    return {acc.data(), acc.data() + acc.size()};
}

/// Reconstructs the grid represented by a QTT.
[[nodiscard]] inline Grid to_dense(const TensorTrain& tt, const QttLayout& layout, std::size_t cap = safety_cap()) {
    detail::require(tt.depth() == static_cast<std::size_t>(layout.depth), "to_dense: TT depth differs from layout");
    for (std::size_t p : tt.phys_dims())
        detail::require(p == layout.core_phys_dim(), "to_dense: core physical size differs from layout");
    const auto dense = contract_full(tt, cap);
    return unquantize(dense, layout);
}

[[nodiscard]] inline double frobenius_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace putt
