#pragma once

#include "putt/error.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace putt {

using CoreIndex = std::uint32_t;

/// Maps a 2^D-per-side grid in d spatial dimensions onto D cores of
/// physical size 2^d.
///
/// Core k (0-based) holds the k-th most significant bit of every axis, so
/// the first core selects a quadrant (2D) or octant (3D) and later cores
/// address finer and finer cells. Inside a core the axis bits are packed
/// x-major: index = bit_x * 2^(d-1) + bit_y * 2^(d-2) + ...
struct QttLayout {
    int spatial_dim = 2;
    int depth = 1;

    QttLayout() = default;
    QttLayout(int d, int D) : spatial_dim(d), depth(D) {
        detail::require(d >= 1 && d <= 3, "QttLayout: spatial_dim must be 1, 2 or 3");
        detail::require(D >= 1 && D * d < 63, "QttLayout: depth out of range");
    }

    [[nodiscard]] std::size_t side_length() const { return std::size_t{1} << depth; }
    [[nodiscard]] std::size_t core_phys_dim() const { return std::size_t{1} << spatial_dim; }
    [[nodiscard]] std::size_t total_entries() const {
        return std::size_t{1} << (static_cast<std::size_t>(depth) * spatial_dim);
    }
    [[nodiscard]] std::vector<std::size_t> phys_dims() const {
        return std::vector<std::size_t>(static_cast<std::size_t>(depth), core_phys_dim());
    }
    [[nodiscard]] QttLayout refined() const { return {spatial_dim, depth + 1}; }
    [[nodiscard]] QttLayout coarsened() const { return {spatial_dim, depth - 1}; }

    friend bool operator==(const QttLayout&, const QttLayout&) = default;
};

/// A batch of per-core index tuples stored row-major (one row per sample).
class IndexBatch {
public:
    IndexBatch() = default;
    explicit IndexBatch(std::size_t depth) : depth_(depth) {}
    IndexBatch(std::size_t depth, std::vector<CoreIndex> flat) : depth_(depth), flat_(std::move(flat)) {
        detail::require(depth_ > 0 && flat_.size() % depth_ == 0, "IndexBatch: ragged data");
    }

    [[nodiscard]] std::size_t depth() const { return depth_; }
    [[nodiscard]] std::size_t size() const { return depth_ == 0 ? 0 : flat_.size() / depth_; }
    [[nodiscard]] bool empty() const { return size() == 0; }

    [[nodiscard]] std::span<const CoreIndex> operator[](std::size_t i) const {
        return {flat_.data() + i * depth_, depth_};
    }
    void push_back(std::span<const CoreIndex> row) {
        detail::require(row.size() == depth_, "IndexBatch: row length differs from depth");
        flat_.insert(flat_.end(), row.begin(), row.end());
    }
    void reserve(std::size_t n) { flat_.reserve(n * depth_); }

private:
    std::size_t depth_ = 0;
    std::vector<CoreIndex> flat_;
};

namespace detail {

inline void check_coords(const QttLayout& layout, std::span<const std::size_t> coords) {
    require(coords.size() == static_cast<std::size_t>(layout.spatial_dim),
            "coordinate tuple length differs from spatial_dim");
    for (std::size_t c : coords)
        require(c < layout.side_length(), "coordinate " + std::to_string(c) + " outside [0, " +
                                              std::to_string(layout.side_length()) + ")");
}

} // namespace detail

/// Cartesian coordinates -> per-core indices (length D, each in [0, 2^d)).
inline void coords_to_qtt(const QttLayout& layout, std::span<const std::size_t> coords,
                          std::span<CoreIndex> out) {
    detail::check_coords(layout, coords);
    detail::require(out.size() == static_cast<std::size_t>(layout.depth), "coords_to_qtt: output length");
    const int d = layout.spatial_dim;
    for (int k = 0; k < layout.depth; ++k) {
        const int shift = layout.depth - 1 - k;
        CoreIndex j = 0;
        for (int a = 0; a < d; ++a) j |= static_cast<CoreIndex>((coords[a] >> shift) & 1U) << (d - 1 - a);
        out[k] = j;
    }
}

[[nodiscard]] inline std::vector<CoreIndex> coords_to_qtt(const QttLayout& layout,
                                                          std::span<const std::size_t> coords) {
    std::vector<CoreIndex> out(static_cast<std::size_t>(layout.depth));
    coords_to_qtt(layout, coords, out);
    return out;
}

/// Exact inverse of coords_to_qtt.
[[nodiscard]] inline std::vector<std::size_t> qtt_to_coords(const QttLayout& layout,
                                                            std::span<const CoreIndex> idxs) {
    detail::require(idxs.size() == static_cast<std::size_t>(layout.depth), "qtt_to_coords: wrong index count");
    const int d = layout.spatial_dim;
    std::vector<std::size_t> coords(static_cast<std::size_t>(d), 0);
    for (int k = 0; k < layout.depth; ++k) {
        detail::require(idxs[k] < layout.core_phys_dim(), "qtt_to_coords: core index out of range");
        for (int a = 0; a < d; ++a) coords[a] = (coords[a] << 1) | ((idxs[k] >> (d - 1 - a)) & 1U);
    }
    return coords;
}

/// Position of a coordinate tuple in the interleaved (quantized) linear order,
/// i.e. sum_k j_k * m^(D-1-k).
[[nodiscard]] inline std::size_t qtt_linear_index(const QttLayout& layout, std::span<const std::size_t> coords) {
    detail::check_coords(layout, coords);
    const int d = layout.spatial_dim;
    std::size_t lin = 0;
    for (int k = 0; k < layout.depth; ++k) {
        const int shift = layout.depth - 1 - k;
        for (int a = 0; a < d; ++a) lin = (lin << 1) | ((coords[a] >> shift) & 1U);
    }
    return lin;
}

/// Row-major grid offset (axis 0 slowest) -> quantized linear index.
/// The permutation is a pure bit interleave.
[[nodiscard]] inline std::vector<std::size_t> quantize_permutation(const QttLayout& layout) {
    const std::size_t n = layout.total_entries();
    const int d = layout.spatial_dim;
    const int D = layout.depth;
    std::vector<std::size_t> perm(n);
    for (std::size_t off = 0; off < n; ++off) {
        // coordinate of axis a occupies bits [(d-1-a)*D, (d-a)*D) of the row-major offset
        std::size_t lin = 0;
        for (int k = 0; k < D; ++k) {
            const int shift = D - 1 - k;
            for (int a = 0; a < d; ++a) {
                const std::size_t coord = (off >> ((d - 1 - a) * D)) & ((std::size_t{1} << D) - 1);
                lin = (lin << 1) | ((coord >> shift) & 1U);
            }
        }
        perm[off] = lin;
    }
    return perm;
}

} // namespace putt
