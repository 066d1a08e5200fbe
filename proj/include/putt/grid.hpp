#pragma once

#include "putt/error.hpp"
#include "putt/qtt_layout.hpp"

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace putt {

/// Dense scalar field on a 2D or 3D power-of-two grid, stored row-major
/// with axis 0 slowest. An optional mask marks observed cells (1 = observed).
struct Grid {
    std::vector<std::size_t> dims;
    std::vector<double> values;
    std::optional<std::vector<std::uint8_t>> mask;

    Grid() = default;
    explicit Grid(std::vector<std::size_t> d, double fill = 0.0) : dims(std::move(d)) {
        values.assign(count(dims), fill);
    }
    Grid(std::vector<std::size_t> d, std::vector<double> v) : dims(std::move(d)), values(std::move(v)) {
        detail::require(values.size() == count(dims), "Grid: value count does not match dims");
    }

    [[nodiscard]] static std::size_t count(const std::vector<std::size_t>& d) {
        std::size_t n = d.empty() ? 0 : 1;
        for (std::size_t x : d) n *= x;
        return n;
    }

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] int spatial_dim() const { return static_cast<int>(dims.size()); }
    [[nodiscard]] bool has_mask() const { return mask.has_value(); }
    [[nodiscard]] bool observed(std::size_t i) const { return !mask || (*mask)[i] != 0; }
    [[nodiscard]] std::size_t observed_count() const {
        if (!mask) return size();
        std::size_t n = 0;
        for (auto m : *mask) n += (m != 0);
        return n;
    }

    [[nodiscard]] std::size_t offset(std::span<const std::size_t> coords) const {
        std::size_t off = 0;
        for (std::size_t a = 0; a < dims.size(); ++a) off = off * dims[a] + coords[a];
        return off;
    }
    [[nodiscard]] double at(std::span<const std::size_t> coords) const { return values[offset(coords)]; }

    [[nodiscard]] bool is_cubic_pow2() const {
        if (dims.empty()) return false;
        for (std::size_t x : dims)
            if (x != dims[0] || !std::has_single_bit(x)) return false;
        return true;
    }

    /// QTT layout of this grid; the grid must be cubic with a power-of-two side >= 2.
    [[nodiscard]] QttLayout layout() const {
        detail::require(dims.size() >= 1 && dims.size() <= 3, "Grid: only 1D/2D/3D grids have a QTT layout");
        detail::require(is_cubic_pow2(), "Grid: side lengths must be equal powers of two");
        detail::require(dims[0] >= 2, "Grid: side length must be at least 2");
        return {static_cast<int>(dims.size()), std::countr_zero(dims[0])};
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

namespace detail {

inline void require_pow2_dims(const std::vector<std::size_t>& dims, const std::string& who) {
    for (std::size_t x : dims)
        if (!std::has_single_bit(x))
            throw FormatError(who + ": dimension " + std::to_string(x) + " is not a power of two");
}

inline void require_same_shape(const Grid& a, const Grid& b, const std::string& who) {
    if (a.dims != b.dims) throw InvalidArgument(who + ": grid shapes differ");
}

} // namespace detail
} // namespace putt
