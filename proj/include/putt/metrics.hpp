#pragma once

#include "putt/error.hpp"
#include "putt/grid.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace putt {

struct MetricReport {
    double psnr = 0.0;
    double ssim = 0.0;
    double mse = 0.0;
    std::size_t params = 0;
    double compression_ratio = 0.0;
};

/// Mean squared difference, optionally restricted to cells where select[i] != 0.
[[nodiscard]] inline double mse(const Grid& a, const Grid& b, const std::vector<std::uint8_t>* select = nullptr) {
    detail::require_same_shape(a, b, "mse");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (select && !(*select)[i]) continue;
        const double d = a.values[i] - b.values[i];
        s += d * d;
        ++n;
    }
    detail::require(n > 0, "mse: no cells selected");
    return s / static_cast<double>(n);
}

[[nodiscard]] inline double psnr_from_mse(double m, double peak = 1.0) {
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

/// 10 log10(peak^2 / MSE); +inf when the grids are identical.
[[nodiscard]] inline double psnr(const Grid& a, const Grid& b, double peak = 1.0) {
    return psnr_from_mse(mse(a, b), peak);
}

namespace detail {

inline constexpr int kSsimWindow = 11;

inline std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> w{};
    double s = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - kSsimWindow / 2;
        w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        s += w[i];
    }
    for (double& x : w) x /= s;
    return w;
}

// "valid" separable Gaussian filter of an h x w image.
inline std::vector<double> filter_valid(const double* img, std::size_t h, std::size_t w) {
    const auto k = ssim_kernel();
    const std::size_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
    std::vector<double> tmp(h * ow), out(oh * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) s += k[t] * img[y * w + x + t];
            tmp[y * ow + x] = s;
        }
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) s += k[t] * tmp[(y + t) * ow + x];
            out[y * ow + x] = s;
        }
    return out;
}

inline double ssim_2d(const double* a, const double* b, std::size_t h, std::size_t w) {
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::size_t n = h * w;
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w), mu_b = filter_valid(b, h, w);
    const auto s_aa = filter_valid(aa.data(), h, w), s_bb = filter_valid(bb.data(), h, w),
               s_ab = filter_valid(ab.data(), h, w);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = s_aa[i] - mu_a[i] * mu_a[i];
        const double vb = s_bb[i] - mu_b[i] * mu_b[i];
        const double cov = s_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

} // namespace detail

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions.
/// 3D grids are scored slice-wise along the last axis and averaged.
[[nodiscard]] inline double ssim(const Grid& a, const Grid& b) {
    detail::require_same_shape(a, b, "ssim");
    const auto& d = a.dims;
    if (d.size() == 2) {
        if (d[0] < detail::kSsimWindow || d[1] < detail::kSsimWindow)
            throw InvalidArgument("ssim: grid sides must be >= 11");
        return detail::ssim_2d(a.values.data(), b.values.data(), d[0], d[1]);
    }
    if (d.size() == 3) {
        if (d[0] < detail::kSsimWindow || d[1] < detail::kSsimWindow)
            throw InvalidArgument("ssim: grid sides must be >= 11");
        const std::size_t h = d[0], w = d[1], depth = d[2];
        std::vector<double> sa(h * w), sb(h * w);
        double total = 0.0;
        for (std::size_t z = 0; z < depth; ++z) {
            for (std::size_t i = 0; i < h * w; ++i) {
                sa[i] = a.values[i * depth + z];
                sb[i] = b.values[i * depth + z];
            }
            total += detail::ssim_2d(sa.data(), sb.data(), h, w);
        }
        return total / static_cast<double>(depth);
    }
    throw InvalidArgument("ssim: only 2D and 3D grids are supported");
}

/// Dense entry count divided by model parameter count.
[[nodiscard]] inline double compression_ratio(std::size_t dense_entries, std::size_t params) {
    detail::require(params >= 1, "compression_ratio: params must be >= 1");
    return static_cast<double>(dense_entries) / static_cast<double>(params);
}

} // namespace putt
