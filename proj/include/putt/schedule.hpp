#pragma once

#include "putt/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace putt {

/// Staged learning-rate schedule.
///
/// Stage l spans [start_l, end_l) where the boundaries are the upsampling
/// iterations. Its peak is base_lr * beta^l. Stages after an upsample ramp
/// linearly from 10% of the peak to the peak over warmup_iters, then decay
/// exponentially so the stage end reaches alpha * peak.
struct LrSchedule {
    double base_lr = 5e-3;
    double alpha = 0.1;
    double beta = 0.9;
    int warmup_iters = 50;
    std::vector<int> boundaries;
    int total_iters = 0;

    void validate() const {
        detail::require(base_lr > 0.0, "LrSchedule: base_lr must be positive");
        detail::require(alpha > 0.0 && alpha <= 1.0, "LrSchedule: alpha must be in (0, 1]");
        detail::require(beta > 0.0 && beta <= 1.0, "LrSchedule: beta must be in (0, 1]");
        detail::require(warmup_iters >= 0, "LrSchedule: warmup_iters must be >= 0");
        detail::require(total_iters >= 1, "LrSchedule: total_iters must be >= 1");
        for (std::size_t i = 0; i < boundaries.size(); ++i) {
            detail::require(boundaries[i] > 0 && boundaries[i] < total_iters,
                            "LrSchedule: upsample iterations must lie in (0, total_iters)");
            if (i > 0) detail::require(boundaries[i] > boundaries[i - 1], "LrSchedule: boundaries must increase");
        }
    }

    [[nodiscard]] int stage_start(std::size_t l) const { return l == 0 ? 0 : boundaries.at(l - 1); }
    [[nodiscard]] int stage_end(std::size_t l) const { return l < boundaries.size() ? boundaries[l] : total_iters; }
    /// Number of upsamples completed before `iter`.
    [[nodiscard]] std::size_t stage_of(int iter) const {
        return static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), iter) -
                                        boundaries.begin());
    }
};

/// Learning rate at `iter` inside stage `completed_upsamples`. `iter` may equal
/// the stage end, which yields alpha * peak.
[[nodiscard]] inline double lr_at(const LrSchedule& s, int iter, std::size_t completed_upsamples) {
    detail::require(completed_upsamples <= s.boundaries.size(), "lr_at: more upsamples than boundaries");
    const int a = s.stage_start(completed_upsamples);
    const int b = s.stage_end(completed_upsamples);
    detail::require(iter >= a && iter <= b, "lr_at: iteration " + std::to_string(iter) + " outside its stage");
    const double peak = s.base_lr * std::pow(s.beta, static_cast<double>(completed_upsamples));
    const int warm = completed_upsamples > 0 ? std::min(s.warmup_iters, b - a) : 0;
    const int t = iter - a;
    if (t < warm) return peak * (0.1 + 0.9 * static_cast<double>(t) / static_cast<double>(warm));
    const int span = b - a - warm;
    if (span <= 0) return peak;
    return peak * std::pow(s.alpha, static_cast<double>(t - warm) / static_cast<double>(span));
}

[[nodiscard]] inline double lr_at(const LrSchedule& s, int iter) { return lr_at(s, iter, s.stage_of(iter)); }

enum class LrAdaptation { none, noise, missing_data };

/// Base learning rate adapted to the task:
/// noise level sigma -> base * factor^sigma (factor defaults to 0.1),
/// observed fraction p -> base * factor^(1 - p).
[[nodiscard]] inline double adapt_base_lr(double base, LrAdaptation mode, double param, double factor = 0.1) {
    detail::require(base > 0.0, "adapt_base_lr: base must be positive");
    detail::require(factor > 0.0, "adapt_base_lr: factor must be positive");
    switch (mode) {
        case LrAdaptation::none:
            return base;
        case LrAdaptation::noise:
            detail::require(param >= 0.0, "adapt_base_lr: noise level must be >= 0");
            return base * std::pow(factor, param);
        case LrAdaptation::missing_data:
            detail::require(param >= 0.0 && param <= 1.0, "adapt_base_lr: observed fraction must be in [0, 1]");
            return base * std::pow(factor, 1.0 - param);
    }
    throw InvalidArgument("adapt_base_lr: unknown mode");
}

[[nodiscard]] inline LrAdaptation parse_lr_adaptation(const std::string& name) {
    if (name == "none") return LrAdaptation::none;
    if (name == "noise") return LrAdaptation::noise;
    if (name == "missing" || name == "missing_data") return LrAdaptation::missing_data;
    throw InvalidArgument("unknown learning-rate adaptation mode \"" + name + "\"");
}

} // namespace putt
