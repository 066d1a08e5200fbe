#pragma once

#include "putt/adam.hpp"
#include "putt/dense.hpp"
#include "putt/error.hpp"
#include "putt/grid.hpp"
#include "putt/loss.hpp"
#include "putt/prolongation.hpp"
#include "putt/schedule.hpp"
#include "putt/tensor_train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace putt {

struct TrainConfig {
    std::size_t r_max = 64;
    int total_iters = 1024;
    std::vector<int> upsample_iters;
    std::size_t batch_size = 512 * 512;
    std::uint64_t seed = 0;
    double init_sigma = 0.1;
    InitScale init_scale = InitScale::entry;

    double base_lr = 5e-3;
    double alpha = 0.1;
    double beta = 0.9;
    int warmup_iters = 50;

    /// Optional rank growth: at each listed iteration every bond grows by
    /// grow_delta, capped at grow_cap.
    std::vector<int> grow_iters;
    std::size_t grow_delta = 0;
    std::size_t grow_cap = 0;

    void validate() const {
        detail::require(r_max >= 1, "TrainConfig: r_max must be >= 1");
        detail::require(total_iters >= 1, "TrainConfig: total_iters must be >= 1");
        detail::require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        detail::require(init_sigma > 0.0, "TrainConfig: init_sigma must be positive");
        for (std::size_t i = 0; i < upsample_iters.size(); ++i) {
            detail::require(upsample_iters[i] > 0 && upsample_iters[i] < total_iters,
                            "TrainConfig: upsample iterations must lie in (0, total_iters)");
            if (i > 0)
                detail::require(upsample_iters[i] > upsample_iters[i - 1],
                                "TrainConfig: upsample iterations must be strictly increasing");
        }
        for (int g : grow_iters) detail::require(g >= 0 && g < total_iters, "TrainConfig: grow iteration out of range");
        if (!grow_iters.empty()) detail::require(grow_delta >= 1, "TrainConfig: grow_delta must be >= 1");
        schedule().validate();
    }

    [[nodiscard]] LrSchedule schedule() const {
        return LrSchedule{base_lr, alpha, beta, warmup_iters, upsample_iters, total_iters};
    }
};

struct TraceRow {
    int iter = 0;
    int level = 0;
    double lr = 0.0;
    double loss = 0.0;
};

/// Snapshot handed to progress callbacks after every optimizer step.
struct Progress {
    int iter;
    int level;
    const QttLayout& layout;
    const TensorTrain& tt;
    double lr;
    double loss;
};
using ProgressFn = std::function<void(const Progress&)>;

struct TrainResult {
    TensorTrain tt;
    QttLayout layout;
    std::vector<TraceRow> trace;
};

/// Training target at one resolution, held in quantized (core-major) order.
class LevelTarget {
public:
    explicit LevelTarget(const Grid& grid) : layout_(grid.layout()), values_(quantize_grid(grid, layout_)) {
        const auto perm = quantize_permutation(layout_);
        for (std::size_t off = 0; off < grid.size(); ++off)
            if (grid.observed(off)) observed_.push_back(perm[off]);
        std::sort(observed_.begin(), observed_.end());
        if (observed_.empty()) throw InvalidArgument("training target has no observed entries");
    }

    [[nodiscard]] const QttLayout& layout() const { return layout_; }
    [[nodiscard]] const std::vector<double>& values() const { return values_; }
    [[nodiscard]] const std::vector<std::size_t>& observed() const { return observed_; }

private:
    QttLayout layout_;
    std::vector<double> values_;
    std::vector<std::size_t> observed_;
};

/// Per-core indices encoded in a quantized linear index.
inline void split_linear_index(const QttLayout& layout, std::size_t lin, std::span<CoreIndex> out) {
    const auto d = static_cast<std::size_t>(layout.spatial_dim);
    const std::size_t mask = layout.core_phys_dim() - 1;
    const auto D = static_cast<std::size_t>(layout.depth);
    for (std::size_t k = 0; k < D; ++k) out[k] = static_cast<CoreIndex>((lin >> (d * (D - 1 - k))) & mask);
}

/// Random stream used for batch sampling, decorrelated from the init stream.
[[nodiscard]] inline std::mt19937_64 sampling_rng(std::uint64_t seed) {
    return std::mt19937_64(seed ^ 0x9E3779B97F4A7C15ULL);
}

namespace detail {

// Rough flop counts used to pick the gradient path; only relative size matters.
inline bool prefer_dense_gradient(const TensorTrain& tt, std::size_t batch) {
    const auto r = tt.rank_profile();
    const auto n = tt.phys_dims();
    double per_sample = 0.0, dense = 0.0;
    double prefix = 1.0, total = 1.0;
    for (std::size_t p : n) total *= static_cast<double>(p);
    for (std::size_t k = 0; k < n.size(); ++k) {
        const double rr = static_cast<double>(r[k]) * static_cast<double>(r[k + 1]);
        per_sample += 3.0 * rr * static_cast<double>(batch);
        prefix *= static_cast<double>(n[k]);
        const double suffix = total / prefix * static_cast<double>(n[k]);
        dense += 2.0 * (prefix + suffix) * rr + total * static_cast<double>(std::min(r[k], r[k + 1]));
    }
    return dense < per_sample;
}

struct StepWorkspace {
    std::vector<double> weights;
    IndexBatch batch;
    std::vector<double> targets;
};

inline double train_step(TensorTrain& tt, const LevelTarget& target, std::size_t batch_size, std::mt19937_64& rng,
                         AdamState& adam, double lr, StepWorkspace& ws) {
    const auto& obs = target.observed();
    std::uniform_int_distribution<std::size_t> pick(0, obs.size() - 1);
    LossGrad lg;
    if (prefer_dense_gradient(tt, batch_size)) {
        ws.weights.assign(target.values().size(), 0.0);
        const double w = 1.0 / static_cast<double>(batch_size);
        for (std::size_t s = 0; s < batch_size; ++s) ws.weights[obs[pick(rng)]] += w;
        lg = grad_weighted_dense(tt, ws.weights, target.values());
    } else {
        const auto D = static_cast<std::size_t>(target.layout().depth);
        std::vector<CoreIndex> flat(batch_size * D);
        ws.targets.resize(batch_size);
        for (std::size_t s = 0; s < batch_size; ++s) {
            const std::size_t lin = obs[pick(rng)];
            split_linear_index(target.layout(), lin, std::span<CoreIndex>(flat.data() + s * D, D));
            ws.targets[s] = target.values()[lin];
        }
        ws.batch = IndexBatch(D, std::move(flat));
        lg = grad_mse(tt, ws.batch, ws.targets);
    }
    if (!std::isfinite(lg.loss)) throw NumericError("training diverged: non-finite loss");
    adam_step(adam, tt, lg.grads, lr);
    return lg.loss;
}

inline void check_pyramid(const std::vector<Grid>& pyramid, const TrainConfig& config) {
    if (pyramid.empty()) throw InvalidArgument("train_putt: empty pyramid");
    if (config.upsample_iters.size() + 1 != pyramid.size())
        throw InvalidArgument("train_putt: pyramid has " + std::to_string(pyramid.size()) + " levels but " +
                              std::to_string(config.upsample_iters.size()) + " upsample iterations were given");
    for (std::size_t i = 0; i + 1 < pyramid.size(); ++i) {
        const auto& a = pyramid[i].dims;
        const auto& b = pyramid[i + 1].dims;
        bool ok = a.size() == b.size();
        for (std::size_t j = 0; ok && j < a.size(); ++j) ok = b[j] == 2 * a[j];
        if (!ok) throw InvalidArgument("train_putt: pyramid levels must double in size");
    }
}

} // namespace detail

/// Grows every internal bond by delta, capped by r_cap and by the maximal
/// exact rank at that cut. Reconstructed entries are unchanged: new rows of
/// the right-hand core are zero, new columns of the left-hand core receive
/// small seeded noise so the new directions are not stuck at a saddle.
[[nodiscard]] inline TensorTrain grow_rank(const TensorTrain& tt, std::size_t delta, std::size_t r_cap,
                                           std::uint64_t seed = 0, double noise_scale = 1e-3) {
    detail::require(delta >= 1, "grow_rank: delta must be >= 1");
    const auto old_r = tt.rank_profile();
    const auto phys = tt.phys_dims();
    const auto cap = trapezoid_ranks(phys, std::max<std::size_t>(r_cap, 1));
    std::vector<std::size_t> new_r(old_r.size());
    for (std::size_t i = 0; i < old_r.size(); ++i)
        new_r[i] = std::max(old_r[i], std::min(old_r[i] + delta, cap[i]));
    std::mt19937_64 rng(seed);
    std::vector<TtCore> cores;
    for (std::size_t k = 0; k < tt.depth(); ++k) {
        const auto& c = tt.core(k);
        double rms = 0.0;
        for (double v : c.data()) rms += v * v;
        rms = std::sqrt(rms / static_cast<double>(c.size()));
        std::normal_distribution<double> nd(0.0, noise_scale * (rms > 0.0 ? rms : 1.0));
        TtCore g(new_r[k], c.phys(), new_r[k + 1]);
        for (std::size_t a = 0; a < old_r[k]; ++a)
            for (std::size_t j = 0; j < c.phys(); ++j) {
                for (std::size_t b = 0; b < old_r[k + 1]; ++b) g(a, j, b) = c(a, j, b);
                for (std::size_t b = old_r[k + 1]; b < new_r[k + 1]; ++b) g(a, j, b) = nd(rng);
            }
        cores.push_back(std::move(g));
    }
    return TensorTrain(std::move(cores));
}

/// Trains on a single resolution for level_iters steps with a one-stage
/// schedule. The batch is drawn uniformly with replacement from the observed
/// cells of `target`.
[[nodiscard]] inline TrainResult train_level(TensorTrain tt, const Grid& target, const TrainConfig& config,
                                             int level_iters, std::mt19937_64& rng, const ProgressFn& progress = {}) {
    detail::require(level_iters >= 1, "train_level: level_iters must be >= 1");
    const LevelTarget lt(target);
    detail::require(tt.depth() == static_cast<std::size_t>(lt.layout().depth), "train_level: target side != model side");
    for (std::size_t p : tt.phys_dims())
        detail::require(p == lt.layout().core_phys_dim(), "train_level: target dimension != model dimension");
    TrainConfig cfg = config;
    cfg.total_iters = level_iters;
    cfg.upsample_iters.clear();
    const auto sched = cfg.schedule();
    sched.validate();
    auto adam = AdamState::for_model(tt);
    detail::StepWorkspace ws;
    TrainResult out{std::move(tt), lt.layout(), {}};
    out.trace.reserve(static_cast<std::size_t>(level_iters));
    for (int it = 0; it < level_iters; ++it) {
        const double lr = lr_at(sched, it, 0);
        const double loss = detail::train_step(out.tt, lt, cfg.batch_size, rng, adam, lr, ws);
        out.trace.push_back({it, 0, lr, loss});
        if (progress) progress({it, 0, out.layout, out.tt, lr, loss});
    }
    return out;
}

/// Coarse-to-fine training: random QTT on the coarsest pyramid level, then
/// alternate training and prolongation at the configured iterations, and
/// train the finest level until total_iters. The optimizer is reset after
/// every upsample or rank growth.
[[nodiscard]] inline TrainResult train_putt(const std::vector<Grid>& pyramid, const TrainConfig& config,
                                            const ProgressFn& progress = {}) {
    config.validate();
    detail::check_pyramid(pyramid, config);
    std::vector<LevelTarget> levels;
    levels.reserve(pyramid.size());
    for (const auto& g : pyramid) levels.emplace_back(g);

    const auto sched = config.schedule();
    TrainResult out{random_tt(levels[0].layout(), config.r_max, config.init_sigma, config.seed, config.init_scale), levels[0].layout(), {}};
    out.trace.reserve(static_cast<std::size_t>(config.total_iters));
    auto rng = sampling_rng(config.seed);
    auto adam = AdamState::for_model(out.tt);
    detail::StepWorkspace ws;
    std::size_t level = 0;
    std::size_t grow_count = 0;
    for (int it = 0; it < config.total_iters; ++it) {
        if (level < config.upsample_iters.size() && it == config.upsample_iters[level]) {
            auto [tt, layout] = prolong(out.tt, out.layout, config.r_max);
            out.tt = std::move(tt);
            out.layout = layout;
            ++level;
            adam = AdamState::for_model(out.tt);
        }
        if (std::find(config.grow_iters.begin(), config.grow_iters.end(), it) != config.grow_iters.end()) {
            const std::size_t cap = config.grow_cap > 0 ? config.grow_cap : kUnboundedRank;
            out.tt = grow_rank(out.tt, config.grow_delta, cap, config.seed + 1000003ULL * ++grow_count);
            adam = AdamState::for_model(out.tt);
        }
        const double lr = lr_at(sched, it, level);
        const double loss = detail::train_step(out.tt, levels[level], config.batch_size, rng, adam, lr, ws);
        out.trace.push_back({it, static_cast<int>(level), lr, loss});
        if (progress) progress({it, static_cast<int>(level), out.layout, out.tt, lr, loss});
    }
    return out;
}

} // namespace putt
