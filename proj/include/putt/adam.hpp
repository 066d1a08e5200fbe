#pragma once

#include "putt/error.hpp"
#include "putt/tensor_train.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace putt {

/// First/second moment estimates for a list of parameter blocks.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState() = default;
    explicit AdamState(const std::vector<std::size_t>& block_sizes) {
        for (std::size_t n : block_sizes) {
            m.emplace_back(n, 0.0);
            v.emplace_back(n, 0.0);
        }
    }
    [[nodiscard]] static AdamState for_model(const TensorTrain& tt) {
        std::vector<std::size_t> sizes;
        for (const auto& c : tt.cores()) sizes.push_back(c.size());
        return AdamState(sizes);
    }
};

/// Bias-corrected Adam update applied block by block.
inline void adam_update(AdamState& st, std::span<const std::span<double>> params,
                        std::span<const std::span<const double>> grads, double lr) {
    if (params.size() != st.m.size() || grads.size() != params.size())
        throw InvalidArgument("adam_update: block count mismatch");
    for (std::size_t b = 0; b < params.size(); ++b)
        if (params[b].size() != st.m[b].size() || grads[b].size() != params[b].size())
            throw InvalidArgument("adam_update: block " + std::to_string(b) + " shape mismatch");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b];
        const auto g = grads[b];
        auto& m = st.m[b];
        auto& v = st.v[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

inline void adam_step(AdamState& st, TensorTrain& tt, const std::vector<TtCore>& grads, double lr) {
    if (grads.size() != tt.depth()) throw InvalidArgument("adam_step: gradient count differs from core count");
    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> gs;
    for (std::size_t k = 0; k < tt.depth(); ++k) {
        if (grads[k].left() != tt.core(k).left() || grads[k].phys() != tt.core(k).phys() ||
            grads[k].right() != tt.core(k).right())
            throw InvalidArgument("adam_step: gradient shape differs from core " + std::to_string(k));
        params.push_back(tt.core(k).data());
        gs.push_back(grads[k].data());
    }
    adam_update(st, params, gs, lr);
}

} // namespace putt
