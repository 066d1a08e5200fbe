#pragma once

#include "putt/dense.hpp"
#include "putt/error.hpp"
#include "putt/tensor_train.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace putt {

/// Loss value plus one gradient array per core, shaped like the cores.
struct LossGrad {
    double loss = 0.0;
    std::vector<TtCore> grads;
};

namespace detail {

inline std::vector<TtCore> zero_like(const TensorTrain& tt) {
    std::vector<TtCore> g;
    g.reserve(tt.depth());
    for (const auto& c : tt.cores()) g.emplace_back(c.left(), c.phys(), c.right());
    return g;
}

} // namespace detail

/// Mean squared error over a batch of entries and its analytic gradient.
///
/// For a sample with residual r the gradient of core k, slice j_k, is the
/// outer product of the left partial product and the right partial product,
/// scaled by 2r/|B|. Samples are accumulated in batch order.
[[nodiscard]] inline LossGrad grad_mse(const TensorTrain& tt, const IndexBatch& batch, std::span<const double> targets) {
    detail::require(!batch.empty(), "grad_mse: empty batch");
    detail::require(batch.size() == targets.size(), "grad_mse: batch and target sizes differ");
    detail::require(batch.depth() == tt.depth(), "grad_mse: index tuple length differs from TT depth");
    const std::size_t D = tt.depth();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    LossGrad out{0.0, detail::zero_like(tt)};
    std::vector<Eigen::RowVectorXd> left(D + 1);
    std::vector<Eigen::VectorXd> right(D);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto idx = batch[s];
        for (std::size_t k = 0; k < D; ++k)
            if (idx[k] >= tt.core(k).phys()) throw InvalidArgument("grad_mse: index out of range");
        left[0] = Eigen::RowVectorXd::Ones(1);
        for (std::size_t k = 0; k < D; ++k) left[k + 1].noalias() = left[k] * tt.core(k).slice(idx[k]);
        right[D - 1] = Eigen::VectorXd::Ones(1);
        for (std::size_t k = D - 1; k > 0; --k) right[k - 1].noalias() = tt.core(k).slice(idx[k]) * right[k];
        const double r = left[D](0) - targets[s];
        out.loss += r * r * inv_b;
        const double g = 2.0 * r * inv_b;
        for (std::size_t k = 0; k < D; ++k)
            out.grads[k].slice(idx[k]).noalias() += g * left[k].transpose() * right[k].transpose();
    }
    return out;
}

/// Weighted squared error over all entries of the tensor,
/// loss = Σ_i w_i (T_i - y_i)^2, with entries in core-major order.
///
/// A with-replacement batch is the special case w_i = count_i / |B|. The
/// gradient is formed from prefix/suffix environments so its cost does not
/// depend on the batch size.
[[nodiscard]] inline LossGrad grad_weighted_dense(const TensorTrain& tt, std::span<const double> weights,
                                                  std::span<const double> targets) {
    const auto lefts = left_environments(tt);
    const auto& full = lefts.back();
    const auto n = static_cast<std::size_t>(full.rows());
    detail::require(weights.size() == n && targets.size() == n, "grad_weighted_dense: size mismatch");
    std::vector<double> e(n);
    LossGrad out{0.0, detail::zero_like(tt)};
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0) continue;
        const double r = full(static_cast<Eigen::Index>(i), 0) - targets[i];
        out.loss += weights[i] * r * r;
        e[i] = 2.0 * weights[i] * r;
    }
    const auto rights = right_environments(tt);
    for (std::size_t k = 0; k < tt.depth(); ++k) {
        const auto& c = tt.core(k);
        const auto& L = lefts[k];   // [P, R_k]
        const auto& R = rights[k];  // [R_{k+1}, S]
        const Eigen::Index P = L.rows(), S = R.cols();
        const auto nk = static_cast<Eigen::Index>(c.phys());
        const ConstRowMatrixMap E(e.data(), P, nk * S);
        const double rk = static_cast<double>(c.left()), rk1 = static_cast<double>(c.right());
        const double cost_left_first = static_cast<double>(n) * rk + static_cast<double>(nk * S) * rk * rk1;
        const double cost_right_first = static_cast<double>(n) * rk1 + static_cast<double>(nk * P) * rk * rk1;
        auto& g = out.grads[k];
        if (cost_left_first <= cost_right_first) {
            const RowMatrix X = L.transpose() * E;  // [R_k, n S]
            for (Eigen::Index j = 0; j < nk; ++j)
                g.slice(static_cast<std::size_t>(j)).noalias() = X.middleCols(j * S, S) * R.transpose();
        } else {
            for (Eigen::Index j = 0; j < nk; ++j) {
                const RowMatrix Y = E.middleCols(j * S, S) * R.transpose();  // [P, R_{k+1}]
                g.slice(static_cast<std::size_t>(j)).noalias() = L.transpose() * Y;
            }
        }
    }
    return out;
}

} // namespace putt
