#pragma once

#include "putt/error.hpp"
#include "putt/qtt_layout.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace putt {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;
using StridedConstMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

/// Order-3 tensor-train core laid out as [left][phys][right], row-major.
class TtCore {
public:
    TtCore() = default;
    TtCore(std::size_t left, std::size_t phys, std::size_t right)
        : left_(left), phys_(phys), right_(right), data_(left * phys * right, 0.0) {}
    TtCore(std::size_t left, std::size_t phys, std::size_t right, std::vector<double> data)
        : left_(left), phys_(phys), right_(right), data_(std::move(data)) {
        detail::require(data_.size() == left * phys * right, "TtCore: data size does not match shape");
    }

    [[nodiscard]] std::size_t left() const { return left_; }
    [[nodiscard]] std::size_t phys() const { return phys_; }
    [[nodiscard]] std::size_t right() const { return right_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    [[nodiscard]] double& operator()(std::size_t a, std::size_t j, std::size_t b) {
        return data_[(a * phys_ + j) * right_ + b];
    }
    [[nodiscard]] double operator()(std::size_t a, std::size_t j, std::size_t b) const {
        return data_[(a * phys_ + j) * right_ + b];
    }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] const std::vector<double>& values() const { return data_; }

    /// Matrix A^{j} of shape [left, right].
    [[nodiscard]] StridedConstMap slice(std::size_t j) const {
        return {data_.data() + j * right_, static_cast<Eigen::Index>(left_), static_cast<Eigen::Index>(right_),
                Eigen::OuterStride<>(static_cast<Eigen::Index>(phys_ * right_))};
    }
    [[nodiscard]] StridedMap slice(std::size_t j) {
        return {data_.data() + j * right_, static_cast<Eigen::Index>(left_), static_cast<Eigen::Index>(right_),
                Eigen::OuterStride<>(static_cast<Eigen::Index>(phys_ * right_))};
    }
    /// [left * phys, right] view.
    [[nodiscard]] ConstRowMatrixMap left_unfolding() const {
        return {data_.data(), static_cast<Eigen::Index>(left_ * phys_), static_cast<Eigen::Index>(right_)};
    }
    /// [left, phys * right] view.
    [[nodiscard]] ConstRowMatrixMap right_unfolding() const {
        return {data_.data(), static_cast<Eigen::Index>(left_), static_cast<Eigen::Index>(phys_ * right_)};
    }

    friend bool operator==(const TtCore&, const TtCore&) = default;

private:
    std::size_t left_ = 0;
    std::size_t phys_ = 0;
    std::size_t right_ = 0;
    std::vector<double> data_;
};

/// Chain of order-3 cores; entry (j_1..j_D) = A_1^{j_1} A_2^{j_2} ... A_D^{j_D}.
class TensorTrain {
public:
    TensorTrain() = default;
    explicit TensorTrain(std::vector<TtCore> cores) : cores_(std::move(cores)) { validate(); }

    [[nodiscard]] std::size_t depth() const { return cores_.size(); }
    [[nodiscard]] const TtCore& core(std::size_t k) const { return cores_[k]; }
    [[nodiscard]] TtCore& core(std::size_t k) { return cores_[k]; }
    [[nodiscard]] const std::vector<TtCore>& cores() const { return cores_; }
    [[nodiscard]] std::vector<TtCore>& cores() { return cores_; }

    /// R_1 .. R_{D+1}; boundary entries are 1.
    [[nodiscard]] std::vector<std::size_t> rank_profile() const {
        std::vector<std::size_t> r;
        r.reserve(cores_.size() + 1);
        for (const auto& c : cores_) r.push_back(c.left());
        r.push_back(cores_.empty() ? 1 : cores_.back().right());
        return r;
    }
    [[nodiscard]] std::vector<std::size_t> phys_dims() const {
        std::vector<std::size_t> n;
        n.reserve(cores_.size());
        for (const auto& c : cores_) n.push_back(c.phys());
        return n;
    }
    [[nodiscard]] std::size_t max_rank() const {
        const auto r = rank_profile();
        return *std::max_element(r.begin(), r.end());
    }

    /// Throws InvalidArgument on broken bond structure or non-finite entries.
    void validate() const {
        detail::require(!cores_.empty(), "TensorTrain: no cores");
        detail::require(cores_.front().left() == 1 && cores_.back().right() == 1,
                        "TensorTrain: boundary ranks must be 1");
        for (std::size_t k = 0; k < cores_.size(); ++k) {
            const auto& c = cores_[k];
            detail::require(c.phys() >= 1 && c.left() >= 1 && c.right() >= 1, "TensorTrain: empty core dimension");
            if (k + 1 < cores_.size())
                detail::require(c.right() == cores_[k + 1].left(),
                                "TensorTrain: bond mismatch between cores " + std::to_string(k) + " and " +
                                    std::to_string(k + 1));
        }
    }
    [[nodiscard]] bool all_finite() const {
        for (const auto& c : cores_)
            for (double v : c.data())
                if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const TensorTrain&, const TensorTrain&) = default;

private:
    std::vector<TtCore> cores_;
};

/// Order-4 operator core laid out as [left][out][in][right].
class MpoCore {
public:
    MpoCore() = default;
    MpoCore(std::size_t left, std::size_t out, std::size_t in, std::size_t right)
        : left_(left), out_(out), in_(in), right_(right), data_(left * out * in * right, 0.0) {}

    [[nodiscard]] std::size_t left() const { return left_; }
    [[nodiscard]] std::size_t out() const { return out_; }
    [[nodiscard]] std::size_t in() const { return in_; }
    [[nodiscard]] std::size_t right() const { return right_; }

    [[nodiscard]] double& operator()(std::size_t s, std::size_t o, std::size_t i, std::size_t t) {
        return data_[((s * out_ + o) * in_ + i) * right_ + t];
    }
    [[nodiscard]] double operator()(std::size_t s, std::size_t o, std::size_t i, std::size_t t) const {
        return data_[((s * out_ + o) * in_ + i) * right_ + t];
    }
    [[nodiscard]] std::span<const double> data() const { return data_; }

private:
    std::size_t left_ = 0;
    std::size_t out_ = 0;
    std::size_t in_ = 0;
    std::size_t right_ = 0;
    std::vector<double> data_;
};

/// Matrix product operator. A terminal core without an input leg uses in = 1.
class Mpo {
public:
    Mpo() = default;
    explicit Mpo(std::vector<MpoCore> cores) : cores_(std::move(cores)) {
        detail::require(!cores_.empty(), "Mpo: no cores");
        detail::require(cores_.front().left() == 1 && cores_.back().right() == 1, "Mpo: boundary bonds must be 1");
        for (std::size_t k = 0; k + 1 < cores_.size(); ++k)
            detail::require(cores_[k].right() == cores_[k + 1].left(), "Mpo: bond mismatch");
    }

    [[nodiscard]] std::size_t size() const { return cores_.size(); }
    [[nodiscard]] const MpoCore& core(std::size_t k) const { return cores_[k]; }
    [[nodiscard]] std::vector<std::size_t> bond_profile() const {
        std::vector<std::size_t> s;
        for (const auto& c : cores_) s.push_back(c.left());
        s.push_back(cores_.back().right());
        return s;
    }

    /// Contracts every virtual bond; rows index the outputs and columns the
    /// inputs, both in core-major (first core most significant) order.
    [[nodiscard]] RowMatrix to_dense_matrix() const {
        // acc[(out, in), bond]
        RowMatrix acc = RowMatrix::Ones(1, 1);
        std::size_t n_out = 1;
        std::size_t n_in = 1;
        for (const auto& c : cores_) {
            RowMatrix next = RowMatrix::Zero(static_cast<Eigen::Index>(n_out * c.out() * n_in * c.in()),
                                             static_cast<Eigen::Index>(c.right()));
            for (std::size_t po = 0; po < n_out; ++po)
                for (std::size_t pi = 0; pi < n_in; ++pi)
                    for (std::size_t s = 0; s < c.left(); ++s) {
                        const double w = acc(static_cast<Eigen::Index>(po * n_in + pi), static_cast<Eigen::Index>(s));
                        if (w == 0.0) continue;
                        for (std::size_t o = 0; o < c.out(); ++o)
                            for (std::size_t i = 0; i < c.in(); ++i) {
                                const std::size_t row = (po * c.out() + o) * (n_in * c.in()) + pi * c.in() + i;
                                for (std::size_t t = 0; t < c.right(); ++t)
                                    next(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(t)) +=
                                        w * c(s, o, i, t);
                            }
                    }
            acc = std::move(next);
            n_out *= c.out();
            n_in *= c.in();
        }
        return ConstRowMatrixMap(acc.data(), static_cast<Eigen::Index>(n_out), static_cast<Eigen::Index>(n_in));
    }

private:
    std::vector<MpoCore> cores_;
};

/// Σ_k R_k n_k R_{k+1}.
[[nodiscard]] inline std::size_t param_count(const TensorTrain& tt) {
    std::size_t total = 0;
    for (const auto& c : tt.cores()) total += c.size();
    return total;
}

/// Trapezoid bond profile: the internal bond after core k is
/// min(prod of n up to k, prod of n after k, r_max).
[[nodiscard]] inline std::vector<std::size_t> trapezoid_ranks(std::span<const std::size_t> phys_dims,
                                                              std::size_t r_max) {
    detail::require(!phys_dims.empty(), "trapezoid_ranks: empty phys_dims");
    detail::require(r_max >= 1, "trapezoid_ranks: r_max must be >= 1");
    for (std::size_t n : phys_dims) detail::require(n >= 1, "trapezoid_ranks: phys dims must be >= 1");
    const std::size_t D = phys_dims.size();
    // saturating products so long chains do not overflow
    auto sat_mul = [](std::size_t a, std::size_t b) {
        return (b != 0 && a > std::numeric_limits<std::size_t>::max() / b) ? std::numeric_limits<std::size_t>::max()
                                                                           : a * b;
    };
    std::vector<std::size_t> left(D + 1, 1), right(D + 1, 1);
    for (std::size_t k = 0; k < D; ++k) left[k + 1] = sat_mul(left[k], phys_dims[k]);
    for (std::size_t k = D; k-- > 0;) right[k] = sat_mul(right[k + 1], phys_dims[k]);
    std::vector<std::size_t> ranks(D + 1, 1);
    for (std::size_t cut = 1; cut < D; ++cut) ranks[cut] = std::min({left[cut], right[cut], r_max});
    return ranks;
}

/// Per-core std giving reconstructed entries of standard deviation sigma:
/// exp((2 ln sigma - Σ ln R_i) / (2D)), summed over the whole profile.
[[nodiscard]] inline double init_sigma(double target_sigma, std::span<const std::size_t> rank_profile) {
    detail::require(target_sigma > 0.0, "init_sigma: sigma must be positive");
    detail::require(rank_profile.size() >= 2, "init_sigma: rank profile needs at least two entries");
    const double D = static_cast<double>(rank_profile.size() - 1);
    double log_sum = 0.0;
    for (std::size_t r : rank_profile) {
        detail::require(r >= 1, "init_sigma: ranks must be >= 1");
        log_sum += std::log(static_cast<double>(r));
    }
    return std::exp((2.0 * std::log(target_sigma) - log_sum) / (2.0 * D));
}

/// Cores with the given shapes filled with N(0, std^2).
[[nodiscard]] inline TensorTrain random_tt(std::span<const std::size_t> phys_dims, std::span<const std::size_t> ranks,
                                           double core_std, std::mt19937_64& rng) {
    detail::require(ranks.size() == phys_dims.size() + 1, "random_tt: rank profile length must be D+1");
    std::normal_distribution<double> normal(0.0, core_std);
    std::vector<TtCore> cores;
    cores.reserve(phys_dims.size());
    for (std::size_t k = 0; k < phys_dims.size(); ++k) {
        TtCore c(ranks[k], phys_dims[k], ranks[k + 1]);
        for (double& v : c.data()) v = normal(rng);
        cores.push_back(std::move(c));
    }
    return TensorTrain(std::move(cores));
}

/// How the init std is read: as the std of reconstructed entries (cores are
/// drawn with init_sigma of it) or as the std of every core entry directly.
enum class InitScale { entry, core };

/// Random QTT with trapezoid ranks. With InitScale::entry the reconstructed
/// entries have std ≈ sigma; with InitScale::core each core entry has std sigma.
[[nodiscard]] inline TensorTrain random_tt(const QttLayout& layout, std::size_t r_max, double sigma,
                                           std::uint64_t seed, InitScale scale = InitScale::entry) {
    detail::require(sigma > 0.0, "random_tt: sigma must be positive");
    const auto phys = layout.phys_dims();
    const auto ranks = trapezoid_ranks(phys, r_max);
    std::mt19937_64 rng(seed);
    return random_tt(phys, ranks, scale == InitScale::entry ? init_sigma(sigma, ranks) : sigma, rng);
}

/// Evaluates the chain product for every row of the batch.
[[nodiscard]] inline std::vector<double> eval_batch(const TensorTrain& tt, const IndexBatch& batch) {
    detail::require(batch.depth() == tt.depth(), "eval_batch: index tuple length differs from TT depth");
    std::vector<double> out(batch.size());
    Eigen::RowVectorXd v, next;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto idx = batch[s];
        v = Eigen::RowVectorXd::Ones(1);
        for (std::size_t k = 0; k < tt.depth(); ++k) {
            const auto& c = tt.core(k);
            if (idx[k] >= c.phys())
                throw InvalidArgument("eval_batch: index " + std::to_string(idx[k]) + " out of range for core " +
                                      std::to_string(k));
            next.noalias() = v * c.slice(idx[k]);
            v.swap(next);
        }
        out[s] = v(0);
    }
    return out;
}

} // namespace putt
