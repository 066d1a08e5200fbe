#pragma once

#include "putt/dense.hpp"
#include "putt/error.hpp"
#include "putt/tensor_train.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace putt {

/// Thin SVD with a fixed sign gauge: the largest-magnitude entry of every
/// left singular vector is non-negative.
struct ThinSvd {
    Eigen::MatrixXd u;
    Eigen::VectorXd s;
    Eigen::MatrixXd v;
};

[[nodiscard]] inline ThinSvd thin_svd(const Eigen::MatrixXd& m) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericError("SVD did not converge");
    ThinSvd out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
    for (Eigen::Index i = 0; i < out.u.cols(); ++i) {
        Eigen::Index arg = 0;
        out.u.col(i).cwiseAbs().maxCoeff(&arg);
        if (out.u(arg, i) < 0.0) {
            out.u.col(i) *= -1.0;
            out.v.col(i) *= -1.0;
        }
    }
    return out;
}

/// Number of singular values treated as nonzero.
[[nodiscard]] inline Eigen::Index numerical_rank(const Eigen::VectorXd& s, Eigen::Index rows, Eigen::Index cols) {
    if (s.size() == 0 || s(0) == 0.0) return 1;
    const double tol = s(0) * static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > tol) ++r;
    return std::max<Eigen::Index>(r, 1);
}

/// Sequential reshape + truncated SVD of a dense tensor stored in core-major
/// order. Ranks are capped by r_max and by the numerical rank at each cut.
[[nodiscard]] inline TensorTrain tt_svd(std::span<const double> dense, std::span<const std::size_t> phys_dims,
                                        std::size_t r_max, std::size_t cap = safety_cap()) {
    detail::require(r_max >= 1, "tt_svd: r_max must be >= 1");
    detail::require(!phys_dims.empty(), "tt_svd: no modes");
    std::size_t n = 1;
    for (std::size_t p : phys_dims) n *= p;
    detail::require(dense.size() == n, "tt_svd: dense size does not match phys dims");
    if (n > cap) throw ResourceLimit("tt_svd: dense size exceeds safety cap");

    const std::size_t D = phys_dims.size();
    std::vector<TtCore> cores;
    cores.reserve(D);
    // remainder held row-major as [r_prev * n_k, rest]
    RowMatrix rem = ConstRowMatrixMap(dense.data(), 1, static_cast<Eigen::Index>(n));
    std::size_t r_prev = 1;
    for (std::size_t k = 0; k + 1 < D; ++k) {
        const auto rows = static_cast<Eigen::Index>(r_prev * phys_dims[k]);
        const Eigen::Index cols = rem.size() / rows;
        Eigen::MatrixXd mat = ConstRowMatrixMap(rem.data(), rows, cols);
        const auto svd = thin_svd(mat);
        const auto r = std::min(r_max, static_cast<std::size_t>(numerical_rank(svd.s, rows, cols)));
        TtCore core(r_prev, phys_dims[k], r);
        RowMatrixMap(core.data().data(), rows, static_cast<Eigen::Index>(r)) =
            svd.u.leftCols(static_cast<Eigen::Index>(r));
        cores.push_back(std::move(core));
        rem = svd.s.head(static_cast<Eigen::Index>(r)).asDiagonal() *
              svd.v.leftCols(static_cast<Eigen::Index>(r)).transpose();
        r_prev = r;
    }
    TtCore last(r_prev, phys_dims[D - 1], 1, std::vector<double>(rem.data(), rem.data() + rem.size()));
    cores.push_back(std::move(last));
    return TensorTrain(std::move(cores));
}

/// Spectra collected by truncate: for each cut (between cores k-1 and k),
/// the discarded singular values.
struct TruncationReport {
    std::vector<std::vector<double>> discarded;

    [[nodiscard]] double discarded_norm_sq() const {
        double s = 0.0;
        for (const auto& cut : discarded)
            for (double x : cut) s += x * x;
        return s;
    }
};

/// Left-orthogonalizes a TT in place; bonds shrink to the maximal exact rank
/// where the left product is smaller than the existing bond.
inline void left_orthogonalize(TensorTrain& tt) {
    auto& cores = tt.cores();
    for (std::size_t k = 0; k + 1 < cores.size(); ++k) {
        auto& c = cores[k];
        const Eigen::MatrixXd mat = c.left_unfolding();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(mat);
        const Eigen::Index r = std::min(mat.rows(), mat.cols());
        const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(mat.rows(), r);
        const Eigen::MatrixXd rr =
            qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>().toDenseMatrix();
        TtCore nc(c.left(), c.phys(), static_cast<std::size_t>(r));
        RowMatrixMap(nc.data().data(), mat.rows(), r) = q;
        auto& next = cores[k + 1];
        TtCore nn(static_cast<std::size_t>(r), next.phys(), next.right());
        RowMatrixMap(nn.data().data(), r, static_cast<Eigen::Index>(next.phys() * next.right())) =
            rr * next.right_unfolding();
        c = std::move(nc);
        next = std::move(nn);
    }
}

/// Rank truncation: left-orthogonalization sweep, then a right-to-left SVD
/// sweep keeping at most r_max singular values per bond. Zero singular values
/// are kept when r_max allows, so bonds stay at min(r_max, maximal rank).
[[nodiscard]] inline TensorTrain truncate(TensorTrain tt, std::size_t r_max, TruncationReport* report = nullptr) {
    detail::require(r_max >= 1, "truncate: r_max must be >= 1");
    tt.validate();
    left_orthogonalize(tt);
    auto& cores = tt.cores();
    if (report) report->discarded.assign(cores.size() > 0 ? cores.size() - 1 : 0, {});
    for (std::size_t k = cores.size() - 1; k > 0; --k) {
        auto& c = cores[k];
        const Eigen::MatrixXd mat = c.right_unfolding();
        const auto svd = thin_svd(mat);
        const auto r = static_cast<Eigen::Index>(std::min(r_max, static_cast<std::size_t>(svd.s.size())));
        if (report)
            for (Eigen::Index i = r; i < svd.s.size(); ++i) report->discarded[k - 1].push_back(svd.s(i));
        TtCore nc(static_cast<std::size_t>(r), c.phys(), c.right());
        RowMatrixMap(nc.data().data(), r, mat.cols()) = svd.v.leftCols(r).transpose();
        auto& prev = cores[k - 1];
        TtCore np(prev.left(), prev.phys(), static_cast<std::size_t>(r));
        RowMatrixMap(np.data().data(), static_cast<Eigen::Index>(prev.left() * prev.phys()), r) =
            prev.left_unfolding() * (svd.u.leftCols(r) * svd.s.head(r).asDiagonal());
        c = std::move(nc);
        prev = std::move(np);
    }
    if (!tt.all_finite()) throw NumericError("truncate: non-finite values after truncation");
    return tt;
}

} // namespace putt
