#pragma once

#include "putt/adam.hpp"
#include "putt/binary_io.hpp"
#include "putt/error.hpp"
#include "putt/grid.hpp"
#include "putt/schedule.hpp"
#include "putt/tensor_train.hpp"
#include "putt/train.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace putt {

/// CP model: T[i_1..i_d] = Σ_r Π_k factors[k](i_k, r). Factors are [n_k, R].
struct CpModel {
    std::vector<std::size_t> dims;
    std::size_t rank = 0;
    std::vector<RowMatrix> factors;

    void validate() const {
        detail::require(!dims.empty() && factors.size() == dims.size(), "CpModel: one factor per mode required");
        for (std::size_t k = 0; k < dims.size(); ++k)
            detail::require(factors[k].rows() == static_cast<Eigen::Index>(dims[k]) &&
                                factors[k].cols() == static_cast<Eigen::Index>(rank),
                            "CpModel: factor shape must be [n_k, R]");
    }
};

/// Tucker model: T[i..] = Σ_a core[a_1..a_d] Π_k factors[k](a_k, i_k).
/// The core is row-major [m_1..m_d]; factors are [m_k, n_k].
struct TuckerModel {
    std::vector<std::size_t> dims;
    std::vector<std::size_t> core_dims;
    std::vector<double> core;
    std::vector<RowMatrix> factors;

    void validate() const {
        detail::require(!dims.empty() && dims.size() == core_dims.size() && factors.size() == dims.size(),
                        "TuckerModel: inconsistent mode count");
        detail::require(core.size() == Grid::count(core_dims), "TuckerModel: core size mismatch");
        for (std::size_t k = 0; k < dims.size(); ++k) {
            detail::require(core_dims[k] >= 1 && core_dims[k] <= dims[k], "TuckerModel: need 1 <= m_k <= n_k");
            detail::require(factors[k].rows() == static_cast<Eigen::Index>(core_dims[k]) &&
                                factors[k].cols() == static_cast<Eigen::Index>(dims[k]),
                            "TuckerModel: factor shape must be [m_k, n_k]");
        }
    }
};

[[nodiscard]] inline std::size_t param_count(const CpModel& m) {
    return std::accumulate(m.dims.begin(), m.dims.end(), std::size_t{0}) * m.rank;
}

[[nodiscard]] inline std::size_t param_count(const TuckerModel& m) {
    std::size_t p = m.core.size();
    for (std::size_t k = 0; k < m.dims.size(); ++k) p += m.core_dims[k] * m.dims[k];
    return p;
}

namespace detail {

inline void check_coord_batch(const std::vector<std::size_t>& dims, std::span<const std::size_t> coords) {
    require(coords.size() % dims.size() == 0, "coordinate batch length is not a multiple of the mode count");
    for (std::size_t i = 0; i < coords.size(); ++i)
        if (coords[i] >= dims[i % dims.size()])
            throw InvalidArgument("coordinate " + std::to_string(coords[i]) + " out of range for mode " +
                                  std::to_string(i % dims.size()));
}

// Row-wise Khatri-Rao product of factors[first..last), rows in row-major order.
inline RowMatrix khatri_rao(const std::vector<RowMatrix>& factors, std::size_t first, std::size_t last,
                            Eigen::Index rank) {
    RowMatrix acc = RowMatrix::Ones(1, rank);
    for (std::size_t k = first; k < last; ++k) {
        const auto& f = factors[k];
        RowMatrix next(acc.rows() * f.rows(), rank);
        for (Eigen::Index i = 0; i < acc.rows(); ++i)
            for (Eigen::Index j = 0; j < f.rows(); ++j) next.row(i * f.rows() + j) = acc.row(i).cwiseProduct(f.row(j));
        acc = std::move(next);
    }
    return acc;
}

// out[pre, i, post] = Σ_j M(i, j) T[pre, j, post]
inline std::vector<double> mode_product(std::span<const double> t, std::vector<std::size_t>& dims, std::size_t mode,
                                        const RowMatrix& m) {
    require(static_cast<std::size_t>(m.cols()) == dims[mode], "mode_product: size mismatch");
    std::size_t pre = 1, post = 1;
    for (std::size_t k = 0; k < mode; ++k) pre *= dims[k];
    for (std::size_t k = mode + 1; k < dims.size(); ++k) post *= dims[k];
    const auto rows = static_cast<std::size_t>(m.rows());
    std::vector<double> out(pre * rows * post);
    for (std::size_t p = 0; p < pre; ++p) {
        const ConstRowMatrixMap in(t.data() + p * dims[mode] * post, static_cast<Eigen::Index>(dims[mode]),
                                   static_cast<Eigen::Index>(post));
        RowMatrixMap(out.data() + p * rows * post, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(post))
            .noalias() = m * in;
    }
    dims[mode] = rows;
    return out;
}

// Linear interpolation to twice the length along rows: fine 2c+1 copies c,
// fine 2c averages c-1 and c, with row -1 replaced by row 0.
inline RowMatrix interpolate_rows(const RowMatrix& f) {
    RowMatrix out(2 * f.rows(), f.cols());
    for (Eigen::Index c = 0; c < f.rows(); ++c) {
        out.row(2 * c + 1) = f.row(c);
        out.row(2 * c) = 0.5 * (f.row(c > 0 ? c - 1 : 0) + f.row(c));
    }
    return out;
}

} // namespace detail

/// Entries of a CP model at a flat batch of coordinate tuples.
[[nodiscard]] inline std::vector<double> cp_eval(const CpModel& m, std::span<const std::size_t> coords) {
    m.validate();
    detail::check_coord_batch(m.dims, coords);
    const std::size_t d = m.dims.size();
    std::vector<double> out(coords.size() / d);
    Eigen::RowVectorXd acc(static_cast<Eigen::Index>(m.rank));
    for (std::size_t s = 0; s < out.size(); ++s) {
        acc.setOnes();
        for (std::size_t k = 0; k < d; ++k) acc = acc.cwiseProduct(m.factors[k].row(static_cast<Eigen::Index>(coords[s * d + k])));
        out[s] = acc.sum();
    }
    return out;
}

/// Entries of a Tucker model at a flat batch of coordinate tuples.
[[nodiscard]] inline std::vector<double> tucker_eval(const TuckerModel& m, std::span<const std::size_t> coords) {
    m.validate();
    detail::check_coord_batch(m.dims, coords);
    const std::size_t d = m.dims.size();
    std::vector<double> out(coords.size() / d);
    for (std::size_t s = 0; s < out.size(); ++s) {
        std::vector<double> t = m.core;
        auto dims = m.core_dims;
        for (std::size_t k = 0; k < d; ++k)
            t = detail::mode_product(t, dims, k, m.factors[k].col(static_cast<Eigen::Index>(coords[s * d + k])).transpose());
        out[s] = t[0];
    }
    return out;
}

/// Full row-major reconstruction.
[[nodiscard]] inline std::vector<double> dense_values(const CpModel& m) {
    const auto rank = static_cast<Eigen::Index>(m.rank);
    const RowMatrix rest = detail::khatri_rao(m.factors, 1, m.dims.size(), rank);
    const RowMatrix full = m.factors[0] * rest.transpose();
    return {full.data(), full.data() + full.size()};
}

[[nodiscard]] inline std::vector<double> dense_values(const TuckerModel& m) {
    std::vector<double> t = m.core;
    auto dims = m.core_dims;
    for (std::size_t k = 0; k < m.dims.size(); ++k) t = detail::mode_product(t, dims, k, m.factors[k].transpose());
    return t;
}

/// Parameter blocks in a fixed order (factors, then the Tucker core).
[[nodiscard]] inline std::vector<std::span<double>> param_blocks(CpModel& m) {
    std::vector<std::span<double>> out;
    for (auto& f : m.factors) out.emplace_back(f.data(), static_cast<std::size_t>(f.size()));
    return out;
}

[[nodiscard]] inline std::vector<std::span<double>> param_blocks(TuckerModel& m) {
    std::vector<std::span<double>> out;
    for (auto& f : m.factors) out.emplace_back(f.data(), static_cast<std::size_t>(f.size()));
    out.emplace_back(m.core.data(), m.core.size());
    return out;
}

struct BlockGrad {
    double loss = 0.0;
    std::vector<std::vector<double>> grads;  // same order as param_blocks
};

namespace detail {

inline std::vector<double> weighted_residual(std::span<const double> full, std::span<const double> weights,
                                             std::span<const double> targets, double& loss) {
    require(full.size() == weights.size() && full.size() == targets.size(), "weighted gradient: size mismatch");
    std::vector<double> e(full.size(), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const double r = full[i] - targets[i];
        loss += weights[i] * r * r;
        e[i] = 2.0 * weights[i] * r;
    }
    return e;
}

} // namespace detail

/// loss = Σ_i w_i (T_i - y_i)^2 over row-major entries, with analytic gradients.
[[nodiscard]] inline BlockGrad grad_weighted_dense(const CpModel& m, std::span<const double> weights,
                                                   std::span<const double> targets) {
    BlockGrad out;
    const auto e = detail::weighted_residual(dense_values(m), weights, targets, out.loss);
    const std::size_t d = m.dims.size();
    const auto rank = static_cast<Eigen::Index>(m.rank);
    for (std::size_t k = 0; k < d; ++k) {
        const RowMatrix A = detail::khatri_rao(m.factors, 0, k, rank);      // [pre, R]
        const RowMatrix B = detail::khatri_rao(m.factors, k + 1, d, rank);  // [post, R]
        const auto nk = static_cast<Eigen::Index>(m.dims[k]);
        RowMatrix g = RowMatrix::Zero(nk, rank);
        for (Eigen::Index p = 0; p < A.rows(); ++p) {
            const ConstRowMatrixMap E(e.data() + p * nk * B.rows(), nk, B.rows());  // [n_k, post]
            g.noalias() += (E * B) * A.row(p).asDiagonal();
        }
        out.grads.emplace_back(g.data(), g.data() + g.size());
    }
    return out;
}

[[nodiscard]] inline BlockGrad grad_weighted_dense(const TuckerModel& m, std::span<const double> weights,
                                                   std::span<const double> targets) {
    BlockGrad out;
    const auto e = detail::weighted_residual(dense_values(m), weights, targets, out.loss);
    const std::size_t d = m.dims.size();
    for (std::size_t k = 0; k < d; ++k) {
        // Z = core with every mode except k expanded to full size
        std::vector<double> z = m.core;
        auto zd = m.core_dims;
        for (std::size_t a = 0; a < d; ++a)
            if (a != k) z = detail::mode_product(z, zd, a, m.factors[a].transpose());
        std::size_t pre = 1, post = 1;
        for (std::size_t a = 0; a < k; ++a) pre *= m.dims[a];
        for (std::size_t a = k + 1; a < d; ++a) post *= m.dims[a];
        const auto mk = static_cast<Eigen::Index>(m.core_dims[k]);
        const auto nk = static_cast<Eigen::Index>(m.dims[k]);
        RowMatrix g = RowMatrix::Zero(mk, nk);
        for (std::size_t p = 0; p < pre; ++p) {
            const ConstRowMatrixMap Z(z.data() + p * static_cast<std::size_t>(mk) * post, mk, static_cast<Eigen::Index>(post));
            const ConstRowMatrixMap E(e.data() + p * static_cast<std::size_t>(nk) * post, nk, static_cast<Eigen::Index>(post));
            g.noalias() += Z * E.transpose();
        }
        out.grads.emplace_back(g.data(), g.data() + g.size());
    }
    std::vector<double> gc = e;
    auto gd = m.dims;
    for (std::size_t k = 0; k < d; ++k) gc = detail::mode_product(gc, gd, k, m.factors[k]);
    out.grads.push_back(std::move(gc));
    return out;
}

/// Random CP model whose entries have std ≈ sigma.
[[nodiscard]] inline CpModel random_cp(const std::vector<std::size_t>& dims, std::size_t rank, double sigma,
                                       std::uint64_t seed) {
    detail::require(rank >= 1 && sigma > 0.0, "random_cp: rank must be >= 1 and sigma > 0");
    const double d = static_cast<double>(dims.size());
    const double s = std::pow(sigma * sigma / static_cast<double>(rank), 1.0 / (2.0 * d));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, s);
    CpModel m{dims, rank, {}};
    for (std::size_t n : dims) {
        RowMatrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank));
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = nd(rng);
        m.factors.push_back(std::move(f));
    }
    return m;
}

/// Random Tucker model whose entries have std ≈ sigma.
[[nodiscard]] inline TuckerModel random_tucker(const std::vector<std::size_t>& dims,
                                               const std::vector<std::size_t>& core_dims, double sigma,
                                               std::uint64_t seed) {
    detail::require(sigma > 0.0 && dims.size() == core_dims.size(), "random_tucker: bad arguments");
    const double d = static_cast<double>(dims.size());
    const double s = std::pow(sigma * sigma / static_cast<double>(Grid::count(core_dims)), 1.0 / (2.0 * (d + 1.0)));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, s);
    TuckerModel m{dims, core_dims, std::vector<double>(Grid::count(core_dims)), {}};
    for (std::size_t k = 0; k < dims.size(); ++k) {
        RowMatrix f(static_cast<Eigen::Index>(core_dims[k]), static_cast<Eigen::Index>(dims[k]));
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = nd(rng);
        m.factors.push_back(std::move(f));
    }
    for (double& v : m.core) v = nd(rng);
    m.validate();
    return m;
}

/// Doubles the resolution of every spatial mode by interpolating factors.
[[nodiscard]] inline CpModel upsample(const CpModel& m) {
    CpModel out{m.dims, m.rank, {}};
    for (std::size_t k = 0; k < m.dims.size(); ++k) {
        out.dims[k] *= 2;
        out.factors.push_back(detail::interpolate_rows(m.factors[k]));
    }
    return out;
}

/// Tucker factors are interpolated along their spatial (column) index; the
/// core is unchanged.
[[nodiscard]] inline TuckerModel upsample(const TuckerModel& m) {
    TuckerModel out{m.dims, m.core_dims, m.core, {}};
    for (std::size_t k = 0; k < m.dims.size(); ++k) {
        out.dims[k] *= 2;
        out.factors.push_back(detail::interpolate_rows(m.factors[k].transpose()).transpose());
    }
    return out;
}

/// Largest uniform Tucker core size m with m^d + d m n <= budget (m <= n).
[[nodiscard]] inline std::size_t tucker_rank_for_budget(std::size_t side, std::size_t d, std::size_t budget) {
    std::size_t best = 1;
    for (std::size_t m = 1; m <= side; ++m) {
        std::size_t p = 1;
        for (std::size_t k = 0; k < d; ++k) p *= m;
        if (p + d * m * side <= budget) best = m;
    }
    return best;
}

/// CP rank with Σ n_k R <= budget (at least 1).
[[nodiscard]] inline std::size_t cp_rank_for_budget(std::size_t side, std::size_t d, std::size_t budget) {
    return std::max<std::size_t>(1, budget / (side * d));
}

template <typename Model>
struct BaselineResult {
    Model model;
    std::vector<TraceRow> trace;
};

/// Snapshot passed to baseline progress callbacks: iteration, level, current
/// row-major reconstruction function and parameter count.
struct BaselineProgress {
    int iter;
    int level;
    double lr;
    double loss;
    const std::vector<std::size_t>& dims;
    std::function<std::vector<double>()> reconstruct;
    std::size_t params;
};
using BaselineProgressFn = std::function<void(const BaselineProgress&)>;

/// Coarse-to-fine gradient fit of a CP or Tucker model with the same sampling,
/// schedule and optimizer as the QTT trainer. `init` must match pyramid[0].
template <typename Model>
[[nodiscard]] BaselineResult<Model> train_baseline(Model init, const std::vector<Grid>& pyramid,
                                                   const TrainConfig& config, const BaselineProgressFn& progress = {}) {
    config.validate();
    detail::check_pyramid(pyramid, config);
    init.validate();
    detail::require(init.dims == pyramid[0].dims, "train_baseline: model dims differ from the coarsest level");
    struct Level {
        std::vector<double> values;
        std::vector<std::size_t> observed;
    };
    std::vector<Level> levels;
    for (const auto& g : pyramid) {
        Level l{g.values, {}};
        for (std::size_t i = 0; i < g.size(); ++i)
            if (g.observed(i)) l.observed.push_back(i);
        if (l.observed.empty()) throw InvalidArgument("training target has no observed entries");
        levels.push_back(std::move(l));
    }
    const auto sched = config.schedule();
    auto block_sizes = [](Model& m) {
        std::vector<std::size_t> s;
        for (auto b : param_blocks(m)) s.push_back(b.size());
        return s;
    };
    BaselineResult<Model> out{std::move(init), {}};
    AdamState adam(block_sizes(out.model));
    auto rng = sampling_rng(config.seed);
    std::size_t level = 0;
    std::vector<double> weights;
    for (int it = 0; it < config.total_iters; ++it) {
        if (level < config.upsample_iters.size() && it == config.upsample_iters[level]) {
            out.model = upsample(out.model);
            ++level;
            adam = AdamState(block_sizes(out.model));
        }
        const auto& lv = levels[level];
        weights.assign(lv.values.size(), 0.0);
        std::uniform_int_distribution<std::size_t> pick(0, lv.observed.size() - 1);
        const double w = 1.0 / static_cast<double>(config.batch_size);
        for (std::size_t s = 0; s < config.batch_size; ++s) weights[lv.observed[pick(rng)]] += w;
        const auto bg = grad_weighted_dense(out.model, weights, lv.values);
        if (!std::isfinite(bg.loss)) throw NumericError("baseline training diverged: non-finite loss");
        const double lr = lr_at(sched, it, level);
        auto params = param_blocks(out.model);
        std::vector<std::span<const double>> gs(bg.grads.begin(), bg.grads.end());
        adam_update(adam, params, gs, lr);
        out.trace.push_back({it, static_cast<int>(level), lr, bg.loss});
        if (progress) {
            const Model& cur = out.model;
            progress({it, static_cast<int>(level), lr, bg.loss, cur.dims, [&cur] { return dense_values(cur); },
                      param_count(cur)});
        }
    }
    return out;
}

/// "CPD1": u32 d, u32 R, d x u32 n_k, then factors as f64 [n_k][R], little-endian.
inline void save_cp(const std::filesystem::path& path, const CpModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    detail::write_magic(os, "CPD1");
    detail::write_u32_le(os, static_cast<std::uint32_t>(m.dims.size()));
    detail::write_u32_le(os, static_cast<std::uint32_t>(m.rank));
    for (std::size_t n : m.dims) detail::write_u32_le(os, static_cast<std::uint32_t>(n));
    for (const auto& f : m.factors)
        for (Eigen::Index i = 0; i < f.size(); ++i) detail::write_f64_le(os, f.data()[i]);
    if (!os) throw IoError("failed writing " + path.string());
}

[[nodiscard]] inline CpModel load_cp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    detail::expect_magic(is, "CPD1");
    const auto d = detail::read_u32_le(is);
    const auto r = detail::read_u32_le(is);
    if (d < 1 || d > 3 || r < 1) throw FormatError("CPD1: bad header");
    CpModel m{{}, r, {}};
    for (std::uint32_t k = 0; k < d; ++k) m.dims.push_back(detail::read_u32_le(is));
    if (r > (1U << 20)) throw FormatError("CPD1: implausible rank");
    for (std::size_t n : m.dims)
        if (n < 1 || n > (1U << 20)) throw FormatError("CPD1: implausible dimension");
    for (std::size_t n : m.dims) {
        RowMatrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r));
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = detail::read_f64_le(is);
        m.factors.push_back(std::move(f));
    }
    return m;
}

/// "TUK1": u32 d, d x u32 n_k, d x u32 m_k, core f64 [m_1..m_d], then factors
/// f64 [m_k][n_k], little-endian.
inline void save_tucker(const std::filesystem::path& path, const TuckerModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    detail::write_magic(os, "TUK1");
    detail::write_u32_le(os, static_cast<std::uint32_t>(m.dims.size()));
    for (std::size_t n : m.dims) detail::write_u32_le(os, static_cast<std::uint32_t>(n));
    for (std::size_t n : m.core_dims) detail::write_u32_le(os, static_cast<std::uint32_t>(n));
    for (double v : m.core) detail::write_f64_le(os, v);
    for (const auto& f : m.factors)
        for (Eigen::Index i = 0; i < f.size(); ++i) detail::write_f64_le(os, f.data()[i]);
    if (!os) throw IoError("failed writing " + path.string());
}

[[nodiscard]] inline TuckerModel load_tucker(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    detail::expect_magic(is, "TUK1");
    const auto d = detail::read_u32_le(is);
    if (d < 1 || d > 3) throw FormatError("TUK1: bad header");
    TuckerModel m;
    for (std::uint32_t k = 0; k < d; ++k) m.dims.push_back(detail::read_u32_le(is));
    for (std::uint32_t k = 0; k < d; ++k) m.core_dims.push_back(detail::read_u32_le(is));
    for (std::size_t k = 0; k < d; ++k)
        if (m.dims[k] < 1 || m.dims[k] > (1U << 20) || m.core_dims[k] < 1 || m.core_dims[k] > m.dims[k])
            throw FormatError("TUK1: implausible dimensions");
    m.core.resize(Grid::count(m.core_dims));
    for (double& v : m.core) v = detail::read_f64_le(is);
    for (std::size_t k = 0; k < d; ++k) {
        RowMatrix f(static_cast<Eigen::Index>(m.core_dims[k]), static_cast<Eigen::Index>(m.dims[k]));
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = detail::read_f64_le(is);
        m.factors.push_back(std::move(f));
    }
    m.validate();
    return m;
}

} // namespace putt
