#pragma once

#include "putt/binary_io.hpp"
#include "putt/error.hpp"
#include "putt/qtt_layout.hpp"
#include "putt/tensor_train.hpp"

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

namespace putt {

/// QTT checkpoint: "QTT1", u32 d, u32 D, u32 core count, the rank profile
/// (core count + 1 u32 values), then every core as f64 in [R_k][n_k][R_{k+1}]
/// order. All fields little-endian.
struct QttCheckpoint {
    QttLayout layout;
    TensorTrain tt;
};

inline void write_qtt(std::ostream& os, const QttLayout& layout, const TensorTrain& tt) {
    detail::require(tt.depth() == static_cast<std::size_t>(layout.depth), "write_qtt: TT depth differs from layout");
    detail::write_magic(os, "QTT1");
    detail::write_u32_le(os, static_cast<std::uint32_t>(layout.spatial_dim));
    detail::write_u32_le(os, static_cast<std::uint32_t>(layout.depth));
    detail::write_u32_le(os, static_cast<std::uint32_t>(tt.depth()));
    for (std::size_t r : tt.rank_profile()) detail::write_u32_le(os, static_cast<std::uint32_t>(r));
    for (const auto& c : tt.cores())
        for (double v : c.data()) detail::write_f64_le(os, v);
}

[[nodiscard]] inline QttCheckpoint read_qtt(std::istream& is) {
    detail::expect_magic(is, "QTT1");
    const auto d = static_cast<int>(detail::read_u32_le(is));
    const auto D = static_cast<int>(detail::read_u32_le(is));
    const auto count = detail::read_u32_le(is);
    if (d < 1 || d > 3 || D < 1 || D > 30 || count != static_cast<std::uint32_t>(D))
        throw FormatError("QTT1: inconsistent header");
    const QttLayout layout(d, D);
    std::vector<std::size_t> ranks(count + 1);
    for (auto& r : ranks) {
        r = detail::read_u32_le(is);
        if (r == 0 || r > (1U << 20)) throw FormatError("QTT1: implausible rank");
    }
    if (ranks.front() != 1 || ranks.back() != 1) throw FormatError("QTT1: boundary ranks must be 1");
    std::vector<TtCore> cores;
    for (std::size_t k = 0; k < count; ++k) {
        TtCore c(ranks[k], layout.core_phys_dim(), ranks[k + 1]);
        for (double& v : c.data()) v = detail::read_f64_le(is);
        cores.push_back(std::move(c));
    }
    return {layout, TensorTrain(std::move(cores))};
}

inline void save_qtt(const std::filesystem::path& path, const QttLayout& layout, const TensorTrain& tt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_qtt(os, layout, tt);
    if (!os) throw IoError("failed writing " + path.string());
}

[[nodiscard]] inline QttCheckpoint load_qtt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_qtt(is);
}

} // namespace putt
