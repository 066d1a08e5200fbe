// Prints the 1D prolongation operator for a 4-sample grid and upsamples a
// small 2D ramp stored as a QTT.

#include "putt/putt.hpp"

#include <cstdio>

int main() {
    using namespace putt;
    const RowMatrix p = prolongation_mpo_1d(2).to_dense_matrix();
    std::printf("P (4 -> 8):\n");
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) std::printf(" %4.1f", p(i, j));
        std::printf("\n");
    }

    Grid ramp({4, 4});
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) ramp.values[y * 4 + x] = static_cast<double>(x + y);
    const auto layout = ramp.layout();
    const auto tt = tt_svd(quantize_grid(ramp, layout), layout.phys_dims(), 8);
    const auto [fine, fine_layout] = prolong(tt, layout, 8);
    const Grid up = to_dense(fine, fine_layout);
    std::printf("\n4x4 ramp upsampled to 8x8 (ranks");
    for (std::size_t r : fine.rank_profile()) std::printf(" %zu", r);
    std::printf("):\n");
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) std::printf(" %5.2f", up.values[y * 8 + x]);
        std::printf("\n");
    }
}
