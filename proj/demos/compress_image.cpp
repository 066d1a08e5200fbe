// Fits a QTT to an image coarse-to-fine and compares it with TT-SVD at the
// same rank. Usage: compress_image [image.pgm] [rank] [iterations]

#include "putt/putt.hpp"

#include <cstdio>
#include <cstdlib>
#include <string>

int main(int argc, char** argv) {
    using namespace putt;
    const std::string path = argc > 1 ? argv[1] : std::string(PUTT_SOURCE_DIR) + "/data/astronaut256.pgm";
    const std::size_t rank = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 32;
    const int iters = argc > 3 ? std::atoi(argv[3]) : 1024;
    try {
        const Grid img = load_grid(path);
        const auto layout = img.layout();
        const Schedule sched = default_schedule(layout.spatial_dim, layout.side_length());

        TrainConfig c;
        c.r_max = rank;
        c.total_iters = iters;
        for (int u : sched.upsample_iters)
            if (u < iters) c.upsample_iters.push_back(u);
        c.batch_size = 4096;
        std::printf("%s: %zux%zu, rank %zu, %d iterations, upsampling at", path.c_str(), img.dims[0], img.dims[1], rank,
                    iters);
        for (int u : c.upsample_iters) std::printf(" %d", u);
        std::printf("\n");

        const auto res = train_putt(build_pyramid(img, static_cast<int>(c.upsample_iters.size())), c,
                                    [&](const Progress& p) {
                                        if (p.iter % 128 == 0)
                                            std::printf("  iter %5d  level %d  lr %.2e  loss %.3e\n", p.iter, p.level,
                                                        p.lr, p.loss);
                                    });
        const Grid fit = to_dense(res.tt, res.layout);
        const auto svd = tt_svd(quantize_grid(img, layout), layout.phys_dims(), rank);
        const Grid svd_fit = to_dense(svd, layout);
        std::printf("PuTT    psnr %.2f dB  ssim %.3f  params %zu  ratio %.1f\n", psnr(fit, img), ssim(fit, img),
                    param_count(res.tt), compression_ratio(img.size(), param_count(res.tt)));
        std::printf("TT-SVD  psnr %.2f dB  ssim %.3f  params %zu  ratio %.1f\n", psnr(svd_fit, img),
                    ssim(svd_fit, img), param_count(svd), compression_ratio(img.size(), param_count(svd)));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
