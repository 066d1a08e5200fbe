#include "putt/experiment.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

void report_error(const std::exception& e, const std::optional<std::filesystem::path>& out_dir) {
    const auto j = putt::error_json(e);
    std::cerr << j.dump() << '\n';
    if (!out_dir) return;
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    std::ofstream os(*out_dir / "error.json");
    if (os) os << j.dump(2) << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantized tensor-train fitting, denoising and completion driver"};
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--out", out_dir, "output directory (overrides output_dir)");
    app.add_option("--seed", seed, "run a single seed (overrides seed/seeds)");
    app.add_option("--threads", threads, "Eigen worker threads")->check(CLI::PositiveNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : putt::kExitConfig;
    }
    Eigen::setNbThreads(threads);

    std::optional<std::filesystem::path> error_dir;
    if (!out_dir.empty()) error_dir = out_dir;
    try {
        auto config = putt::load_run_config(config_path);
        if (!out_dir.empty()) config.output_dir = out_dir;
        if (seed) putt::override_seed(config, *seed);
        error_dir = config.output_dir;
        std::vector<putt::RunOutcome> runs;
        const int rc = putt::run_experiment(config, &runs);
        for (const auto& r : runs) {
            if (!r.error.empty()) {
                std::cerr << nlohmann::json{{"error", {{"run_id", r.run_id}, {"message", r.error}, {"exit_code", r.exit_code}}}}.dump()
                          << '\n';
                continue;
            }
            std::cout << r.run_id << " psnr " << putt::detail::fmt(r.psnr) << " params " << r.params << '\n';
        }
        return rc;
    } catch (const std::exception& e) {
        report_error(e, error_dir);
        return putt::classify(e).first;
    }
}
