#include "putt/experiment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace putt;
using nlohmann::json;

namespace {

const std::filesystem::path kImage = std::filesystem::path(PUTT_SOURCE_DIR) / "data" / "astronaut256.pgm";

std::filesystem::path temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("putt_exp_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

json base_config(const std::string& sub) {
    return {{"subcommand", sub},      {"input", kImage.string()}, {"rank", 16},
            {"total_iters", 200},     {"batch_size", 4096},       {"eval_every", 0}};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream is(p);
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

int config_exit_code(const json& j) {
    try {
        (void)parse_run_config(j);
    } catch (const std::exception& e) {
        return classify(e).first;
    }
    return 0;
}

#ifdef PUTT_CLI
int run_cli(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = std::string(PUTT_CLI) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

} // namespace

TEST(DefaultSchedule, ReferenceRowsAndScaling) {
    auto s = default_schedule(2, 1024);
    EXPECT_EQ(s.upsample_iters, (std::vector<int>{64, 128, 256}));
    EXPECT_EQ(s.total_iters, 1024);
    s = default_schedule(2, 4096);
    EXPECT_EQ(s.upsample_iters, (std::vector<int>{64, 128, 256, 512, 1024}));
    s = default_schedule(2, 256);
    EXPECT_EQ(s.upsample_iters, (std::vector<int>{16, 32, 64}));
    EXPECT_EQ(s.total_iters, 256);
    s = default_schedule(3, 128);
    EXPECT_EQ(s.upsample_iters, (std::vector<int>{16, 48, 144, 432}));
    EXPECT_EQ(s.total_iters, 1536);
    s = default_schedule(3, 32);
    EXPECT_EQ(s.upsample_iters, (std::vector<int>{8, 24, 72}));
    EXPECT_EQ(s.total_iters, 256);
    // a 4-level grid allows at most 3 upsamples
    s = default_schedule(2, 16);
    EXPECT_LE(s.upsample_iters.size(), 3u);
    for (std::size_t i = 1; i < s.upsample_iters.size(); ++i) EXPECT_GT(s.upsample_iters[i], s.upsample_iters[i - 1]);
}

TEST(RunConfigParse, AcceptsFullConfigAndResolvesPaths) {
    json j = base_config("compare");
    j["input"] = "img.pgm";
    j["models"] = {"qtt-putt", "cp", "tucker"};
    j["seeds"] = {1, 2};
    j["noise"] = {{"kind", "laplace"}, {"b", 0.1}};
    j["output_dir"] = "out";
    const auto c = parse_run_config(j, "/data/cfg");
    EXPECT_EQ(c.subcommand, Subcommand::compare);
    EXPECT_EQ(c.input, std::filesystem::path("/data/cfg/img.pgm"));
    EXPECT_EQ(c.output_dir, std::filesystem::path("/data/cfg/out"));
    EXPECT_EQ(c.models.size(), 3u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
    ASSERT_TRUE(c.noise);
    EXPECT_EQ(c.noise->kind, NoiseKind::laplace);
    EXPECT_EQ(c.noise->scale, 0.1);
}

TEST(RunConfigParse, RejectsInvalidConfigsAsConfigErrors) {
    auto with = [](json j, const std::string& k, json v) {
        j[k] = std::move(v);
        return j;
    };
    const json ok = base_config("fit2d");
    EXPECT_EQ(config_exit_code(ok), 0);
    EXPECT_EQ(config_exit_code(with(ok, "rnak", 8)), kExitConfig);
    EXPECT_EQ(config_exit_code(with(ok, "rank", "eight")), kExitConfig);
    EXPECT_EQ(config_exit_code(with(ok, "rank", 0)), kExitConfig);
    EXPECT_EQ(config_exit_code(with(ok, "subcommand", "train")), kExitConfig);
    EXPECT_EQ(config_exit_code(with(ok, "model", "mps")), kExitConfig);
    EXPECT_EQ(config_exit_code(with(ok, "upsample_iters", json{50, 40})), 0);  // checked when the run starts
    EXPECT_EQ(config_exit_code(with(ok, "noise", {{"sigma", 0.1}})), kExitConfig);
    EXPECT_EQ(config_exit_code(with(base_config("denoise"), "noise", {{"sigma", 0.1}, {"seed", 1}})), kExitConfig);
    EXPECT_EQ(config_exit_code(base_config("denoise")), kExitConfig);
    EXPECT_EQ(config_exit_code(base_config("complete")), kExitConfig);
    EXPECT_EQ(config_exit_code(with(base_config("complete"), "observed_fraction", 0.0)), kExitConfig);
    EXPECT_EQ(config_exit_code(with(ok, "sweep", {{"param", "observed_fraction"}, {"values", {0.1}}})), kExitConfig);
    EXPECT_EQ(config_exit_code(with(base_config("svd"), "model", "qtt-putt")), kExitConfig);
    json no_input = ok;
    no_input.erase("input");
    EXPECT_EQ(config_exit_code(no_input), kExitConfig);
    EXPECT_EQ(config_exit_code(json::array()), kExitConfig);
}

TEST(RunConfigParse, SeedOverrideChangesRunIdHash) {
    auto c = parse_run_config(base_config("fit2d"));
    const auto before = c.canonical;
    override_seed(c, 7);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7}));
    EXPECT_NE(c.canonical, before);
}

TEST(ErrorReporting, ExitCodesByErrorKind) {
    EXPECT_EQ(classify(InvalidArgument("x")).first, kExitConfig);
    EXPECT_EQ(classify(ResourceLimit("x")).first, kExitConfig);
    EXPECT_EQ(classify(IoError("x")).first, kExitIo);
    EXPECT_EQ(classify(FormatError("x")).first, kExitIo);
    EXPECT_EQ(classify(NumericError("x")).first, kExitNumeric);
    const auto j = error_json(IoError("cannot open a.pgm"));
    EXPECT_EQ(j["error"]["exit_code"], kExitIo);
    EXPECT_EQ(j["error"]["message"], "cannot open a.pgm");
}

TEST(MeanStd, SampleStandardDeviation) {
    const auto [m, s] = mean_std({1.0, 2.0, 4.0});
    EXPECT_NEAR(m, 7.0 / 3.0, 1e-15);
    EXPECT_NEAR(s, std::sqrt(((1 - m) * (1 - m) + (2 - m) * (2 - m) + (4 - m) * (4 - m)) / 2.0), 1e-15);
    EXPECT_EQ(mean_std({3.0}).second, 0.0);
}

TEST(Experiment, Fit2dUpsamplingBeatsPlainTraining) {
    json j = base_config("fit2d");
    j["models"] = {"qtt-putt", "qtt-noup"};
    j["seed"] = 0;
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("");
    ASSERT_EQ(run_experiment(c), kExitOk);
    const auto summary = json::parse(slurp(c.output_dir / "summary.json"));
    std::map<std::string, double> psnr;
    for (const auto& r : summary["runs"]) psnr[r["model"]] = r["psnr"];
    EXPECT_GE(psnr.at("qtt-putt"), psnr.at("qtt-noup"));

    const auto rows = read_csv(c.output_dir / "metrics.csv");
    ASSERT_FALSE(rows.empty());
    EXPECT_EQ(rows[0], (std::vector<std::string>{"run_id", "model", "seed", "iter", "level", "lr", "loss", "psnr", "ssim",
                                                 "params", "compression_ratio", "wall_seconds"}));
    EXPECT_EQ(rows.size(), 1u + 2u * 200u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ASSERT_EQ(rows[i].size(), 12u);
        EXPECT_NE(rows[i][0].find(summary["config_hash"].get<std::string>()), std::string::npos);
    }
    // the last row of a run carries the final metrics
    EXPECT_FALSE(rows[200][7].empty());
    EXPECT_NEAR(std::stod(rows[200][7]), psnr.at("qtt-putt"), 1e-6);
    for (const auto& r : summary["runs"]) {
        const std::string id = r["run_id"];
        EXPECT_TRUE(std::filesystem::exists(c.output_dir / (id + ".qtt")));
        EXPECT_TRUE(std::filesystem::exists(c.output_dir / (id + "-recon.pgm")));
        const auto ck = load_qtt(c.output_dir / (id + ".qtt"));
        EXPECT_EQ(ck.layout, QttLayout(2, 8));
    }
}

TEST(Experiment, SvdMatchesLibraryComposition) {
    json j = base_config("svd");
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("");
    std::vector<RunOutcome> runs;
    ASSERT_EQ(run_experiment(c, &runs), kExitOk);
    ASSERT_EQ(runs.size(), 1u);
    const Grid img = load_grid(kImage);
    const auto layout = img.layout();
    const auto tt = tt_svd(quantize_grid(img, layout), layout.phys_dims(), 16);
    const double expected = psnr(to_dense(tt, layout), img);
    const auto summary = json::parse(slurp(c.output_dir / "summary.json"));
    EXPECT_NEAR(summary["runs"][0]["psnr"].get<double>(), expected, 1e-9);
    const auto rows = read_csv(c.output_dir / "metrics.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NEAR(std::stod(rows[1][7]), expected, 1e-6);
    EXPECT_EQ(std::stoul(rows[1][9]), param_count(tt));
}

TEST(Experiment, RepeatedRunsAreByteIdentical) {
    json j = base_config("fit2d");
    j["total_iters"] = 120;
    j["eval_every"] = 20;
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("a");
    std::vector<RunOutcome> runs;
    ASSERT_EQ(run_experiment(c, &runs), kExitOk);
    auto d = c;
    d.output_dir = temp_dir("b");
    ASSERT_EQ(run_experiment(d), kExitOk);
    const std::string id = runs[0].run_id;
    for (const auto& f : std::vector<std::string>{"metrics.csv", "summary.json", id + ".qtt", id + "-recon.pgm"})
        EXPECT_EQ(slurp(c.output_dir / f), slurp(d.output_dir / f)) << f;
}

TEST(Experiment, CompareCountsRowsAndUsesSampleStd) {
    json j = base_config("compare");
    j["models"] = {"qtt-putt", "cp"};
    j["seeds"] = {0, 1, 2};
    j["total_iters"] = 60;
    j["save_artifacts"] = false;
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("");
    ASSERT_EQ(run_experiment(c), kExitOk);
    const auto rows = read_csv(c.output_dir / "compare.csv");
    ASSERT_EQ(rows.size(), 1u + 6u + 2u);
    std::map<std::string, std::vector<double>> per_model;
    for (std::size_t i = 1; i <= 6; ++i) {
        EXPECT_EQ(rows[i][0], "run");
        per_model[rows[i][1]].push_back(std::stod(rows[i][6]));
    }
    for (std::size_t i = 7; i <= 8; ++i) {
        EXPECT_EQ(rows[i][0], "aggregate");
        const auto& v = per_model.at(rows[i][1]);
        ASSERT_EQ(v.size(), 3u);
        const double m = (v[0] + v[1] + v[2]) / 3.0;
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        EXPECT_NEAR(std::stod(rows[i][6]), m, 1e-8);
        EXPECT_NEAR(std::stod(rows[i][7]), std::sqrt(ss / 2.0), 1e-8);
    }
}

TEST(Experiment, CompareKeepsPartialResultsWhenARunFails) {
    json j = base_config("compare");
    j["models"] = {"qtt-noup", "tucker"};
    j["total_iters"] = 20;
    j["tucker_rank"] = 512;  // larger than the coarsest grid side: the Tucker run is rejected
    j["baseline_upsampling"] = false;
    j["upsample_iters"] = json::array();
    j["save_artifacts"] = false;
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("");
    std::vector<RunOutcome> runs;
    const int rc = run_experiment(c, &runs);
    EXPECT_EQ(rc, kExitConfig);
    ASSERT_EQ(runs.size(), 2u);
    EXPECT_TRUE(runs[0].error.empty());
    EXPECT_FALSE(runs[1].error.empty());
    const auto summary = json::parse(slurp(c.output_dir / "summary.json"));
    EXPECT_TRUE(summary["runs"][1].contains("error"));
    EXPECT_EQ(summary["aggregate"].size(), 1u);
}

TEST(Experiment, MissingDataSweepFavoursUpsamplingMoreAtLowFraction) {
    json j = base_config("compare");
    j["models"] = {"qtt-putt", "qtt-noup"};
    j["seeds"] = {0, 1, 2};
    j["total_iters"] = 512;
    j["upsample_iters"] = {32, 64, 128, 256};
    j["save_artifacts"] = false;
    j["sweep"] = {{"param", "observed_fraction"}, {"values", {0.01, 0.1}}};
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("");
    ASSERT_EQ(run_experiment(c), kExitOk);
    const auto summary = json::parse(slurp(c.output_dir / "summary.json"));
    std::map<std::pair<std::string, double>, double> mean;
    for (const auto& a : summary["aggregate"]) mean[{a["model"], a["sweep_value"]}] = a["psnr_mean"];
    const double gap_low = mean.at({"qtt-putt", 0.01}) - mean.at({"qtt-noup", 0.01});
    const double gap_high = mean.at({"qtt-putt", 0.1}) - mean.at({"qtt-noup", 0.1});
    EXPECT_GT(gap_low, gap_high);
}

TEST(Experiment, VolumeFitWritesVolumeReconstruction) {
    const auto dir = temp_dir("");
    Grid vol({16, 16, 16});
    for (std::size_t i = 0; i < vol.size(); ++i) vol.values[i] = 0.5 + 0.4 * std::sin(0.01 * static_cast<double>(i));
    save_grid(vol, dir / "vol.f32");
    json j{{"subcommand", "fit3d"}, {"input", "vol.f32"}, {"rank", 8}, {"total_iters", 60}, {"batch_size", 1024}};
    auto c = parse_run_config(j, dir);
    c.output_dir = dir / "out";
    std::vector<RunOutcome> runs;
    ASSERT_EQ(run_experiment(c, &runs), kExitOk);
    const Grid back = load_grid(c.output_dir / (runs[0].run_id + "-recon.f32"));
    EXPECT_EQ(back.dims, vol.dims);
    json bad = j;
    bad["subcommand"] = "fit2d";
    auto c2 = parse_run_config(bad, dir);
    c2.output_dir = dir / "out2";
    EXPECT_THROW((void)run_experiment(c2), InvalidArgument);
}

TEST(Experiment, DenoiseAndCompleteReportAgainstCleanImage) {
    json j = base_config("denoise");
    j["noise"] = {{"sigma", 0.1}};
    j["total_iters"] = 80;
    j["save_artifacts"] = false;
    auto c = parse_run_config(j);
    c.output_dir = temp_dir("n");
    std::vector<RunOutcome> runs;
    ASSERT_EQ(run_experiment(c, &runs), kExitOk);
    EXPECT_NEAR(runs[0].psnr, psnr(runs[0].reconstruction, load_grid(kImage)), 1e-12);

    json k = base_config("complete");
    k["observed_fraction"] = 0.2;
    k["total_iters"] = 80;
    k["save_artifacts"] = false;
    auto d = parse_run_config(k);
    d.output_dir = temp_dir("c");
    ASSERT_EQ(run_experiment(d, &runs), kExitOk);
    EXPECT_TRUE(std::isfinite(runs[0].psnr_unobserved));
}

#ifdef PUTT_CLI
TEST(Cli, ExitCodesAndErrorJson) {
    const auto dir = temp_dir("");
    std::ofstream(dir / "bad.json") << json{{"subcommand", "fit2d"}, {"input", kImage.string()}, {"rnak", 3}}.dump();
    EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " --out " + (dir / "o1").string(), dir / "log1"),
              kExitConfig);
    const auto err = json::parse(slurp(dir / "o1" / "error.json"));
    EXPECT_EQ(err["error"]["exit_code"], kExitConfig);
    std::ofstream(dir / "missing.json") << json{{"subcommand", "fit2d"}, {"input", "nope.pgm"}}.dump();
    EXPECT_EQ(run_cli("--config " + (dir / "missing.json").string() + " --out " + (dir / "o2").string(), dir / "log2"),
              kExitIo);
    EXPECT_EQ(run_cli("--config " + (dir / "absent.json").string(), dir / "log3"), kExitIo);
    EXPECT_EQ(run_cli("", dir / "log4"), kExitConfig);
}

TEST(Cli, SeedOverrideAndDeterminism) {
    const auto dir = temp_dir("");
    json j = base_config("fit2d");
    j["total_iters"] = 60;
    j["seeds"] = {0, 1};
    std::ofstream(dir / "cfg.json") << j.dump();
    for (const char* out : {"a", "b"})
        ASSERT_EQ(run_cli("--config " + (dir / "cfg.json").string() + " --seed 5 --threads 1 --out " +
                              (dir / out).string(),
                          dir / "log"),
                  kExitOk);
    const auto rows = read_csv(dir / "a" / "metrics.csv");
    ASSERT_EQ(rows.size(), 61u);
    EXPECT_EQ(rows[1][2], "5");
    EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
    const std::string ck = rows[1][0] + ".qtt";
    EXPECT_EQ(slurp(dir / "a" / ck), slurp(dir / "b" / ck));
}
#endif
