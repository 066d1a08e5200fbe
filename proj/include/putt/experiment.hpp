#pragma once

#include "putt/baselines.hpp"
#include "putt/checkpoint.hpp"
#include "putt/dense.hpp"
#include "putt/error.hpp"
#include "putt/grid_io.hpp"
#include "putt/metrics.hpp"
#include "putt/pyramid.hpp"
#include "putt/train.hpp"
#include "putt/ttsvd.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace putt {

enum class Subcommand { fit2d, fit3d, denoise, complete, svd, compare };
enum class ModelKind { qtt_putt, qtt_noup, cp, tucker, ttsvd };

[[nodiscard]] inline std::string to_string(Subcommand s) {
    switch (s) {
        case Subcommand::fit2d: return "fit2d";
        case Subcommand::fit3d: return "fit3d";
        case Subcommand::denoise: return "denoise";
        case Subcommand::complete: return "complete";
        case Subcommand::svd: return "svd";
        case Subcommand::compare: return "compare";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(ModelKind m) {
    switch (m) {
        case ModelKind::qtt_putt: return "qtt-putt";
        case ModelKind::qtt_noup: return "qtt-noup";
        case ModelKind::cp: return "cp";
        case ModelKind::tucker: return "tucker";
        case ModelKind::ttsvd: return "ttsvd";
    }
    return "?";
}

[[nodiscard]] inline Subcommand parse_subcommand(const std::string& s) {
    for (auto c : {Subcommand::fit2d, Subcommand::fit3d, Subcommand::denoise, Subcommand::complete, Subcommand::svd,
                   Subcommand::compare})
        if (to_string(c) == s) return c;
    throw InvalidArgument("unknown subcommand \"" + s + "\"");
}

[[nodiscard]] inline ModelKind parse_model(const std::string& s) {
    for (auto m : {ModelKind::qtt_putt, ModelKind::qtt_noup, ModelKind::cp, ModelKind::tucker, ModelKind::ttsvd})
        if (to_string(m) == s) return m;
    throw InvalidArgument("unknown model \"" + s + "\"");
}

/// Upsampling schedule and iteration budget taken from the reference
/// configuration table (2D rows from 1024², 3D rows from 64³). The largest
/// row not above the grid side is picked and its iteration counts are scaled
/// by side / row side. The number of upsamples is capped at depth - 1.
struct Schedule {
    std::vector<int> upsample_iters;
    int total_iters = 0;
};

[[nodiscard]] inline Schedule default_schedule(int spatial_dim, std::size_t side) {
    struct Row {
        std::size_t side;
        std::vector<int> ups;
        int total;
    };
    static const std::vector<Row> rows2d{{1024, {64, 128, 256}, 1024},
                                         {2048, {64, 128, 256, 512}, 2048},
                                         {4096, {64, 128, 256, 512, 1024}, 4096},
                                         {8192, {64, 128, 256, 512, 1024, 2048}, 8192},
                                         {16384, {64, 128, 256, 512, 1024, 2048, 4096}, 16384}};
    static const std::vector<Row> rows3d{{64, {16, 48, 144}, 512},
                                         {128, {16, 48, 144, 432}, 1536},
                                         {256, {16, 48, 144, 432, 1296}, 4608},
                                         {512, {16, 48, 144, 432, 1296, 3888}, 13824},
                                         {1024, {48, 144, 432, 1296, 3888, 11664, 34992}, 69984}};
    const auto& rows = spatial_dim == 3 ? rows3d : rows2d;
    const Row* pick = &rows.front();
    for (const auto& r : rows)
        if (r.side <= side) pick = &r;
    const double scale = static_cast<double>(side) / static_cast<double>(pick->side);
    Schedule s;
    s.total_iters = std::max(1, static_cast<int>(std::lround(pick->total * scale)));
    const int depth = std::countr_zero(side);
    for (int u : pick->ups) {
        if (static_cast<int>(s.upsample_iters.size()) >= depth - 1) break;
        int it = std::max(1, static_cast<int>(std::lround(u * scale)));
        if (!s.upsample_iters.empty()) it = std::max(it, s.upsample_iters.back() + 1);
        if (it >= s.total_iters) break;
        s.upsample_iters.push_back(it);
    }
    return s;
}

struct NoiseConfig {
    NoiseKind kind = NoiseKind::gaussian;
    double scale = 0.0;
};

struct SweepConfig {
    std::string param;  // "noise_sigma" or "observed_fraction"
    std::vector<double> values;
};

/// One experiment description, read from a JSON document.
struct RunConfig {
    Subcommand subcommand = Subcommand::fit2d;
    std::filesystem::path input;
    std::vector<ModelKind> models{ModelKind::qtt_putt};
    std::size_t rank = 64;
    std::optional<std::size_t> cp_rank;
    std::optional<std::size_t> tucker_rank;
    std::optional<int> total_iters;
    std::optional<std::vector<int>> upsample_iters;
    bool baseline_upsampling = true;
    std::size_t batch_size = 512 * 512;
    std::vector<std::uint64_t> seeds{0};
    double init_sigma = 0.1;
    InitScale init_scale = InitScale::entry;
    std::optional<double> base_lr;
    double alpha = 0.1;
    double beta = 0.9;
    int warmup_iters = 50;
    std::optional<LrAdaptation> lr_adaptation;
    std::optional<double> lr_factor;
    std::optional<NoiseConfig> noise;
    std::optional<double> observed_fraction;
    std::optional<std::filesystem::path> mask;
    std::optional<SweepConfig> sweep;
    std::vector<int> grow_iters;
    std::size_t grow_delta = 0;
    std::size_t grow_cap = 0;
    int eval_every = 100;
    int log_every = 0;
    bool record_wall_time = false;
    bool save_artifacts = true;
    std::filesystem::path output_dir = "out";

    /// Canonical JSON text the run ids hash; set by parse_run_config.
    std::string canonical;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex8(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf, 8);
}

template <typename T>
T json_get(const nlohmann::json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config key \"" + key + "\": " + e.what());
    }
}

inline NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "laplace") return NoiseKind::laplace;
    throw InvalidArgument("unknown noise kind \"" + s + "\"");
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw InvalidArgument("unknown config key \"" + k + "\" in " + where);
}

} // namespace detail

/// Parses and validates a run configuration. Relative paths are resolved
/// against `base_dir`. Unknown keys are rejected.
[[nodiscard]] inline RunConfig parse_run_config(nlohmann::json j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    static const std::set<std::string> keys{
        "subcommand", "input", "model", "models", "rank", "cp_rank", "tucker_rank", "total_iters",
        "upsample_iters", "baseline_upsampling", "batch_size", "seed", "seeds", "init_sigma", "init_scale",
        "base_lr", "alpha", "beta", "warmup_iters", "lr_adaptation", "lr_factor", "noise", "observed_fraction",
        "mask", "sweep", "grow_iters", "grow_delta", "grow_cap", "eval_every", "log_every", "record_wall_time",
        "save_artifacts", "output_dir"};
    detail::reject_unknown(j, keys, "config");
    RunConfig c;
    if (!j.contains("subcommand")) throw InvalidArgument("config is missing \"subcommand\"");
    c.subcommand = parse_subcommand(detail::json_get<std::string>(j, "subcommand"));
    if (!j.contains("input")) throw InvalidArgument("config is missing \"input\"");
    c.input = detail::json_get<std::string>(j, "input");
    if (c.input.is_relative() && !base_dir.empty()) c.input = base_dir / c.input;

    if (j.contains("model") && j.contains("models")) throw InvalidArgument("give either \"model\" or \"models\"");
    if (j.contains("model")) c.models = {parse_model(detail::json_get<std::string>(j, "model"))};
    if (j.contains("models")) {
        c.models.clear();
        for (const auto& m : detail::json_get<std::vector<std::string>>(j, "models")) c.models.push_back(parse_model(m));
        if (c.models.empty()) throw InvalidArgument("\"models\" must not be empty");
    }
    if (c.subcommand == Subcommand::svd) {
        if (!j.contains("model") && !j.contains("models")) c.models = {ModelKind::ttsvd};
        for (auto m : c.models)
            if (m != ModelKind::ttsvd) throw InvalidArgument("the svd subcommand only runs model \"ttsvd\"");
    }

    auto get_size = [&](const char* k, std::size_t& out) {
        if (j.contains(k)) out = detail::json_get<std::size_t>(j, k);
    };
    get_size("rank", c.rank);
    get_size("batch_size", c.batch_size);
    get_size("grow_delta", c.grow_delta);
    get_size("grow_cap", c.grow_cap);
    if (j.contains("cp_rank")) c.cp_rank = detail::json_get<std::size_t>(j, "cp_rank");
    if (j.contains("tucker_rank")) c.tucker_rank = detail::json_get<std::size_t>(j, "tucker_rank");
    if (j.contains("total_iters")) c.total_iters = detail::json_get<int>(j, "total_iters");
    if (j.contains("upsample_iters")) c.upsample_iters = detail::json_get<std::vector<int>>(j, "upsample_iters");
    if (j.contains("baseline_upsampling")) c.baseline_upsampling = detail::json_get<bool>(j, "baseline_upsampling");
    if (j.contains("seed") && j.contains("seeds")) throw InvalidArgument("give either \"seed\" or \"seeds\"");
    if (j.contains("seed")) c.seeds = {detail::json_get<std::uint64_t>(j, "seed")};
    if (j.contains("seeds")) c.seeds = detail::json_get<std::vector<std::uint64_t>>(j, "seeds");
    if (c.seeds.empty()) throw InvalidArgument("\"seeds\" must not be empty");
    if (j.contains("init_sigma")) c.init_sigma = detail::json_get<double>(j, "init_sigma");
    if (j.contains("init_scale")) {
        const auto s = detail::json_get<std::string>(j, "init_scale");
        if (s == "entry") c.init_scale = InitScale::entry;
        else if (s == "core") c.init_scale = InitScale::core;
        else throw InvalidArgument("init_scale must be \"entry\" or \"core\"");
    }
    if (j.contains("base_lr")) c.base_lr = detail::json_get<double>(j, "base_lr");
    if (j.contains("alpha")) c.alpha = detail::json_get<double>(j, "alpha");
    if (j.contains("beta")) c.beta = detail::json_get<double>(j, "beta");
    if (j.contains("warmup_iters")) c.warmup_iters = detail::json_get<int>(j, "warmup_iters");
    if (j.contains("lr_adaptation")) c.lr_adaptation = parse_lr_adaptation(detail::json_get<std::string>(j, "lr_adaptation"));
    if (j.contains("lr_factor")) c.lr_factor = detail::json_get<double>(j, "lr_factor");
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        if (!n.is_object()) throw InvalidArgument("\"noise\" must be an object");
        detail::reject_unknown(n, {"kind", "sigma", "b"}, "noise");
        NoiseConfig nc;
        if (n.contains("kind")) nc.kind = detail::parse_noise_kind(detail::json_get<std::string>(n, "kind"));
        if (n.contains("sigma") && n.contains("b")) throw InvalidArgument("noise: give either \"sigma\" or \"b\"");
        if (n.contains("sigma")) nc.scale = detail::json_get<double>(n, "sigma");
        if (n.contains("b")) nc.scale = detail::json_get<double>(n, "b");
        if (!(nc.scale >= 0.0)) throw InvalidArgument("noise scale must be >= 0");
        c.noise = nc;
    }
    if (j.contains("observed_fraction")) c.observed_fraction = detail::json_get<double>(j, "observed_fraction");
    if (j.contains("mask")) {
        c.mask = std::filesystem::path(detail::json_get<std::string>(j, "mask"));
        if (c.mask->is_relative() && !base_dir.empty()) c.mask = base_dir / *c.mask;
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        if (!s.is_object()) throw InvalidArgument("\"sweep\" must be an object");
        detail::reject_unknown(s, {"param", "values"}, "sweep");
        SweepConfig sc{detail::json_get<std::string>(s, "param"), detail::json_get<std::vector<double>>(s, "values")};
        if (sc.param != "noise_sigma" && sc.param != "observed_fraction")
            throw InvalidArgument("sweep param must be \"noise_sigma\" or \"observed_fraction\"");
        if (sc.values.empty()) throw InvalidArgument("sweep values must not be empty");
        c.sweep = sc;
    }
    if (j.contains("grow_iters")) c.grow_iters = detail::json_get<std::vector<int>>(j, "grow_iters");
    if (j.contains("eval_every")) c.eval_every = detail::json_get<int>(j, "eval_every");
    if (j.contains("log_every")) c.log_every = detail::json_get<int>(j, "log_every");
    if (j.contains("record_wall_time")) c.record_wall_time = detail::json_get<bool>(j, "record_wall_time");
    if (j.contains("save_artifacts")) c.save_artifacts = detail::json_get<bool>(j, "save_artifacts");
    if (j.contains("output_dir")) {
        c.output_dir = detail::json_get<std::string>(j, "output_dir");
        if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;
    }

    // cross-field checks
    detail::require(c.rank >= 1, "rank must be >= 1");
    detail::require(c.batch_size >= 1, "batch_size must be >= 1");
    detail::require(c.init_sigma > 0.0, "init_sigma must be positive");
    detail::require(c.eval_every >= 0 && c.log_every >= 0, "eval_every and log_every must be >= 0");
    if (c.sweep && c.subcommand != Subcommand::compare) throw InvalidArgument("\"sweep\" is only valid for compare");
    if (c.observed_fraction)
        detail::require(*c.observed_fraction > 0.0 && *c.observed_fraction <= 1.0, "observed_fraction must be in (0, 1]");
    if (c.observed_fraction && c.mask) throw InvalidArgument("give either \"observed_fraction\" or \"mask\"");
    if (c.lr_factor) detail::require(*c.lr_factor > 0.0, "lr_factor must be positive");
    const bool has_missing = c.observed_fraction || c.mask || (c.sweep && c.sweep->param == "observed_fraction");
    const bool has_noise = c.noise || (c.sweep && c.sweep->param == "noise_sigma");
    switch (c.subcommand) {
        case Subcommand::fit2d:
        case Subcommand::fit3d:
        case Subcommand::svd:
            if (has_missing || has_noise)
                throw InvalidArgument(to_string(c.subcommand) + " does not take noise or missing-data settings");
            break;
        case Subcommand::denoise:
            if (!c.noise) throw InvalidArgument("denoise needs a \"noise\" object");
            if (has_missing) throw InvalidArgument("denoise does not take missing-data settings");
            break;
        case Subcommand::complete:
            if (!c.observed_fraction && !c.mask) throw InvalidArgument("complete needs \"observed_fraction\" or \"mask\"");
            if (has_noise) throw InvalidArgument("complete does not take noise settings");
            break;
        case Subcommand::compare:
            break;
    }
    if (has_missing)
        for (auto m : c.models)
            if (m == ModelKind::ttsvd) throw InvalidArgument("ttsvd cannot learn from incomplete data");
    if (c.sweep && c.sweep->param == "observed_fraction" && c.mask)
        throw InvalidArgument("an observed_fraction sweep cannot be combined with a mask file");
    for (double v : c.sweep ? c.sweep->values : std::vector<double>{}) {
        if (c.sweep->param == "observed_fraction") detail::require(v > 0.0 && v <= 1.0, "sweep fractions must be in (0, 1]");
        else detail::require(v >= 0.0, "sweep noise levels must be >= 0");
    }
    if (c.sweep && c.sweep->param == "noise_sigma" && !c.noise) c.noise = NoiseConfig{};
    if (!c.grow_iters.empty()) detail::require(c.grow_delta >= 1, "grow_delta must be >= 1 when grow_iters is set");

    c.canonical = j.dump();
    return c;
}

[[nodiscard]] inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(std::move(j), path.parent_path());
}

/// Applies a --seed override and refreshes the canonical text.
inline void override_seed(RunConfig& c, std::uint64_t seed) {
    c.seeds = {seed};
    auto j = nlohmann::json::parse(c.canonical);
    j.erase("seeds");
    j["seed"] = seed;
    c.canonical = j.dump();
}

/// Observed data for one run plus the clean reference.
struct Task {
    Grid clean;
    Grid observed;
    std::optional<double> sweep_value;
};

[[nodiscard]] inline Task make_task(const RunConfig& c, const Grid& clean, std::uint64_t seed,
                                    std::optional<double> sweep_value = std::nullopt) {
    Task t{clean, clean, sweep_value};
    std::optional<NoiseConfig> noise = c.noise;
    std::optional<double> p = c.observed_fraction;
    if (sweep_value) {
        if (c.sweep->param == "noise_sigma") noise->scale = *sweep_value;
        else p = *sweep_value;
    }
    if (noise && noise->scale > 0.0)
        t.observed = add_noise(clean, {noise->kind, noise->scale, seed ^ 0x6E6F697365ULL});
    if (p && *p < 1.0) t.observed.mask = random_mask(clean.dims, *p, seed ^ 0x6D61736BULL);
    if (c.mask) {
        auto m = load_mask(*c.mask);
        if (m.size() != clean.size()) throw FormatError("mask size differs from the input grid");
        t.observed.mask = std::move(m);
    }
    if (t.observed.mask && t.observed.observed_count() == 0) throw InvalidArgument("mask leaves no observed cells");
    return t;
}

/// One row of metrics.csv. Optional fields are written as empty cells.
struct MetricsRow {
    std::string run_id;
    std::string model;
    std::uint64_t seed = 0;
    int iter = 0;
    int level = 0;
    std::optional<double> lr;
    double loss = 0.0;
    std::optional<double> psnr;
    std::optional<double> ssim;
    std::size_t params = 0;
    double compression_ratio = 0.0;
    std::optional<double> wall_seconds;
};

struct RunOutcome {
    std::string run_id;
    ModelKind model = ModelKind::qtt_putt;
    std::uint64_t seed = 0;
    std::optional<double> sweep_value;
    double psnr = 0.0;
    double ssim = std::numeric_limits<double>::quiet_NaN();
    double psnr_unobserved = std::numeric_limits<double>::quiet_NaN();
    /// MSE of the final model against the training target on observed cells.
    double final_loss = 0.0;
    std::size_t params = 0;
    double compression_ratio = 0.0;
    std::vector<MetricsRow> rows;
    Grid reconstruction;
    std::string error;
    int exit_code = 0;
};

namespace detail {

inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline double safe_ssim(const Grid& a, const Grid& b) {
    if (a.dims.size() < 2 || a.dims[0] < 11 || a.dims[1] < 11) return std::numeric_limits<double>::quiet_NaN();
    return ssim(a, b);
}

inline std::vector<Grid> clean_pyramid(const Grid& clean, int levels) {
    Grid plain = clean;
    plain.mask.reset();
    return build_pyramid(plain, levels);
}

} // namespace detail

/// Trains or decomposes one (model, seed[, sweep value]) combination.
[[nodiscard]] inline RunOutcome run_model(const RunConfig& c, ModelKind model, const Task& task, std::uint64_t seed) {
    RunOutcome out;
    out.model = model;
    out.seed = seed;
    out.sweep_value = task.sweep_value;
    std::string id = to_string(model) + "-s" + std::to_string(seed);
    if (task.sweep_value) id += "-" + c.sweep->param + "=" + detail::fmt(*task.sweep_value);
    out.run_id = id + "-" + detail::hex8(detail::fnv1a64(c.canonical));

    const Grid& target = task.observed;
    const auto layout = target.layout();
    const std::size_t dense_n = target.size();
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&]() -> std::optional<double> {
        if (!c.record_wall_time) return std::nullopt;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    if (model == ModelKind::ttsvd) {
        const auto tt = tt_svd(quantize_grid(target, layout), layout.phys_dims(), c.rank);
        out.reconstruction = to_dense(tt, layout);
        out.params = param_count(tt);
        out.final_loss = mse(out.reconstruction, target);
        out.psnr = psnr(out.reconstruction, task.clean);
        out.ssim = detail::safe_ssim(out.reconstruction, task.clean);
        out.compression_ratio = compression_ratio(dense_n, out.params);
        out.rows.push_back({out.run_id, to_string(model), seed, 0, 0, std::nullopt, out.final_loss, out.psnr,
                            std::isnan(out.ssim) ? std::nullopt : std::optional<double>(out.ssim), out.params,
                            out.compression_ratio, wall()});
        if (c.save_artifacts) {
            std::filesystem::create_directories(c.output_dir);
            save_qtt(c.output_dir / (out.run_id + ".qtt"), layout, tt);
        }
        return out;
    }

    // schedule
    const Schedule def = default_schedule(layout.spatial_dim, layout.side_length());
    TrainConfig tc;
    tc.r_max = c.rank;
    tc.total_iters = c.total_iters.value_or(def.total_iters);
    std::vector<int> ups = c.upsample_iters.value_or(std::vector<int>{});
    if (!c.upsample_iters)
        for (int u : def.upsample_iters)
            if (u < tc.total_iters) ups.push_back(u);
    const bool upsample = model == ModelKind::qtt_putt ||
                          ((model == ModelKind::cp || model == ModelKind::tucker) && c.baseline_upsampling);
    tc.upsample_iters = upsample ? ups : std::vector<int>{};
    if (static_cast<int>(tc.upsample_iters.size()) > layout.depth - 1)
        throw InvalidArgument("more upsampling steps than the grid depth allows");
    tc.batch_size = c.batch_size;
    tc.seed = seed;
    tc.init_sigma = c.init_sigma;
    tc.init_scale = c.init_scale;
    const bool baseline = model == ModelKind::cp || model == ModelKind::tucker;
    double base = c.base_lr.value_or(baseline ? 1e-2 : 5e-3);
    LrAdaptation mode = c.lr_adaptation.value_or(LrAdaptation::none);
    if (!c.lr_adaptation) {
        if (c.noise) mode = LrAdaptation::noise;
        else if (target.has_mask()) mode = LrAdaptation::missing_data;
    }
    if (mode == LrAdaptation::noise) {
        double sigma = c.noise ? c.noise->scale : 0.0;
        if (task.sweep_value && c.sweep->param == "noise_sigma") sigma = *task.sweep_value;
        base = adapt_base_lr(base, mode, sigma, c.lr_factor.value_or(0.1));
    } else if (mode == LrAdaptation::missing_data) {
        const double p = static_cast<double>(target.observed_count()) / static_cast<double>(dense_n);
        base = adapt_base_lr(base, mode, p, c.lr_factor.value_or(0.5));
    }
    tc.base_lr = base;
    tc.alpha = c.alpha;
    tc.beta = c.beta;
    tc.warmup_iters = c.warmup_iters;
    tc.grow_iters = c.grow_iters;
    tc.grow_delta = c.grow_delta;
    tc.grow_cap = c.grow_cap;
    tc.validate();

    const int levels = static_cast<int>(tc.upsample_iters.size());
    const auto pyramid = build_pyramid(target, levels);
    const auto clean_pyr = detail::clean_pyramid(task.clean, levels);

    auto eval_now = [&](int iter, int level) {
        if (iter == tc.total_iters - 1) return true;
        if (level < levels && iter + 1 == tc.upsample_iters[static_cast<std::size_t>(level)]) return true;
        return c.eval_every > 0 && iter % c.eval_every == 0;
    };
    auto log = [&](int iter, int level, double loss) {
        if (c.log_every > 0 && (iter % c.log_every == 0 || iter == tc.total_iters - 1))
            std::clog << "[" << out.run_id << "] iter " << iter << " level " << level << " loss " << detail::fmt(loss)
                      << '\n';
    };
    auto record = [&](int iter, int level, double lr, double loss, std::size_t params,
                      const std::function<Grid()>& recon) {
        MetricsRow row{out.run_id, to_string(model), seed, iter, level, lr, loss, std::nullopt, std::nullopt, params,
                       compression_ratio(dense_n, params), wall()};
        if (eval_now(iter, level)) {
            const Grid g = recon();
            const Grid& ref = clean_pyr[static_cast<std::size_t>(level)];
            row.psnr = psnr(g, ref);
            const double s = detail::safe_ssim(g, ref);
            if (!std::isnan(s)) row.ssim = s;
        }
        out.rows.push_back(std::move(row));
        log(iter, level, loss);
    };

    std::function<void()> save_model;
    if (model == ModelKind::qtt_putt || model == ModelKind::qtt_noup) {
        const std::vector<Grid> pyr = upsample ? pyramid : std::vector<Grid>{target};
        auto res = train_putt(pyr, tc, [&](const Progress& p) {
            record(p.iter, p.level, p.lr, p.loss, param_count(p.tt), [&] { return to_dense(p.tt, p.layout); });
        });
        out.reconstruction = to_dense(res.tt, res.layout);
        out.params = param_count(res.tt);
        save_model = [&c, &out, tt = std::move(res.tt), l = res.layout] {
            save_qtt(c.output_dir / (out.run_id + ".qtt"), l, tt);
        };
    } else {
        const QttLayout full = layout;
        const std::size_t budget = param_count(random_tt(full, c.rank, 1.0, 0));
        const auto& coarse = pyramid.front();
        const auto d = static_cast<std::size_t>(layout.spatial_dim);
        auto progress = [&](const BaselineProgress& p) {
            record(p.iter, p.level, p.lr, p.loss, p.params, [&] { return Grid(p.dims, p.reconstruct()); });
        };
        if (model == ModelKind::cp) {
            const std::size_t r = c.cp_rank.value_or(cp_rank_for_budget(layout.side_length(), d, budget));
            auto res = train_baseline(random_cp(coarse.dims, r, c.init_sigma, seed), pyramid, tc, progress);
            out.reconstruction = Grid(res.model.dims, dense_values(res.model));
            out.params = param_count(res.model);
            save_model = [&c, &out, m = std::move(res.model)] { save_cp(c.output_dir / (out.run_id + ".cpd"), m); };
        } else {
            if (c.tucker_rank && *c.tucker_rank > coarse.dims[0])
                throw InvalidArgument("tucker_rank " + std::to_string(*c.tucker_rank) +
                                      " exceeds the coarsest grid side " + std::to_string(coarse.dims[0]));
            const std::size_t r = c.tucker_rank.value_or(
                std::min(tucker_rank_for_budget(layout.side_length(), d, budget), coarse.dims[0]));
            auto res = train_baseline(random_tucker(coarse.dims, std::vector<std::size_t>(d, r), c.init_sigma, seed),
                                      pyramid, tc, progress);
            out.reconstruction = Grid(res.model.dims, dense_values(res.model));
            out.params = param_count(res.model);
            save_model = [&c, &out, m = std::move(res.model)] { save_tucker(c.output_dir / (out.run_id + ".tuk"), m); };
        }
    }
    out.final_loss = mse(out.reconstruction, target, target.mask ? &*target.mask : nullptr);
    out.psnr = psnr(out.reconstruction, task.clean);
    out.ssim = detail::safe_ssim(out.reconstruction, task.clean);
    out.compression_ratio = compression_ratio(dense_n, out.params);
    if (target.mask) {
        std::vector<std::uint8_t> unobserved(target.size());
        for (std::size_t i = 0; i < unobserved.size(); ++i) unobserved[i] = (*target.mask)[i] ? 0 : 1;
        if (std::any_of(unobserved.begin(), unobserved.end(), [](auto v) { return v != 0; }))
            out.psnr_unobserved = psnr_from_mse(mse(out.reconstruction, task.clean, &unobserved));
    }
    if (c.save_artifacts) {
        std::filesystem::create_directories(c.output_dir);
        save_model();
    }
    return out;
}

/// Sample mean and sample standard deviation (n - 1); std is 0 for one value.
[[nodiscard]] inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

inline constexpr const char* kMetricsHeader =
    "run_id,model,seed,iter,level,lr,loss,psnr,ssim,params,compression_ratio,wall_seconds";

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<RunOutcome>& runs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << kMetricsHeader << '\n';
    for (const auto& r : runs)
        for (const auto& row : r.rows)
            os << row.run_id << ',' << row.model << ',' << row.seed << ',' << row.iter << ',' << row.level << ','
               << detail::fmt(row.lr) << ',' << detail::fmt(row.loss) << ',' << detail::fmt(row.psnr) << ','
               << detail::fmt(row.ssim) << ',' << row.params << ',' << detail::fmt(row.compression_ratio) << ','
               << detail::fmt(row.wall_seconds) << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

struct Aggregate {
    ModelKind model;
    std::optional<double> sweep_value;
    std::size_t n = 0;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
    double loss_mean = 0.0, loss_std = 0.0;
    double psnr_unobserved_mean = std::numeric_limits<double>::quiet_NaN();
    std::size_t params = 0;
    double compression_ratio = 0.0;
};

/// Mean and sample std of per-seed finals for each (model, sweep value);
/// failed runs are left out.
[[nodiscard]] inline std::vector<Aggregate> aggregate(const RunConfig& c, const std::vector<RunOutcome>& runs) {
    std::vector<Aggregate> out;
    std::vector<std::optional<double>> sweeps;
    if (c.sweep)
        for (double v : c.sweep->values) sweeps.emplace_back(v);
    else
        sweeps.emplace_back(std::nullopt);
    for (const auto& sv : sweeps)
        for (auto m : c.models) {
            std::vector<double> ps, ss, ls, us;
            Aggregate a{m, sv};
            for (const auto& r : runs) {
                if (r.model != m || r.sweep_value != sv || !r.error.empty()) continue;
                ps.push_back(r.psnr);
                ss.push_back(r.ssim);
                ls.push_back(r.final_loss);
                if (!std::isnan(r.psnr_unobserved)) us.push_back(r.psnr_unobserved);
                a.params = r.params;
                a.compression_ratio = r.compression_ratio;
            }
            a.n = ps.size();
            if (a.n == 0) continue;
            std::tie(a.psnr_mean, a.psnr_std) = mean_std(ps);
            std::tie(a.ssim_mean, a.ssim_std) = mean_std(ss);
            std::tie(a.loss_mean, a.loss_std) = mean_std(ls);
            if (!us.empty()) a.psnr_unobserved_mean = mean_std(us).first;
            out.push_back(a);
        }
    return out;
}

inline constexpr const char* kCompareHeader =
    "row_type,model,seed,sweep_param,sweep_value,n,psnr,psnr_std,ssim,ssim_std,final_loss,final_loss_std,"
    "psnr_unobserved,params,compression_ratio";

inline void write_compare_csv(const std::filesystem::path& path, const RunConfig& c, const std::vector<RunOutcome>& runs,
                              const std::vector<Aggregate>& aggs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const std::string param = c.sweep ? c.sweep->param : "";
    os << kCompareHeader << '\n';
    for (const auto& r : runs) {
        if (!r.error.empty()) continue;
        os << "run," << to_string(r.model) << ',' << r.seed << ',' << param << ',' << detail::fmt(r.sweep_value)
           << ",1," << detail::fmt(r.psnr) << ",," << detail::fmt(r.ssim) << ",," << detail::fmt(r.final_loss) << ",,"
           << detail::fmt(r.psnr_unobserved) << ',' << r.params << ',' << detail::fmt(r.compression_ratio) << '\n';
    }
    for (const auto& a : aggs)
        os << "aggregate," << to_string(a.model) << ",," << param << ',' << detail::fmt(a.sweep_value) << ',' << a.n
           << ',' << detail::fmt(a.psnr_mean) << ',' << detail::fmt(a.psnr_std) << ',' << detail::fmt(a.ssim_mean) << ','
           << detail::fmt(a.ssim_std) << ',' << detail::fmt(a.loss_mean) << ',' << detail::fmt(a.loss_std) << ','
           << detail::fmt(a.psnr_unobserved_mean) << ',' << a.params << ',' << detail::fmt(a.compression_ratio) << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

namespace detail {

inline nlohmann::json num(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

} // namespace detail

[[nodiscard]] inline nlohmann::json summary_json(const RunConfig& c, const std::vector<RunOutcome>& runs,
                                                 const std::vector<Aggregate>& aggs) {
    nlohmann::json j;
    j["subcommand"] = to_string(c.subcommand);
    j["config_hash"] = detail::hex8(detail::fnv1a64(c.canonical));
    j["runs"] = nlohmann::json::array();
    for (const auto& r : runs) {
        nlohmann::json e{{"run_id", r.run_id}, {"model", to_string(r.model)}, {"seed", r.seed}};
        if (r.sweep_value) e["sweep_value"] = *r.sweep_value;
        if (!r.error.empty()) {
            e["error"] = r.error;
        } else {
            e["psnr"] = detail::num(r.psnr);
            e["ssim"] = detail::num(r.ssim);
            e["final_loss"] = detail::num(r.final_loss);
            if (!std::isnan(r.psnr_unobserved)) e["psnr_unobserved"] = detail::num(r.psnr_unobserved);
            e["params"] = r.params;
            e["compression_ratio"] = detail::num(r.compression_ratio);
        }
        j["runs"].push_back(e);
    }
    j["aggregate"] = nlohmann::json::array();
    for (const auto& a : aggs) {
        nlohmann::json e{{"model", to_string(a.model)},
                         {"n", a.n},
                         {"psnr_mean", detail::num(a.psnr_mean)},
                         {"psnr_std", detail::num(a.psnr_std)},
                         {"ssim_mean", detail::num(a.ssim_mean)},
                         {"ssim_std", detail::num(a.ssim_std)},
                         {"final_loss_mean", detail::num(a.loss_mean)},
                         {"final_loss_std", detail::num(a.loss_std)},
                         {"params", a.params},
                         {"compression_ratio", detail::num(a.compression_ratio)}};
        if (a.sweep_value) e["sweep_value"] = *a.sweep_value;
        if (!std::isnan(a.psnr_unobserved_mean)) e["psnr_unobserved_mean"] = a.psnr_unobserved_mean;
        j["aggregate"].push_back(e);
    }
    return j;
}

/// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitNumeric = 4 };

[[nodiscard]] inline std::pair<int, std::string> classify(const std::exception& e) {
    if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const ResourceLimit*>(&e))
        return {kExitConfig, dynamic_cast<const ResourceLimit*>(&e) ? "resource_limit" : "config"};
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return {kExitConfig, "config"};
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
        dynamic_cast<const std::filesystem::filesystem_error*>(&e))
        return {kExitIo, "io"};
    if (dynamic_cast<const NumericError*>(&e)) return {kExitNumeric, "numeric"};
    return {kExitNumeric, "internal"};
}

[[nodiscard]] inline nlohmann::json error_json(const std::exception& e) {
    const auto [code, kind] = classify(e);
    return {{"error", {{"type", kind}, {"message", e.what()}, {"exit_code", code}}}};
}

/// Runs every (sweep value, model, seed) combination of a config and writes
/// metrics.csv, summary.json, checkpoints and reconstructions into
/// c.output_dir (compare also writes compare.csv). A failing run is recorded
/// and the remaining runs continue; the first failure sets the exit code.
[[nodiscard]] inline int run_experiment(const RunConfig& c, std::vector<RunOutcome>* outcomes = nullptr) {
    const Grid clean = load_grid(c.input);
    if (c.subcommand == Subcommand::fit2d && clean.dims.size() != 2)
        throw InvalidArgument("fit2d needs a 2D input, got " + std::to_string(clean.dims.size()) + "D");
    if (c.subcommand == Subcommand::fit3d && clean.dims.size() != 3)
        throw InvalidArgument("fit3d needs a 3D input, got " + std::to_string(clean.dims.size()) + "D");
    (void)clean.layout();
    std::filesystem::create_directories(c.output_dir);

    std::vector<std::optional<double>> sweeps;
    if (c.sweep)
        for (double v : c.sweep->values) sweeps.emplace_back(v);
    else
        sweeps.emplace_back(std::nullopt);

    std::vector<RunOutcome> runs;
    int code = kExitOk;
    for (const auto& sv : sweeps)
        for (auto m : c.models)
            for (auto seed : c.seeds) {
                try {
                    const Task task = make_task(c, clean, seed, sv);
                    auto r = run_model(c, m, task, seed);
                    if (c.save_artifacts) {
                        const auto ext = r.reconstruction.dims.size() == 2 ? ".pgm" : ".f32";
                        save_grid(r.reconstruction, c.output_dir / (r.run_id + "-recon" + ext));
                    }
                    runs.push_back(std::move(r));
                } catch (const std::exception& e) {
                    // only a compare keeps going past a failed run
                    if (c.subcommand != Subcommand::compare) throw;
                    RunOutcome r;
                    r.model = m;
                    r.seed = seed;
                    r.sweep_value = sv;
                    r.run_id = to_string(m) + "-s" + std::to_string(seed);
                    r.error = e.what();
                    r.exit_code = classify(e).first;
                    if (code == kExitOk) code = r.exit_code;
                    runs.push_back(std::move(r));
                }
            }
    const auto aggs = aggregate(c, runs);
    write_metrics_csv(c.output_dir / "metrics.csv", runs);
    if (c.subcommand == Subcommand::compare) write_compare_csv(c.output_dir / "compare.csv", c, runs, aggs);
    std::ofstream js(c.output_dir / "summary.json");
    js << summary_json(c, runs, aggs).dump(2) << '\n';
    if (!js) throw IoError("failed writing summary.json");
    if (outcomes) *outcomes = std::move(runs);
    return code;
}

} // namespace putt
