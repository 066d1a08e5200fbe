#pragma once

#include "putt/binary_io.hpp"
#include "putt/error.hpp"
#include "putt/grid.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace putt {

namespace detail {

inline bool has_extension(const std::filesystem::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(std::istream& is) {
    std::string tok;
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = is.get();
    }
    if (tok.empty()) throw FormatError("PNM: truncated header");
    return tok;
}

inline std::size_t pnm_number(std::istream& is, const char* what) {
    const std::string tok = pnm_token(is);
    if (!std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw FormatError(std::string("PNM: bad ") + what + " \"" + tok + "\"");
    return std::stoul(tok);
}

struct PnmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::size_t maxval = 255;
    std::vector<double> samples;  // normalized to [0,1], interleaved channels
};

inline PnmImage read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const std::string magic = pnm_token(is);
    PnmImage img;
    if (magic == "P5")
        img.channels = 1;
    else if (magic == "P6")
        img.channels = 3;
    else
        throw FormatError("PNM: unsupported magic \"" + magic + "\" in " + path.string());
    img.width = pnm_number(is, "width");
    img.height = pnm_number(is, "height");
    img.maxval = pnm_number(is, "maxval");
    if (img.width == 0 || img.height == 0) throw FormatError("PNM: zero dimension");
    if (img.maxval == 0 || img.maxval > 65535) throw FormatError("PNM: maxval out of range");
    // exactly one whitespace byte was consumed after maxval by pnm_token
    const std::size_t n = img.width * img.height * img.channels;
    const std::size_t bytes = img.maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * bytes);
    read_exact(is, reinterpret_cast<char*>(raw.data()), raw.size(), "PNM raster");
    img.samples.resize(n);
    const double scale = 1.0 / static_cast<double>(img.maxval);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned v = bytes == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
        img.samples[i] = std::clamp(static_cast<double>(v) * scale, 0.0, 1.0);
    }
    return img;
}

inline void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      const std::vector<double>& values, unsigned maxval) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
    std::vector<unsigned char> raw;
    raw.reserve(values.size() * (maxval < 256 ? 1 : 2));
    for (double v : values) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (maxval < 256) {
            raw.push_back(static_cast<unsigned char>(q));
        } else {
            raw.push_back(static_cast<unsigned char>(q >> 8));
            raw.push_back(static_cast<unsigned char>(q & 0xFFU));
        }
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
    return std::filesystem::path(p.string() + ".json");
}

} // namespace detail

/// Loads a 2D image (PGM P5, or PPM P6 converted to luma) or a 3D volume
/// (raw little-endian f32 with a "<file>.json" sidecar holding {"dims": [...]}).
/// Dimensions must be powers of two.
[[nodiscard]] inline Grid load_grid(const std::filesystem::path& path) {
    if (detail::has_extension(path, {".pgm", ".ppm", ".pnm"})) {
        const auto img = detail::read_pnm(path);
        Grid g({img.height, img.width});
        detail::require_pow2_dims(g.dims, "load_grid(" + path.string() + ")");
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (img.channels == 1) {
                g.values[i] = img.samples[i];
            } else {
                const double* px = &img.samples[3 * i];
                g.values[i] = std::clamp(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2], 0.0, 1.0);
            }
        }
        return g;
    }
    if (detail::has_extension(path, {".raw", ".f32"})) {
        std::ifstream js(detail::sidecar_path(path));
        if (!js) throw IoError("missing sidecar " + detail::sidecar_path(path).string());
        nlohmann::json meta;
        try {
            js >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("sidecar JSON: " + std::string(e.what()));
        }
        if (!meta.contains("dims") || !meta["dims"].is_array()) throw FormatError("sidecar JSON: missing \"dims\"");
        std::vector<std::size_t> dims;
        for (const auto& x : meta["dims"]) {
            if (!x.is_number_unsigned() || x.get<std::size_t>() == 0) throw FormatError("sidecar JSON: bad dimension");
            dims.push_back(x.get<std::size_t>());
        }
        if (dims.size() < 2 || dims.size() > 3) throw FormatError("volume must have 2 or 3 dimensions");
        detail::require_pow2_dims(dims, "load_grid(" + path.string() + ")");
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open " + path.string());
        Grid g(dims);
        for (double& v : g.values) {
            v = static_cast<double>(detail::read_f32_le(is));
            if (!std::isfinite(v)) throw FormatError("volume contains non-finite values");
            v = std::clamp(v, 0.0, 1.0);
        }
        return g;
    }
    throw FormatError("unsupported file type: " + path.string());
}

/// 2D grids are written as 16-bit PGM; 3D grids as raw f32 + JSON sidecar.
inline void save_grid(const Grid& grid, const std::filesystem::path& path) {
    if (grid.dims.size() == 2 && detail::has_extension(path, {".pgm", ".pnm"})) {
        detail::write_pgm(path, grid.dims[0], grid.dims[1], grid.values, 65535);
        return;
    }
    if (detail::has_extension(path, {".raw", ".f32"})) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open " + path.string() + " for writing");
        for (double v : grid.values) detail::write_f32_le(os, static_cast<float>(v));
        if (!os) throw IoError("failed writing " + path.string());
        std::ofstream js(detail::sidecar_path(path));
        js << nlohmann::json{{"dims", grid.dims}}.dump() << '\n';
        if (!js) throw IoError("failed writing sidecar for " + path.string());
        return;
    }
    throw FormatError("save_grid: cannot write a " + std::to_string(grid.dims.size()) + "D grid to " + path.string());
}

/// Mask file: PGM P5, 0 = missing, nonzero = observed.
[[nodiscard]] inline std::vector<std::uint8_t> load_mask(const std::filesystem::path& path) {
    const auto img = detail::read_pnm(path);
    if (img.channels != 1) throw FormatError("mask must be a grayscale PGM");
    std::vector<std::uint8_t> mask(img.samples.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img.samples[i] > 0.0 ? 1 : 0;
    return mask;
}

inline void save_mask(const std::vector<std::uint8_t>& mask, std::size_t height, std::size_t width,
                      const std::filesystem::path& path) {
    detail::require(mask.size() == height * width, "save_mask: size mismatch");
    std::vector<double> v(mask.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] ? 1.0 : 0.0;
    detail::write_pgm(path, height, width, v, 255);
}

} // namespace putt
