#pragma once

// Cutting full scanner frames into fixed 111 x 111 per-well crops.
//
// Grid file (key = value):
//   origin_x = 10
//   origin_y = 10
//   pitch_x = 130
//   pitch_y = 130
//   rows = 21
//   cols = 29

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/tensor.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

inline constexpr std::size_t kWellSize = 111;

struct WellImage {
    Tensor<float> pixels;  // (111, 111, 1), values in [0, 1]
    std::string source_id;
    std::optional<std::pair<std::size_t, std::size_t>> grid_position;  // (row, col)
};

inline void check_well_image(const WellImage& w) {
    if (w.pixels.shape() != Shape{kWellSize, kWellSize, 1})
        throw ShapeError("well image must be (111,111,1), got " + shape_string(w.pixels.shape()));
    for (auto v : w.pixels.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("well image pixel outside [0, 1]");
}

struct ScanFrame {
    Tensor<float> pixels;  // (H, W, 1)
    std::string lane_id;
    std::string frame_id;
};

struct TileGrid {
    std::size_t origin_x = 0;
    std::size_t origin_y = 0;
    std::size_t pitch_x = kWellSize;
    std::size_t pitch_y = kWellSize;
    std::size_t rows = 1;
    std::size_t cols = 1;

    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

/// Throws GridOutOfBounds naming the first (row, col), in row-major order,
/// whose crop leaves a height x width frame.
inline void check_grid(const TileGrid& g, std::size_t height, std::size_t width) {
    if (g.rows == 0 || g.cols == 0) throw ConfigError("tile grid needs at least one row and column");
    if (g.pitch_x == 0 || g.pitch_y == 0) throw ConfigError("tile pitch must be positive");
    auto col_ok = [&](std::size_t c) { return g.origin_x + c * g.pitch_x + kWellSize <= width; };
    auto row_ok = [&](std::size_t r) { return g.origin_y + r * g.pitch_y + kWellSize <= height; };
    std::optional<std::pair<std::size_t, std::size_t>> bad;
    if (!row_ok(0)) {
        bad = {0, 0};
    } else {
        for (std::size_t c = 0; c < g.cols && !bad; ++c)
            if (!col_ok(c)) bad = {0, c};
        for (std::size_t r = 0; r < g.rows && !bad; ++r)
            if (!row_ok(r)) bad = {r, 0};
    }
    if (bad)
        throw GridOutOfBounds("crop (row " + std::to_string(bad->first) + ", col " + std::to_string(bad->second) +
                              ") exceeds the " + std::to_string(width) + "x" + std::to_string(height) + " frame");
}

/// rows * cols crops in row-major order. Crop (r, c) covers
/// [y0 + r*py, +111) x [x0 + c*px, +111).
inline std::vector<WellImage> tile_scan(const ScanFrame& frame, const TileGrid& grid) {
    const auto& px = frame.pixels;
    if (px.rank() != 3 || px.dim(2) != 1) throw ShapeError("scan frame must be (H, W, 1)");
    const std::size_t H = px.dim(0), W = px.dim(1);
    if (H < kWellSize || W < kWellSize) throw ShapeError("scan frame smaller than one well crop");
    check_grid(grid, H, W);
    std::vector<WellImage> out;
    out.reserve(grid.rows * grid.cols);
    for (std::size_t r = 0; r < grid.rows; ++r)
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const std::size_t y0 = grid.origin_y + r * grid.pitch_y, x0 = grid.origin_x + c * grid.pitch_x;
            Tensor<float> crop({kWellSize, kWellSize, 1});
            for (std::size_t y = 0; y < kWellSize; ++y)
                std::copy_n(px.raw() + (y0 + y) * W + x0, kWellSize, crop.raw() + y * kWellSize);
            std::string id = frame.frame_id.empty() ? "frame" : frame.frame_id;
            id += "_r" + std::to_string(r) + "_c" + std::to_string(c);
            out.push_back({std::move(crop), std::move(id), std::pair{r, c}});
        }
    return out;
}

inline TileGrid parse_tile_grid(std::string_view content, std::string_view source = "grid") {
    const auto kv = text::parse_key_values(content, source);
    TileGrid g;
    for (const auto& [key, value] : kv.entries) {
        const auto v = text::parse_int(value, key);
        if (v < 0) throw ConfigError(key + " must be non-negative");
        const auto u = static_cast<std::size_t>(v);
        if (key == "origin_x") g.origin_x = u;
        else if (key == "origin_y") g.origin_y = u;
        else if (key == "pitch_x") g.pitch_x = u;
        else if (key == "pitch_y") g.pitch_y = u;
        else if (key == "rows") g.rows = u;
        else if (key == "cols") g.cols = u;
        else throw ConfigError("unknown tile grid key '" + key + "'");
    }
    return g;
}

inline TileGrid load_tile_grid(const std::filesystem::path& path) {
    return parse_tile_grid(text::read_file(path), path.string());
}

inline std::string to_text(const TileGrid& g) {
    std::ostringstream os;
    os << "origin_x = " << g.origin_x << "\norigin_y = " << g.origin_y << "\npitch_x = " << g.pitch_x
       << "\npitch_y = " << g.pitch_y << "\nrows = " << g.rows << "\ncols = " << g.cols << '\n';
    return os.str();
}

} // namespace wellqc
