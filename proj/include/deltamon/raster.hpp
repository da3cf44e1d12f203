#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "deltamon/common.hpp"

namespace deltamon {

/// Single-band raster of 32-bit floats, row-major.
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<float> v;

    Grid() = default;
    Grid(int r, int c, float fill = 0.0f) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

    float& at(int y, int x) { return v[std::size_t(y) * cols + x]; }
    float at(int y, int x) const { return v[std::size_t(y) * cols + x]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
};

/// Per-pixel validity raster (1 = valid).
struct ByteGrid {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> v;

    ByteGrid() = default;
    ByteGrid(int r, int c, std::uint8_t fill = 1) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

    std::uint8_t& at(int y, int x) { return v[std::size_t(y) * cols + x]; }
    std::uint8_t at(int y, int x) const { return v[std::size_t(y) * cols + x]; }
    std::size_t size() const { return v.size(); }
};

/// Band-major stack of rasters: [band][row][col].
struct BandCube {
    int bands = 0;
    int rows = 0;
    int cols = 0;
    std::vector<float> v;

    BandCube() = default;
    BandCube(int b, int r, int c, float fill = 0.0f)
        : bands(b), rows(r), cols(c), v(std::size_t(b) * r * c, fill) {}

    float* plane(int b) { return v.data() + std::size_t(b) * rows * cols; }
    const float* plane(int b) const { return v.data() + std::size_t(b) * rows * cols; }
    float& at(int b, int y, int x) { return v[(std::size_t(b) * rows + y) * cols + x]; }
    float at(int b, int y, int x) const { return v[(std::size_t(b) * rows + y) * cols + x]; }
    std::size_t size() const { return v.size(); }
};

// Raw raster codecs shared by bundles, labels, predictions, checkpoints:
// little-endian 32-bit floats (or bytes for masks), C row-major.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);
void write_u8(const std::filesystem::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const std::filesystem::path& path, std::size_t expected_count);

Grid crop_center(const Grid& g, int out_rows, int out_cols);

}  // namespace deltamon
