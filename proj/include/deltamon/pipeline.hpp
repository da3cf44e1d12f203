#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "deltamon/ingest.hpp"

namespace deltamon {

/// Data-pipeline parameters: sampling step, window period/size bounds,
/// stride, and tile geometry.
struct PipelineParams {
    int delta_days = 2;        // assembling step
    int window_days = 183;     // fixed window period
    int min_window_obs = 35;   // windows with fewer assembled frames are discarded
    int max_window_obs = 92;   // natural bound given period/step
    int stride = 1;            // window start stride, in assembled frames
    int tile_rows = 32;
    int tile_cols = 32;
    int overlap = 0;           // shared pixels between inference tiles

    void validate() const;
};

// Band layout of assembled frames: SAR ascending VV,VH; SAR descending VV,VH;
// then the 13 optical bands.
constexpr int kAssembledBands = 17;
constexpr int mode_band_offset(Mode m) {
    return m == Mode::SarAsc ? 0 : m == Mode::SarDsc ? 2 : 4;
}

struct AssembledFrame {
    std::int64_t timestamp = 0;          // newest observation folded into the step
    std::array<bool, kModeCount> updated{};  // mode received a new observation this step
};

/// Joint 17-band frames sampled at the pipeline step; a frame exists only for
/// steps where at least one mode received a new observation.
struct AssembledSequence {
    int rows = 0;
    int cols = 0;
    std::vector<AssembledFrame> meta;
    std::vector<float> data;  // [frame][band][row][col]

    std::size_t frame_values() const { return std::size_t(kAssembledBands) * rows * cols; }
    float* frame(int i) { return data.data() + std::size_t(i) * frame_values(); }
    const float* frame(int i) const { return data.data() + std::size_t(i) * frame_values(); }
    float* band(int i, int b) { return frame(i) + std::size_t(b) * rows * cols; }
    const float* band(int i, int b) const { return frame(i) + std::size_t(b) * rows * cols; }
    int frame_count() const { return int(meta.size()); }
};

/// Carry-forward imputation: masked pixels take the most recent valid value,
/// pixels with no prior valid value stay 0. Output masks are fully valid.
ObservationSeries temporal_stack(const ObservationSeries& series);

AssembledSequence assemble(const ObservationSeries& series, const PipelineParams& params);

struct TilePatch {
    int tile_row = 0, tile_col = 0;  // grid coordinates
    int row0 = 0, col0 = 0;          // scene origin
    int rows = 0, cols = 0;          // extent (trailing inference tiles may be cropped)
    int core_row0 = 0, core_col0 = 0;  // scene region this tile contributes at reassembly
    int core_rows = 0, core_cols = 0;
};

struct TileGrid {
    int scene_rows = 0, scene_cols = 0;
    std::vector<TilePatch> patches;
};

/// Non-overlapping training tiles; trailing partial tiles are dropped.
TileGrid training_tiles(int scene_rows, int scene_cols, const PipelineParams& params);

/// Overlapping inference tiles whose core regions partition the scene exactly.
TileGrid inference_tiles(int scene_rows, int scene_cols, int tile, int overlap);

AssembledSequence crop_sequence(const AssembledSequence& seq, const TilePatch& patch);

/// Reassembles per-tile rasters into a scene raster using the tiles' core
/// regions; every scene pixel is written exactly once.
Grid mosaic(const TileGrid& grid, const std::vector<Grid>& tiles);

struct Window {
    int start_index = 0;   // assembled frame index of the first frame
    std::int64_t start_time = 0;
    int count = 0;         // frames within [start_time, start_time + period)
};

struct WindowSet {
    int tile_row = 0, tile_col = 0;
    std::vector<Window> windows;

    const Window* find_start_index(int frame_index) const;
};

WindowSet build_windows(const AssembledSequence& seq, const PipelineParams& params);

/// Sentinel for "never update": observations stay frozen at the first value.
constexpr std::int64_t kFreezeForever = std::numeric_limits<std::int64_t>::max();
constexpr std::int64_t interval_from_days(int days) {
    return std::int64_t(days) * kSecondsPerDay;
}

/// Keeps every observation's timestamp but re-points its values at the most
/// recent observation that is at least the per-mode interval newer than the
/// previous update. SAR ascending/descending share one interval.
ObservationSeries stale_resample(const ObservationSeries& series,
                                 std::int64_t sar_interval_seconds,
                                 std::int64_t opt_interval_seconds);

struct NormalizationManifest {
    std::array<float, kAssembledBands> lo{};
    std::array<float, kAssembledBands> hi{};
};

NormalizationManifest compute_normalization(const AssembledSequence& seq);
/// Affine per-band map to [0,1], clamped; degenerate bands (hi == lo) map to 0.
AssembledSequence normalize(AssembledSequence seq, const NormalizationManifest& manifest);

void save_normalization(const NormalizationManifest& m, const std::filesystem::path& path);
NormalizationManifest load_normalization(const std::filesystem::path& path);

}  // namespace deltamon
