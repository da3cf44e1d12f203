#include "deltamon/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace deltamon {

using nlohmann::json;

void PipelineParams::validate() const {
    if (delta_days < 1) fail("delta_days must be >= 1");
    if (window_days < delta_days) fail("window_days must cover at least one step");
    if (min_window_obs < 1 || min_window_obs > max_window_obs)
        fail("window size bounds must satisfy 1 <= min <= max");
    if (stride < 1) fail("stride must be >= 1");
    if (tile_rows < 3 || tile_cols < 3) fail("tiles must be at least 3x3");
    if (overlap < 0 || overlap >= tile_rows || overlap >= tile_cols)
        fail("overlap must be in [0, tile)");
}

// --- temporal stacking -------------------------------------------------------

ObservationSeries temporal_stack(const ObservationSeries& series) {
    ObservationSeries out;
    out.scene = series.scene;
    for (Mode m : kAllModes) {
        const auto& in_list = series.obs(m);
        auto& out_list = out.obs(m);
        out_list.reserve(in_list.size());
        // last valid value per pixel per band; starts at the zero gap
        BandCube carried;
        for (const Observation& o : in_list) {
            Observation stacked;
            stacked.mode = o.mode;
            stacked.timestamp = o.timestamp;
            if (carried.bands == 0)
                carried = BandCube(o.data.bands, o.data.rows, o.data.cols, 0.0f);
            if (!o.mask) {
                carried = o.data;  // fully valid
            } else {
                const std::size_t plane = std::size_t(o.data.rows) * o.data.cols;
                for (int b = 0; b < o.data.bands; ++b) {
                    float* dst = carried.plane(b);
                    const float* src = o.data.plane(b);
                    const std::uint8_t* valid = o.mask->v.data();
                    for (std::size_t p = 0; p < plane; ++p)
                        if (valid[p]) dst[p] = src[p];
                }
            }
            stacked.data = carried;
            if (m == Mode::Opt)
                stacked.mask = ByteGrid(o.data.rows, o.data.cols, 1);
            out_list.push_back(std::move(stacked));
        }
    }
    return out;
}

// --- assembling ---------------------------------------------------------------

AssembledSequence assemble(const ObservationSeries& series, const PipelineParams& params) {
    params.validate();
    AssembledSequence seq;
    seq.rows = series.scene.height;
    seq.cols = series.scene.width;

    std::int64_t first = std::numeric_limits<std::int64_t>::max();
    std::int64_t last = std::numeric_limits<std::int64_t>::min();
    for (Mode m : kAllModes)
        for (const Observation& o : series.obs(m)) {
            first = std::min(first, o.timestamp);
            last = std::max(last, o.timestamp);
        }
    if (series.total_observations() == 0) return seq;

    const std::int64_t step = interval_from_days(params.delta_days);
    const std::size_t plane = std::size_t(seq.rows) * seq.cols;
    std::array<std::size_t, kModeCount> cursor{};  // next unconsumed observation per mode
    std::array<const Observation*, kModeCount> latest{};  // newest observation seen so far

    for (std::int64_t t0 = first; t0 <= last; t0 += step) {
        const std::int64_t t1 = t0 + step;  // step interval [t0, t1)
        AssembledFrame meta;
        meta.timestamp = std::numeric_limits<std::int64_t>::min();
        bool any_update = false;
        for (Mode m : kAllModes) {
            const auto& list = series.obs(m);
            auto& i = cursor[int(m)];
            while (i < list.size() && list[i].timestamp < t1) {
                latest[int(m)] = &list[i];
                meta.updated[int(m)] = true;
                meta.timestamp = std::max(meta.timestamp, list[i].timestamp);
                any_update = true;
                ++i;
            }
        }
        if (!any_update) continue;

        const std::size_t base = seq.data.size();
        seq.data.resize(base + seq.frame_values(), 0.0f);
        float* frame = seq.data.data() + base;
        for (Mode m : kAllModes) {
            const Observation* o = latest[int(m)];
            if (!o) continue;  // no prior value: bands stay at the zero gap
            std::memcpy(frame + std::size_t(mode_band_offset(m)) * plane, o->data.v.data(),
                        o->data.v.size() * sizeof(float));
        }
        seq.meta.push_back(meta);
    }
    return seq;
}

// --- tiling -------------------------------------------------------------------

TileGrid training_tiles(int scene_rows, int scene_cols, const PipelineParams& params) {
    if (params.tile_rows > scene_rows || params.tile_cols > scene_cols)
        fail("tile size exceeds scene extent");
    TileGrid grid;
    grid.scene_rows = scene_rows;
    grid.scene_cols = scene_cols;
    for (int ty = 0; (ty + 1) * params.tile_rows <= scene_rows; ++ty)
        for (int tx = 0; (tx + 1) * params.tile_cols <= scene_cols; ++tx) {
            TilePatch p;
            p.tile_row = ty;
            p.tile_col = tx;
            p.row0 = ty * params.tile_rows;
            p.col0 = tx * params.tile_cols;
            p.rows = params.tile_rows;
            p.cols = params.tile_cols;
            p.core_row0 = p.row0;
            p.core_col0 = p.col0;
            p.core_rows = p.rows;
            p.core_cols = p.cols;
            grid.patches.push_back(p);
        }
    return grid;
}

namespace {

// Origins advance by (tile - overlap); each tile past the first contributes
// pixels only beyond its leading overlap margin, so cores partition the axis.
std::vector<int> axis_origins(int extent, int tile, int overlap) {
    std::vector<int> origins{0};
    for (int o = tile - overlap; o + overlap < extent; o += tile - overlap)
        origins.push_back(o);
    return origins;
}

}  // namespace

TileGrid inference_tiles(int scene_rows, int scene_cols, int tile, int overlap) {
    if (tile > scene_rows || tile > scene_cols) fail("tile size exceeds scene extent");
    if (overlap < 0 || overlap >= tile) fail("overlap must be in [0, tile)");
    TileGrid grid;
    grid.scene_rows = scene_rows;
    grid.scene_cols = scene_cols;
    const auto rows = axis_origins(scene_rows, tile, overlap);
    const auto cols = axis_origins(scene_cols, tile, overlap);
    for (std::size_t ty = 0; ty < rows.size(); ++ty)
        for (std::size_t tx = 0; tx < cols.size(); ++tx) {
            TilePatch p;
            p.tile_row = int(ty);
            p.tile_col = int(tx);
            p.row0 = rows[ty];
            p.col0 = cols[tx];
            p.rows = std::min(tile, scene_rows - p.row0);
            p.cols = std::min(tile, scene_cols - p.col0);
            p.core_row0 = p.row0 + (ty > 0 ? overlap : 0);
            p.core_col0 = p.col0 + (tx > 0 ? overlap : 0);
            p.core_rows = p.row0 + p.rows - p.core_row0;
            p.core_cols = p.col0 + p.cols - p.core_col0;
            grid.patches.push_back(p);
        }
    return grid;
}

AssembledSequence crop_sequence(const AssembledSequence& seq, const TilePatch& patch) {
    if (patch.row0 + patch.rows > seq.rows || patch.col0 + patch.cols > seq.cols)
        fail("tile patch outside scene");
    AssembledSequence out;
    out.rows = patch.rows;
    out.cols = patch.cols;
    out.meta = seq.meta;
    out.data.resize(std::size_t(seq.frame_count()) * out.frame_values());
    for (int i = 0; i < seq.frame_count(); ++i)
        for (int b = 0; b < kAssembledBands; ++b) {
            const float* src = seq.band(i, b);
            float* dst = out.band(i, b);
            for (int y = 0; y < patch.rows; ++y)
                std::memcpy(dst + std::size_t(y) * patch.cols,
                            src + std::size_t(patch.row0 + y) * seq.cols + patch.col0,
                            std::size_t(patch.cols) * sizeof(float));
        }
    return out;
}

Grid mosaic(const TileGrid& grid, const std::vector<Grid>& tiles) {
    if (tiles.size() != grid.patches.size()) fail("mosaic: tile count mismatch");
    Grid out(grid.scene_rows, grid.scene_cols);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const TilePatch& p = grid.patches[i];
        const Grid& t = tiles[i];
        if (t.rows != p.rows || t.cols != p.cols) fail("mosaic: tile shape mismatch");
        const int ly0 = p.core_row0 - p.row0;
        const int lx0 = p.core_col0 - p.col0;
        for (int y = 0; y < p.core_rows; ++y)
            for (int x = 0; x < p.core_cols; ++x)
                out.at(p.core_row0 + y, p.core_col0 + x) = t.at(ly0 + y, lx0 + x);
    }
    return out;
}

// --- windowing ----------------------------------------------------------------

const Window* WindowSet::find_start_index(int frame_index) const {
    for (const Window& w : windows)
        if (w.start_index == frame_index) return &w;
    return nullptr;
}

WindowSet build_windows(const AssembledSequence& seq, const PipelineParams& params) {
    params.validate();
    WindowSet set;
    const std::int64_t period = interval_from_days(params.window_days);
    const int n = seq.frame_count();
    int end = 0;
    for (int start = 0; start < n; start += params.stride) {
        const std::int64_t t = seq.meta[start].timestamp;
        if (end < start) end = start;
        while (end < n && seq.meta[end].timestamp < t + period) ++end;
        const int count = end - start;
        if (count < params.min_window_obs) continue;
        if (count > params.max_window_obs)
            fail("window of " + std::to_string(count) + " frames exceeds the configured maximum " +
                 std::to_string(params.max_window_obs));
        set.windows.push_back(Window{start, t, count});
    }
    return set;
}

// --- stale resampling -----------------------------------------------------------

ObservationSeries stale_resample(const ObservationSeries& series,
                                 std::int64_t sar_interval_seconds,
                                 std::int64_t opt_interval_seconds) {
    ObservationSeries out;
    out.scene = series.scene;
    for (Mode m : kAllModes) {
        const std::int64_t interval =
            m == Mode::Opt ? opt_interval_seconds : sar_interval_seconds;
        const auto& in_list = series.obs(m);
        auto& out_list = out.obs(m);
        out_list.reserve(in_list.size());
        const BandCube* held = nullptr;
        std::int64_t held_at = 0;
        for (const Observation& o : in_list) {
            if (!held || o.timestamp - held_at >= interval) {
                held = &o.data;
                held_at = o.timestamp;
            }
            Observation r;
            r.mode = o.mode;
            r.timestamp = o.timestamp;
            r.data = *held;
            r.mask = o.mask;
            out_list.push_back(std::move(r));
        }
    }
    return out;
}

// --- normalization ---------------------------------------------------------------

NormalizationManifest compute_normalization(const AssembledSequence& seq) {
    NormalizationManifest m;
    m.lo.fill(std::numeric_limits<float>::max());
    m.hi.fill(std::numeric_limits<float>::lowest());
    for (int i = 0; i < seq.frame_count(); ++i)
        for (int b = 0; b < kAssembledBands; ++b) {
            const float* p = seq.band(i, b);
            const std::size_t plane = std::size_t(seq.rows) * seq.cols;
            for (std::size_t k = 0; k < plane; ++k) {
                m.lo[b] = std::min(m.lo[b], p[k]);
                m.hi[b] = std::max(m.hi[b], p[k]);
            }
        }
    if (seq.frame_count() == 0) {
        m.lo.fill(0.0f);
        m.hi.fill(0.0f);
    }
    return m;
}

AssembledSequence normalize(AssembledSequence seq, const NormalizationManifest& manifest) {
    const std::size_t plane = std::size_t(seq.rows) * seq.cols;
    for (int i = 0; i < seq.frame_count(); ++i)
        for (int b = 0; b < kAssembledBands; ++b) {
            float* p = seq.band(i, b);
            const float lo = manifest.lo[b];
            const float span = manifest.hi[b] - lo;
            if (span <= 0.0f) {
                std::fill(p, p + plane, 0.0f);
                continue;
            }
            const float inv = 1.0f / span;
            for (std::size_t k = 0; k < plane; ++k)
                p[k] = std::clamp((p[k] - lo) * inv, 0.0f, 1.0f);
        }
    return seq;
}

void save_normalization(const NormalizationManifest& m, const std::filesystem::path& path) {
    json j = json::object();
    for (int b = 0; b < kAssembledBands; ++b)
        j[std::to_string(b)] = json{{"min", m.lo[b]}, {"max", m.hi[b]}};
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

NormalizationManifest load_normalization(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("missing normalization manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("corrupt normalization manifest: " + std::string(e.what()));
    }
    NormalizationManifest m;
    for (int b = 0; b < kAssembledBands; ++b) {
        const json& rec = j.at(std::to_string(b));
        m.lo[b] = rec.at("min").get<float>();
        m.hi[b] = rec.at("max").get<float>();
    }
    return m;
}

}  // namespace deltamon
