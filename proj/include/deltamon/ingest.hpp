#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deltamon/raster.hpp"

namespace deltamon {

enum class Mode { SarAsc = 0, SarDsc = 1, Opt = 2 };
constexpr int kModeCount = 3;
constexpr std::array<Mode, 3> kAllModes{Mode::SarAsc, Mode::SarDsc, Mode::Opt};

constexpr int band_count(Mode m) { return m == Mode::Opt ? 13 : 2; }
const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

/// One acquisition: band-major raster, UTC timestamp, and (for optical
/// observations only) a cloud validity mask.
struct Observation {
    Mode mode = Mode::SarAsc;
    std::int64_t timestamp = 0;  // UTC epoch seconds
    BandCube data;
    std::optional<ByteGrid> mask;
};

struct SceneInfo {
    int height = 0;
    int width = 0;
    std::string crs;
    std::string bounds;
};

/// Per-mode chronologically sorted observation stacks over one scene.
struct ObservationSeries {
    SceneInfo scene;
    std::array<std::vector<Observation>, kModeCount> by_mode;

    std::vector<Observation>& obs(Mode m) { return by_mode[int(m)]; }
    const std::vector<Observation>& obs(Mode m) const { return by_mode[int(m)]; }
    std::size_t total_observations() const;
};

struct Finding {
    Mode mode;
    int index;  // observation index within the mode, -1 for series-level findings
    std::string rule;
    std::string detail;
};

// On-disk bundle layout:
//   <root>/scene.json      {height, width, crs, bounds}
//   <root>/manifest.json   [{mode, timestamp, data_path, mask_path?}, ...]
//   raw rasters as in raster.hpp
ObservationSeries read_bundle(const std::filesystem::path& root);
void write_bundle(const ObservationSeries& series, const std::filesystem::path& root);

/// Empty result iff every type invariant holds; findings are data, not errors.
std::vector<Finding> validate_series(const ObservationSeries& series);

}  // namespace deltamon
