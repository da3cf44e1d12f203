#pragma once

// Shared helpers for the test suites: scratch directories and small
// deterministic fixtures.

#include <filesystem>
#include <string>

#include "deltamon/ingest.hpp"
#include "deltamon/model.hpp"

namespace testsupport {

/// Unique scratch directory under the build tree, wiped on construction.
struct ScratchDir {
    std::filesystem::path path;

    explicit ScratchDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / ("deltamon_test_" + name)) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~ScratchDir() { std::filesystem::remove_all(path); }

    operator std::filesystem::path() const { return path; }
    std::string str() const { return path.string(); }
};

inline deltamon::Observation make_observation(deltamon::Mode mode, std::int64_t timestamp,
                                              int rows, int cols, float fill,
                                              bool with_mask = false) {
    deltamon::Observation o;
    o.mode = mode;
    o.timestamp = timestamp;
    o.data = deltamon::BandCube(deltamon::band_count(mode), rows, cols, fill);
    if (mode == deltamon::Mode::Opt || with_mask)
        o.mask = deltamon::ByteGrid(rows, cols, 1);
    return o;
}

inline deltamon::ObservationSeries make_series(int rows, int cols) {
    deltamon::ObservationSeries s;
    s.scene.height = rows;
    s.scene.width = cols;
    s.scene.crs = "test";
    s.scene.bounds = "0,0,1,1";
    return s;
}

/// Reduced network for fast tests: same layer kinds, fewer filters.
inline deltamon::ModelDescriptor reduced_descriptor() {
    deltamon::ModelDescriptor d;
    d.optical_bands = 3;
    d.sar_bands = 2;
    d.branch_filters = 3;
    d.trunk_filters = 4;
    d.reduce_filters = 2;
    return d;
}

inline deltamon::WindowTensor random_window(int steps, int bands, int rows, int cols,
                                            std::uint64_t seed) {
    deltamon::WindowTensor w;
    w.steps = steps;
    w.bands = bands;
    w.rows = rows;
    w.cols = cols;
    w.valid.assign(std::size_t(steps), 1);
    w.data.resize(std::size_t(steps) * w.frame_values());
    deltamon::Rng rng(seed);
    for (auto& v : w.data) v = float(rng.uniform());
    return w;
}

}  // namespace testsupport
