#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deltamon/ingest.hpp"
#include "deltamon/transfer.hpp"

namespace deltamon {

/// Rectangular change with a linear ramp: optical bands shift by the
/// per-band offsets, SAR backscatter by a scalar, both scaled by ramp
/// progress. The kind tag is provenance only; offsets carry the physics.
struct ChangeEvent {
    int row = 0, col = 0, height = 0, width = 0;
    int start_day = 0;
    int ramp_days = 1;
    std::array<float, 13> optical_offset{};
    float sar_offset = 0.0f;
    std::string kind = "construction";
};

struct ScenarioSpec {
    int height = 128, width = 128;
    int duration_days = 730;
    int opt_cadence_days = 4;
    int sar_cadence_days = 6;
    double cloud_probability = 0.30;
    double optical_noise_sigma = 0.02;
    double seasonal_amplitude = 0.05;
    int speckle_looks = 4;  // 0 disables speckle
    std::string start_date = "2020-01-01T00:00:00Z";
    std::vector<ChangeEvent> events;
    std::vector<std::pair<int, int>> testing_tiles;  // (tile_row, tile_col)
    // Optional per-mode seed overrides; by default both derive from the
    // generate_scene seed.
    std::optional<std::uint64_t> seed_sar, seed_opt;

    void validate() const;
    std::int64_t base_timestamp() const { return parse_utc(start_date); }
};

/// Desk-scale default: 128x128 scene (4x4 tiles of 32), 730 days, optical
/// every 4 days with 30% clouds, SAR every 6 days, 12 mixed events.
ScenarioSpec default_scenario();

ScenarioSpec scenario_from_json_file(const std::filesystem::path& path);
void scenario_to_json_file(const ScenarioSpec& spec, const std::filesystem::path& path);

/// Deterministic given (spec, seed); optical = background + seasonal +
/// event ramps + Gaussian noise under random cloud masks, SAR = (background +
/// event offsets) x mean-1 gamma speckle.
ObservationSeries generate_scene(const ScenarioSpec& spec, std::uint64_t seed);

/// Binary ground truth per tile: pixel = 1 iff covered by an event whose
/// ramp interval intersects [day_start, day_end]. Dataset tags follow
/// spec.testing_tiles.
std::vector<LabeledTile> generate_labels(const ScenarioSpec& spec, int day_start, int day_end,
                                         int tile_size);

}  // namespace deltamon
