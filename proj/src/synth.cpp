#include "deltamon/synth.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace deltamon {

using nlohmann::json;

void ScenarioSpec::validate() const {
    if (height < 8 || width < 8) fail("scene must be at least 8x8");
    if (duration_days < 1) fail("duration must be >= 1 day");
    if (opt_cadence_days < 1 || sar_cadence_days < 1) fail("cadences must be >= 1 day");
    if (cloud_probability < 0.0 || cloud_probability >= 1.0)
        fail("cloud probability must be in [0, 1)");
    if (optical_noise_sigma < 0.0) fail("noise sigma must be >= 0");
    if (speckle_looks < 0) fail("speckle looks must be >= 0");
    for (const ChangeEvent& e : events) {
        if (e.ramp_days < 1) fail("event ramp must be >= 1 day");
        if (e.row < 0 || e.col < 0 || e.height < 1 || e.width < 1 ||
            e.row + e.height > height || e.col + e.width > width)
            fail("event rectangle outside scene");
    }
    parse_utc(start_date);
}

namespace {

constexpr std::array<float, 13> even_offsets(float value) {
    std::array<float, 13> a{};
    for (auto& v : a) v = value;
    return a;
}

// Smooth background texture: coarse seeded control grid, bilinear upsampled.
struct ValueField {
    int rows = 0, cols = 0, cell = 1;
    std::vector<double> control;  // (cr+1) x (cc+1)
    int cr = 0, cc = 0;

    ValueField(int rows_, int cols_, std::uint64_t seed) : rows(rows_), cols(cols_) {
        cell = std::max(1, std::max(rows, cols) / 8);
        cr = (rows + cell - 1) / cell;
        cc = (cols + cell - 1) / cell;
        control.resize(std::size_t(cr + 1) * (cc + 1));
        Rng rng(seed);
        for (double& v : control) v = rng.uniform();
    }

    double at(int y, int x) const {
        const double fy = double(y) / cell, fx = double(x) / cell;
        const int iy = std::min(int(fy), cr - 1), ix = std::min(int(fx), cc - 1);
        const double ty = fy - iy, tx = fx - ix;
        auto c = [&](int a, int b) { return control[std::size_t(a) * (cc + 1) + b]; };
        return c(iy, ix) * (1 - ty) * (1 - tx) + c(iy, ix + 1) * (1 - ty) * tx +
               c(iy + 1, ix) * ty * (1 - tx) + c(iy + 1, ix + 1) * ty * tx;
    }
};

double ramp_fraction(const ChangeEvent& e, double day) {
    if (day < e.start_day) return 0.0;
    if (day >= e.start_day + e.ramp_days) return 1.0;
    return (day - e.start_day) / double(e.ramp_days);
}

}  // namespace

ScenarioSpec default_scenario() {
    ScenarioSpec s;
    s.testing_tiles = {{0, 2}, {1, 0}, {2, 1}, {3, 3}};
    const auto build = even_offsets(0.25f);
    const auto raze = even_offsets(-0.22f);
    s.events = {
        // trainval area
        {6, 6, 10, 12, 120, 40, build, 0.35f, "construction"},
        {10, 44, 12, 10, 300, 30, raze, -0.30f, "destruction"},
        {4, 100, 9, 14, 200, 25, build, 0.35f, "construction"},
        {44, 36, 14, 10, 90, 50, build, 0.35f, "construction"},
        {38, 70, 10, 10, 450, 35, raze, -0.30f, "destruction"},
        {72, 8, 12, 12, 250, 45, build, 0.35f, "construction"},
        {104, 6, 12, 9, 520, 40, raze, -0.30f, "destruction"},
        {100, 70, 14, 12, 160, 55, build, 0.35f, "construction"},
        // testing area
        {8, 70, 12, 12, 140, 40, build, 0.35f, "construction"},
        {40, 4, 10, 12, 330, 30, raze, -0.30f, "destruction"},
        {70, 40, 12, 10, 480, 45, build, 0.35f, "construction"},
        {102, 102, 12, 12, 220, 35, build, 0.35f, "construction"},
    };
    return s;
}

ObservationSeries generate_scene(const ScenarioSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::uint64_t opt_seed = spec.seed_opt.value_or(mix_seed(seed, 0x09));
    const std::uint64_t sar_seed = spec.seed_sar.value_or(mix_seed(seed, 0x5a));
    const std::int64_t base = spec.base_timestamp();
    const int rows = spec.height, cols = spec.width;
    const std::size_t plane = std::size_t(rows) * cols;

    ObservationSeries series;
    series.scene.height = rows;
    series.scene.width = cols;
    series.scene.crs = "synthetic";
    series.scene.bounds = "0,0," + std::to_string(cols) + "," + std::to_string(rows);

    // event coverage masks for fast per-frame application
    std::vector<std::vector<std::size_t>> event_pixels(spec.events.size());
    for (std::size_t e = 0; e < spec.events.size(); ++e) {
        const ChangeEvent& ev = spec.events[e];
        for (int y = 0; y < ev.height; ++y)
            for (int x = 0; x < ev.width; ++x)
                event_pixels[e].push_back(std::size_t(ev.row + y) * cols + ev.col + x);
    }

    // optical observations
    {
        const ValueField field(rows, cols, mix_seed(opt_seed, 0xb9));
        int index = 0;
        for (int day = 0; day < spec.duration_days; day += spec.opt_cadence_days, ++index) {
            Observation o;
            o.mode = Mode::Opt;
            o.timestamp = base + std::int64_t(day) * kSecondsPerDay;
            o.data = BandCube(13, rows, cols);
            const double season =
                spec.seasonal_amplitude * std::sin(2.0 * M_PI * double(day) / 365.25);
            for (int b = 0; b < 13; ++b) {
                float* p = o.data.plane(b);
                const double bias = 0.10 + 0.015 * b;
                for (int y = 0; y < rows; ++y)
                    for (int x = 0; x < cols; ++x)
                        p[std::size_t(y) * cols + x] =
                            float(bias + 0.25 * field.at(y, x) + season);
                for (std::size_t e = 0; e < spec.events.size(); ++e) {
                    const double f = ramp_fraction(spec.events[e], day);
                    if (f <= 0.0) continue;
                    const float shift = float(f * spec.events[e].optical_offset[b]);
                    for (std::size_t px : event_pixels[e]) p[px] += shift;
                }
            }
            Rng noise_rng(mix_seed(opt_seed, 0xf4a3e, std::uint64_t(index)));
            if (spec.optical_noise_sigma > 0.0)
                for (float& v : o.data.v)
                    v += float(noise_rng.normal(0.0, spec.optical_noise_sigma));
            ByteGrid mask(rows, cols, 1);
            if (spec.cloud_probability > 0.0) {
                Rng cloud_rng(mix_seed(opt_seed, 0xc10d, std::uint64_t(index)));
                for (std::size_t px = 0; px < plane; ++px)
                    if (cloud_rng.uniform() < spec.cloud_probability) {
                        mask.v[px] = 0;
                        // cloud radiance: bright and useless unless masked out
                        for (int b = 0; b < 13; ++b) o.data.plane(b)[px] = 0.9f;
                    }
            }
            o.mask = std::move(mask);
            series.obs(Mode::Opt).push_back(std::move(o));
        }
    }

    // SAR observations (ascending and descending differ by texture phase)
    for (Mode m : {Mode::SarAsc, Mode::SarDsc}) {
        const std::uint64_t mode_seed = mix_seed(sar_seed, m == Mode::SarAsc ? 1 : 2);
        const ValueField field(rows, cols, mix_seed(mode_seed, 0xb9));
        const double vv_bias = 0.55, vh_bias = 0.35;
        const double vv_scale = 0.30, vh_scale = 0.20;
        int index = 0;
        for (int day = 0; day < spec.duration_days; day += spec.sar_cadence_days, ++index) {
            Observation o;
            o.mode = m;
            o.timestamp = base + std::int64_t(day) * kSecondsPerDay;
            o.data = BandCube(2, rows, cols);
            for (int b = 0; b < 2; ++b) {
                float* p = o.data.plane(b);
                const double bias = b == 0 ? vv_bias : vh_bias;
                const double scale = b == 0 ? vv_scale : vh_scale;
                for (int y = 0; y < rows; ++y)
                    for (int x = 0; x < cols; ++x)
                        p[std::size_t(y) * cols + x] = float(bias + scale * field.at(y, x));
                for (std::size_t e = 0; e < spec.events.size(); ++e) {
                    const double f = ramp_fraction(spec.events[e], day);
                    if (f <= 0.0) continue;
                    const float shift = float(f * spec.events[e].sar_offset);
                    for (std::size_t px : event_pixels[e]) p[px] += shift;
                }
            }
            if (spec.speckle_looks > 0) {
                Rng speckle_rng(mix_seed(mode_seed, 0x5bec, std::uint64_t(index)));
                for (float& v : o.data.v)
                    v = float(double(v) * speckle_rng.gamma_mean1(spec.speckle_looks));
            }
            series.obs(m).push_back(std::move(o));
        }
    }
    return series;
}

std::vector<LabeledTile> generate_labels(const ScenarioSpec& spec, int day_start, int day_end,
                                         int tile_size) {
    spec.validate();
    if (day_end < day_start) fail("empty label period");
    std::vector<LabeledTile> labels;
    for (int ty = 0; (ty + 1) * tile_size <= spec.height; ++ty)
        for (int tx = 0; (tx + 1) * tile_size <= spec.width; ++tx) {
            LabeledTile t;
            t.tile_row = ty;
            t.tile_col = tx;
            t.dataset = "trainval";
            for (const auto& [y, x] : spec.testing_tiles)
                if (y == ty && x == tx) t.dataset = "testing";
            t.truth = Grid(tile_size, tile_size, 0.0f);
            for (const ChangeEvent& e : spec.events) {
                if (e.start_day > day_end || e.start_day + e.ramp_days < day_start)
                    continue;  // ramp interval does not intersect the period
                for (int y = 0; y < e.height; ++y)
                    for (int x = 0; x < e.width; ++x) {
                        const int sy = e.row + y - ty * tile_size;
                        const int sx = e.col + x - tx * tile_size;
                        if (sy >= 0 && sy < tile_size && sx >= 0 && sx < tile_size)
                            t.truth.at(sy, sx) = 1.0f;
                    }
            }
            labels.push_back(std::move(t));
        }
    return labels;
}

// --- scenario JSON -----------------------------------------------------------

ScenarioSpec scenario_from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("missing scenario file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("corrupt scenario file: " + std::string(e.what()));
    }
    ScenarioSpec s;
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.duration_days = j.value("duration_days", s.duration_days);
    s.opt_cadence_days = j.value("opt_cadence_days", s.opt_cadence_days);
    s.sar_cadence_days = j.value("sar_cadence_days", s.sar_cadence_days);
    s.cloud_probability = j.value("cloud_probability", s.cloud_probability);
    s.optical_noise_sigma = j.value("optical_noise_sigma", s.optical_noise_sigma);
    s.seasonal_amplitude = j.value("seasonal_amplitude", s.seasonal_amplitude);
    s.speckle_looks = j.value("speckle_looks", s.speckle_looks);
    s.start_date = j.value("start_date", s.start_date);
    if (j.contains("seed_sar")) s.seed_sar = j.at("seed_sar").get<std::uint64_t>();
    if (j.contains("seed_opt")) s.seed_opt = j.at("seed_opt").get<std::uint64_t>();
    if (j.contains("testing_tiles"))
        for (const json& rec : j.at("testing_tiles"))
            s.testing_tiles.emplace_back(rec.at(0).get<int>(), rec.at(1).get<int>());
    if (j.contains("events"))
        for (const json& rec : j.at("events")) {
            ChangeEvent e;
            e.row = rec.at("row").get<int>();
            e.col = rec.at("col").get<int>();
            e.height = rec.at("height").get<int>();
            e.width = rec.at("width").get<int>();
            e.start_day = rec.at("start_day").get<int>();
            e.ramp_days = rec.at("ramp_days").get<int>();
            e.sar_offset = rec.at("sar_offset").get<float>();
            e.kind = rec.value("kind", "construction");
            const auto& off = rec.at("optical_offset");
            if (off.size() != e.optical_offset.size())
                fail("optical_offset must list 13 bands");
            for (std::size_t b = 0; b < e.optical_offset.size(); ++b)
                e.optical_offset[b] = off.at(b).get<float>();
            s.events.push_back(std::move(e));
        }
    s.validate();
    return s;
}

void scenario_to_json_file(const ScenarioSpec& spec, const std::filesystem::path& path) {
    json events = json::array();
    for (const ChangeEvent& e : spec.events)
        events.push_back(json{{"row", e.row},
                              {"col", e.col},
                              {"height", e.height},
                              {"width", e.width},
                              {"start_day", e.start_day},
                              {"ramp_days", e.ramp_days},
                              {"optical_offset", e.optical_offset},
                              {"sar_offset", e.sar_offset},
                              {"kind", e.kind}});
    json tiles = json::array();
    for (const auto& [y, x] : spec.testing_tiles) tiles.push_back(json::array({y, x}));
    json j{{"height", spec.height},
           {"width", spec.width},
           {"duration_days", spec.duration_days},
           {"opt_cadence_days", spec.opt_cadence_days},
           {"sar_cadence_days", spec.sar_cadence_days},
           {"cloud_probability", spec.cloud_probability},
           {"optical_noise_sigma", spec.optical_noise_sigma},
           {"seasonal_amplitude", spec.seasonal_amplitude},
           {"speckle_looks", spec.speckle_looks},
           {"start_date", spec.start_date},
           {"testing_tiles", std::move(tiles)},
           {"events", std::move(events)}};
    if (spec.seed_sar) j["seed_sar"] = *spec.seed_sar;
    if (spec.seed_opt) j["seed_opt"] = *spec.seed_opt;
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace deltamon
