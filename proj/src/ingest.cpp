#include "deltamon/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace deltamon {

namespace fs = std::filesystem;
using nlohmann::json;

// --- raw raster codecs ------------------------------------------------------

void write_f32(const fs::path& path, std::span<const float> values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(values.data()),
              std::streamsize(values.size() * sizeof(float)));
    if (!out) fail("write failed: " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) fail("cannot open raster: " + path.string());
    const auto bytes = std::size_t(in.tellg());
    if (bytes != expected_count * sizeof(float))
        fail("raster size mismatch: " + path.string() + " holds " + std::to_string(bytes) +
             " bytes, expected " + std::to_string(expected_count * sizeof(float)));
    std::vector<float> values(expected_count);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), std::streamsize(bytes));
    if (!in) fail("read failed: " + path.string());
    return values;
}

void write_u8(const fs::path& path, std::span<const std::uint8_t> values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size()));
    if (!out) fail("write failed: " + path.string());
}

std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) fail("cannot open raster: " + path.string());
    const auto bytes = std::size_t(in.tellg());
    if (bytes != expected_count)
        fail("mask size mismatch: " + path.string() + " holds " + std::to_string(bytes) +
             " bytes, expected " + std::to_string(expected_count));
    std::vector<std::uint8_t> values(expected_count);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), std::streamsize(bytes));
    if (!in) fail("read failed: " + path.string());
    return values;
}

Grid crop_center(const Grid& g, int out_rows, int out_cols) {
    if (out_rows > g.rows || out_cols > g.cols)
        fail("crop larger than raster");
    const int y0 = (g.rows - out_rows) / 2;
    const int x0 = (g.cols - out_cols) / 2;
    Grid out(out_rows, out_cols);
    for (int y = 0; y < out_rows; ++y)
        for (int x = 0; x < out_cols; ++x) out.at(y, x) = g.at(y0 + y, x0 + x);
    return out;
}

// --- modes ------------------------------------------------------------------

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::SarAsc: return "SAR_ASC";
        case Mode::SarDsc: return "SAR_DSC";
        case Mode::Opt: return "OPT";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    for (Mode m : kAllModes)
        if (name == mode_name(m)) return m;
    fail("unknown observation mode '" + name + "'");
}

std::size_t ObservationSeries::total_observations() const {
    std::size_t n = 0;
    for (const auto& v : by_mode) n += v.size();
    return n;
}

// --- bundle i/o ---------------------------------------------------------------

namespace {

json load_json(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) fail(std::string("missing ") + what + ": " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(std::string("corrupt ") + what + " (" + path.string() + "): " + e.what());
    }
    return j;
}

void dump_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void check_finite(const Observation& o, const fs::path& src) {
    for (float x : o.data.v)
        if (!std::isfinite(x))
            fail("non-finite value in raster " + src.string());
}

}  // namespace

ObservationSeries read_bundle(const fs::path& root) {
    const json scene = load_json(root / "scene.json", "scene header");
    ObservationSeries series;
    try {
        series.scene.height = scene.at("height").get<int>();
        series.scene.width = scene.at("width").get<int>();
        series.scene.crs = scene.value("crs", "");
        series.scene.bounds = scene.value("bounds", "");
    } catch (const json::exception& e) {
        fail("corrupt scene header: " + std::string(e.what()));
    }
    if (series.scene.height <= 0 || series.scene.width <= 0)
        fail("scene dimensions must be positive");

    const json manifest = load_json(root / "manifest.json", "manifest");
    if (!manifest.is_array()) fail("manifest must be a JSON array");
    const std::size_t pixels = std::size_t(series.scene.height) * series.scene.width;
    for (const json& rec : manifest) {
        Observation o;
        try {
            o.mode = mode_from_name(rec.at("mode").get<std::string>());
            o.timestamp = parse_utc(rec.at("timestamp").get<std::string>());
        } catch (const json::exception& e) {
            fail("corrupt manifest record: " + std::string(e.what()));
        }
        const int bands = band_count(o.mode);
        const fs::path data_path = root / rec.at("data_path").get<std::string>();
        o.data.bands = bands;
        o.data.rows = series.scene.height;
        o.data.cols = series.scene.width;
        o.data.v = read_f32(data_path, pixels * std::size_t(bands));
        check_finite(o, data_path);
        if (rec.contains("mask_path")) {
            if (o.mode != Mode::Opt)
                fail("manifest assigns a mask to a SAR observation");
            ByteGrid mask;
            mask.rows = series.scene.height;
            mask.cols = series.scene.width;
            mask.v = read_u8(root / rec.at("mask_path").get<std::string>(), pixels);
            o.mask = std::move(mask);
        } else if (o.mode == Mode::Opt) {
            fail("optical observation without mask in manifest");
        }
        series.obs(o.mode).push_back(std::move(o));
    }

    for (Mode m : kAllModes) {
        auto& list = series.obs(m);
        std::stable_sort(list.begin(), list.end(),
                         [](const Observation& a, const Observation& b) {
                             return a.timestamp < b.timestamp;
                         });
        for (std::size_t i = 1; i < list.size(); ++i)
            if (list[i].timestamp == list[i - 1].timestamp)
                fail(std::string("duplicate timestamp for mode ") + mode_name(m) + ": " +
                     format_utc(list[i].timestamp));
    }
    return series;
}

void write_bundle(const ObservationSeries& series, const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) fail("cannot create bundle directory " + root.string());

    dump_json(json{{"height", series.scene.height},
                   {"width", series.scene.width},
                   {"crs", series.scene.crs},
                   {"bounds", series.scene.bounds}},
              root / "scene.json");

    json manifest = json::array();
    for (Mode m : kAllModes) {
        const auto& list = series.obs(m);
        for (std::size_t i = 0; i < list.size(); ++i) {
            const Observation& o = list[i];
            char stem[64];
            std::snprintf(stem, sizeof(stem), "%s_%05zu", mode_name(m), i);
            json rec{{"mode", mode_name(m)},
                     {"timestamp", format_utc(o.timestamp)},
                     {"data_path", std::string(stem) + ".f32"}};
            write_f32(root / (std::string(stem) + ".f32"), o.data.v);
            if (o.mask) {
                rec["mask_path"] = std::string(stem) + ".mask.u8";
                write_u8(root / (std::string(stem) + ".mask.u8"), o.mask->v);
            }
            manifest.push_back(std::move(rec));
        }
    }
    dump_json(manifest, root / "manifest.json");
}

std::vector<Finding> validate_series(const ObservationSeries& series) {
    std::vector<Finding> findings;
    auto add = [&](Mode m, int i, const char* rule, std::string detail) {
        findings.push_back(Finding{m, i, rule, std::move(detail)});
    };

    for (Mode m : kAllModes) {
        const auto& list = series.obs(m);
        for (std::size_t i = 0; i < list.size(); ++i) {
            const Observation& o = list[i];
            if (o.mode != m)
                add(m, int(i), "mode-slot mismatch", "observation stored under wrong mode");
            if (o.data.bands != band_count(m))
                add(m, int(i), "band-count violation",
                    std::to_string(o.data.bands) + " bands, expected " +
                        std::to_string(band_count(m)));
            if (o.data.rows != series.scene.height || o.data.cols != series.scene.width)
                add(m, int(i), "shape mismatch",
                    std::to_string(o.data.rows) + "x" + std::to_string(o.data.cols) +
                        " vs scene " + std::to_string(series.scene.height) + "x" +
                        std::to_string(series.scene.width));
            if (m == Mode::Opt && !o.mask)
                add(m, int(i), "missing mask", "optical observation without validity mask");
            if (m != Mode::Opt && o.mask)
                add(m, int(i), "unexpected mask", "SAR observations carry no mask");
            if (o.mask && (o.mask->rows != series.scene.height || o.mask->cols != series.scene.width))
                add(m, int(i), "mask shape mismatch", "");
            for (float x : o.data.v)
                if (!std::isfinite(x)) {
                    add(m, int(i), "non-finite value", "");
                    break;
                }
            if (i > 0 && list[i].timestamp <= list[i - 1].timestamp)
                add(m, int(i), "non-increasing timestamp",
                    format_utc(list[i].timestamp) + " after " + format_utc(list[i - 1].timestamp));
        }
    }
    return findings;
}

}  // namespace deltamon
