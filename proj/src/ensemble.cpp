#include "deltamon/ensemble.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "model_engine.hpp"

namespace deltamon {

using nlohmann::json;

Grid predict_over_windows(const ModelParams& params, const AssembledSequence& tile_seq,
                          const WindowSet& windows, int threads) {
    if (windows.windows.empty()) fail("prediction needs at least one window");
    const std::size_t n = windows.windows.size();
    std::vector<Grid> preds(n);
    parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
        detail::Engine<float> engine(params);
        std::vector<float> pred;
        for (std::size_t i = lo; i < hi; ++i) {
            const WindowTensor tensor = extract_window(tile_seq, windows.windows[i]);
            engine.forward(tensor, /*training=*/false, 0, pred, nullptr);
            preds[i] = Grid(tensor.rows, tensor.cols);
            preds[i].v = pred;
        }
    });
    Grid out = std::move(preds[0]);
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t p = 0; p < out.v.size(); ++p)
            out.v[p] = std::max(out.v[p], preds[i].v[p]);
    return out;
}

Grid combine_variants(std::span<const Grid> variants) {
    if (variants.empty()) fail("combination needs at least one variant");
    for (const Grid& g : variants)
        if (!g.same_shape(variants[0])) fail("combination shape mismatch");
    const double exponent = 1.0 / double(variants.size());
    Grid out(variants[0].rows, variants[0].cols);
    for (std::size_t p = 0; p < out.v.size(); ++p) {
        double prod = 1.0;
        for (const Grid& g : variants) prod *= double(g.v[p]);
        out.v[p] = float(std::pow(prod, exponent));
    }
    return out;
}

void write_predictions(const std::vector<VariantPrediction>& preds,
                       const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    json manifest = json::array();
    for (const VariantPrediction& p : preds) {
        const std::string name = p.model + "_" + std::to_string(p.tile_row) + "_" +
                                 std::to_string(p.tile_col) + ".f32";
        write_f32(dir / name, p.raster.v);
        manifest.push_back(json{{"model", p.model},
                                {"tile_y", p.tile_row},
                                {"tile_x", p.tile_col},
                                {"path", name},
                                {"rows", p.raster.rows},
                                {"cols", p.raster.cols},
                                {"window_count", p.window_count}});
    }
    std::ofstream out(dir / "predictions.json");
    if (!out) fail("cannot write predictions.json in " + dir.string());
    out << manifest.dump(2) << "\n";
}

std::vector<VariantPrediction> read_predictions(const std::filesystem::path& dir) {
    std::ifstream in(dir / "predictions.json");
    if (!in) fail("missing predictions manifest: " + (dir / "predictions.json").string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        fail("corrupt predictions manifest: " + std::string(e.what()));
    }
    std::vector<VariantPrediction> preds;
    for (const json& rec : manifest) {
        VariantPrediction p;
        p.model = rec.at("model").get<std::string>();
        p.tile_row = rec.at("tile_y").get<int>();
        p.tile_col = rec.at("tile_x").get<int>();
        p.window_count = rec.value("window_count", 0);
        const int rows = rec.at("rows").get<int>(), cols = rec.at("cols").get<int>();
        p.raster = Grid(rows, cols);
        p.raster.v = read_f32(dir / rec.at("path").get<std::string>(),
                              std::size_t(rows) * cols);
        preds.push_back(std::move(p));
    }
    return preds;
}

}  // namespace deltamon
