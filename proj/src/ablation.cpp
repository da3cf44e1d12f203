#include "deltamon/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace deltamon {

namespace {

struct Cell {
    std::string axis;
    std::optional<int> delta_days;  // nullopt = freeze forever

    std::string label(int) const {
        return delta_days ? std::to_string(*delta_days) : "inf";
    }
};

std::int64_t cell_interval(const Cell& cell, bool sar, int native_days) {
    const bool applies = cell.axis == "both" || (sar ? cell.axis == "sar" : cell.axis == "opt");
    if (!applies) return interval_from_days(native_days);
    return cell.delta_days ? interval_from_days(*cell.delta_days) : kFreezeForever;
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const AblationInputs& in) {
    if (!in.stacked || !in.labels) fail("ablation needs a stacked series and labels");
    if (in.variants.empty()) fail("ablation needs at least one trained variant");
    for (const std::string& axis : grid.axes)
        if (axis != "sar" && axis != "opt" && axis != "both")
            fail("unknown ablation axis '" + axis + "'");

    const int native = in.pipeline.delta_days;
    std::vector<Cell> cells{{"both", native}};  // reference
    for (const std::string& axis : grid.axes)
        for (const auto& delta : grid.delta_days) {
            if (axis == "both" && delta && *delta == native) continue;  // already the reference
            cells.push_back(Cell{axis, delta});
        }

    std::vector<std::string> models = grid.models;
    if (models.empty()) {
        for (const auto& [name, params] : in.variants) models.push_back(name);
        if (in.variants.size() > 1) models.push_back("combined");
    }

    // labeled tiles of the requested dataset, minus exclusions
    std::vector<const LabeledTile*> tiles;
    for (const LabeledTile& t : *in.labels) {
        if (t.dataset != in.dataset) continue;
        if (std::find(in.exclude.begin(), in.exclude.end(), t.id()) != in.exclude.end())
            continue;
        tiles.push_back(&t);
    }
    if (tiles.empty()) fail("ablation has no tiles to score");

    std::vector<AblationRow> rows;
    std::vector<std::vector<Window>> reference_windows;
    for (const Cell& cell : cells) {
        const ObservationSeries resampled =
            stale_resample(*in.stacked, cell_interval(cell, true, native),
                           cell_interval(cell, false, native));
        const AssembledSequence assembled =
            normalize(assemble(resampled, in.pipeline), in.norm);

        std::vector<VariantPrediction> preds;
        std::vector<std::vector<Window>> cell_windows;
        for (const LabeledTile* tile : tiles) {
            TilePatch patch;
            patch.tile_row = tile->tile_row;
            patch.tile_col = tile->tile_col;
            patch.row0 = tile->tile_row * in.pipeline.tile_rows;
            patch.col0 = tile->tile_col * in.pipeline.tile_cols;
            patch.rows = in.pipeline.tile_rows;
            patch.cols = in.pipeline.tile_cols;
            const AssembledSequence tile_seq = crop_sequence(assembled, patch);
            const WindowSet windows = build_windows(tile_seq, in.pipeline);
            cell_windows.push_back(windows.windows);

            std::vector<Grid> variant_rasters;
            for (const auto& [name, params] : in.variants) {
                Grid raster = predict_over_windows(params, tile_seq, windows, in.threads);
                variant_rasters.push_back(raster);
                preds.push_back(VariantPrediction{name, tile->tile_row, tile->tile_col,
                                                  std::move(raster),
                                                  int(windows.windows.size())});
            }
            preds.push_back(VariantPrediction{"combined", tile->tile_row, tile->tile_col,
                                              combine_variants(variant_rasters),
                                              int(windows.windows.size())});
        }

        // premise: stale resampling keeps counts and timestamps, so the
        // windows must be identical in every cell
        if (reference_windows.empty()) {
            reference_windows = cell_windows;
        } else {
            for (std::size_t t = 0; t < cell_windows.size(); ++t) {
                if (cell_windows[t].size() != reference_windows[t].size())
                    fail("ablation premise violated: window count changed");
                for (std::size_t w = 0; w < cell_windows[t].size(); ++w)
                    if (cell_windows[t][w].start_index != reference_windows[t][w].start_index ||
                        cell_windows[t][w].count != reference_windows[t][w].count)
                        fail("ablation premise violated: window layout changed");
            }
        }

        for (const std::string& model : models) {
            const DatasetMetrics m =
                score_dataset(preds, *in.labels, model, in.dataset, in.crop, in.exclude);
            AblationRow row;
            row.axis = cell.axis;
            row.delta_label = cell.label(native);
            row.model = model;
            row.roc_auc = m.roc_auc;
            row.pr_auc = m.pr_auc;
            row.kappa_max = m.kappa_max;
            row.kappa_argmax = m.kappa_argmax;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << "mode_axis,delta_days,model,roc_auc,pr_auc,kappa_max,kappa_argmax\n";
    for (const AblationRow& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s,%s,%s,%.9g,%.9g,%.9g,%.9g\n", r.axis.c_str(),
                      r.delta_label.c_str(), r.model.c_str(), r.roc_auc, r.pr_auc, r.kappa_max,
                      r.kappa_argmax);
        out << line;
    }
}

}  // namespace deltamon
