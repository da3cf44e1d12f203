#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deltamon/eval.hpp"
#include "deltamon/pipeline.hpp"

namespace deltamon {

/// Observation-frequency study grid. The native sampling step is always run
/// first as the reference cell (axis "both").
struct AblationGrid {
    std::vector<std::optional<int>> delta_days;  // nullopt = freeze forever
    std::vector<std::string> axes;               // subset of {"sar", "opt", "both"}
    std::vector<std::string> models;             // rows to emit; empty = all + combined
};

struct AblationRow {
    std::string axis;
    std::string delta_label;  // "2", "120", ..., "inf"; reference row carries the native step
    std::string model;
    double roc_auc = 0.0;
    double pr_auc = 0.0;
    double kappa_max = 0.0;
    double kappa_argmax = 0.0;
};

struct AblationInputs {
    const ObservationSeries* stacked = nullptr;  // temporally stacked series
    const std::vector<LabeledTile>* labels = nullptr;
    std::string dataset = "testing";
    std::vector<std::pair<std::string, ModelParams>> variants;  // ("V1", params), ...
    PipelineParams pipeline;
    NormalizationManifest norm;
    int crop = 30;
    int threads = 1;
    std::vector<std::string> exclude;
};

/// For every cell: stale-resample per mode axis, assemble, window, predict
/// each variant plus the bagged combination, and score against the labels.
/// Window counts are checked to be identical across cells.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const AblationInputs& in);

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::filesystem::path& path);

}  // namespace deltamon
