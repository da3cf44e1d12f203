#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deltamon/model.hpp"

namespace deltamon {

struct VariantPrediction {
    std::string model;  // "V1".."Vk" or "combined"
    int tile_row = 0;
    int tile_col = 0;
    Grid raster;
    int window_count = 0;
};

/// Monitoring-phase prediction for one tile: element-wise maximum of the
/// forward outputs over every window in the set (inference mode, no dropout).
Grid predict_over_windows(const ModelParams& params, const AssembledSequence& tile_seq,
                          const WindowSet& windows, int threads = 1);

/// Bagged combination: element-wise n-th root of the element-wise product,
/// accumulated in 64-bit and stored as 32-bit.
Grid combine_variants(std::span<const Grid> variants);

// predictions.json manifest [{model, tile_y, tile_x, path}] plus rasters in
// the bundle encoding.
void write_predictions(const std::vector<VariantPrediction>& preds,
                       const std::filesystem::path& dir);
std::vector<VariantPrediction> read_predictions(const std::filesystem::path& dir);

}  // namespace deltamon
