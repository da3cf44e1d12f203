#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deltamon/model.hpp"

namespace deltamon {

struct TransferConfig {
    double learning_rate = 0.008;
    double momentum = 0.8;
    int epochs = 160;
    int batch_size = 64;       // effective batch, in tiles
    int windows_per_tile = 10;
    int first_window_index = 21;
    int offset_min = 40;       // uniform random window-start offsets
    int offset_max = 49;
    int center_crop = 30;      // scored pixels per tile axis
    enum class Augment { None, Random, Full };
    Augment augment = Augment::Full;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate(int tile_rows, int tile_cols) const;
};

struct LabeledTile {
    int tile_row = 0;
    int tile_col = 0;
    Grid truth;           // binary ground truth, tile-sized
    std::string dataset;  // "trainval" or "testing"

    std::string id() const { return std::to_string(tile_row) + ":" + std::to_string(tile_col); }
};

// labels.json manifest [{tile_y, tile_x, path, dataset}] plus per-tile rasters
// in the bundle encoding.
std::vector<LabeledTile> read_labels(const std::filesystem::path& manifest_path);
void write_labels(const std::vector<LabeledTile>& labels, const std::filesystem::path& dir);

struct FoldSplit {
    int variant = 1;  // 1-based, V1..Vk
    std::vector<std::string> train_ids;
    std::vector<std::string> validation_ids;
};

/// k folds with pairwise disjoint validation sets whose union is the input;
/// validation sizes differ by at most one. Deterministic given seed.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& tile_ids, int k,
                                  std::uint64_t seed);
void save_folds(const std::vector<FoldSplit>& folds, const std::filesystem::path& path);
std::vector<FoldSplit> load_folds(const std::filesystem::path& path);

/// Deterministic per seed: start frame indices s1 = first_window_index,
/// s_{i+1} = s_i + U{offset_min..offset_max}. Returns positions within
/// set.windows; throws when the sequence cannot host a requested start.
std::vector<int> select_windows(const WindowSet& set, const TransferConfig& config,
                                std::uint64_t seed);

Grid max_pool_over_time(std::span<const Grid> preds);

struct PooledPrediction {
    Grid pooled;
    std::vector<int> source;  // per-pixel index of the contributing window (ties: lowest)
};
PooledPrediction max_pool_with_source(std::span<const Grid> preds);

struct LossValue {
    double loss = 0.0;
    Grid grad;  // d loss / d pred
};

/// Tanimoto overlap loss averaged with its evaluation on complemented
/// prediction/label, subtracted from one. Inputs must already be cropped to
/// the scored region.
LossValue tanimoto_complement_loss(const Grid& pred, const Grid& label);

/// One of the 16 deterministic augmentation variants: horizontal flip,
/// quarter-turn rotation, and temporal decimation (every second valid frame
/// dropped). Spatial parts apply identically to frames and label.
struct AugmentTag {
    bool flip = false;
    int quarter_turns = 0;  // counter-clockwise
    bool comb = false;

    static AugmentTag from_index(int i);
    int index() const { return (flip ? 1 : 0) + 2 * quarter_turns + 8 * (comb ? 1 : 0); }
};

Grid augment_grid(const Grid& g, AugmentTag tag);
WindowTensor augment_window(const WindowTensor& w, AugmentTag tag);
void augment_sample(std::vector<WindowTensor>& windows, Grid& label, AugmentTag tag);

/// Ready-to-train tile: normalized assembled sequence, window set, label.
struct TrainTile {
    std::string id;
    int tile_row = 0;
    int tile_col = 0;
    Grid label;
    AssembledSequence seq;
    WindowSet windows;
};

struct EpochPoint {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    ModelParams best;
    ModelParams last;
    int best_epoch = 0;
    std::vector<EpochPoint> trace;
};

/// One SGD step with momentum: v <- m*v - lr*g, theta <- theta + v.
void sgd_update(std::span<float> values, std::span<float> velocity,
                std::span<const float> grad, double learning_rate, double momentum);

/// Synchronous SGD with momentum over max-pooled window predictions. All
/// variants start from the same seeded init; per-epoch window selection,
/// augmentation draws, and dropout are seeded per (seed, variant, epoch,
/// tile). Gradients reduce over the batch in listed order, so results are
/// identical for any thread count.
TrainResult train_variant(const FoldSplit& fold, const std::vector<TrainTile>& tiles,
                          const TransferConfig& config, const ModelDescriptor& arch);

void write_trace_csv(const std::vector<EpochPoint>& trace, const std::filesystem::path& path);

}  // namespace deltamon
