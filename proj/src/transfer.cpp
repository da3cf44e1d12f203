#include "deltamon/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "model_engine.hpp"

namespace deltamon {

using nlohmann::json;

void TransferConfig::validate(int tile_rows, int tile_cols) const {
    if (learning_rate < 0.0) fail("learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0, 1)");
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (windows_per_tile < 1) fail("windows_per_tile must be >= 1");
    if (first_window_index < 0) fail("first_window_index must be >= 0");
    if (offset_min < 1 || offset_min > offset_max) fail("offsets must satisfy 1 <= min <= max");
    if (center_crop != tile_rows - 2 || center_crop != tile_cols - 2)
        fail("center_crop must leave exactly a one-pixel border of the tile");
}

// --- labels ---------------------------------------------------------------

std::vector<LabeledTile> read_labels(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) fail("missing label manifest: " + manifest_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("corrupt label manifest: " + std::string(e.what()));
    }
    const auto dir = manifest_path.parent_path();
    std::vector<LabeledTile> labels;
    for (const json& rec : j) {
        LabeledTile t;
        t.tile_row = rec.at("tile_y").get<int>();
        t.tile_col = rec.at("tile_x").get<int>();
        t.dataset = rec.at("dataset").get<std::string>();
        const auto path = dir / rec.at("path").get<std::string>();
        std::error_code ec;
        const auto bytes = std::filesystem::file_size(path, ec);
        if (ec) fail("missing label raster: " + path.string());
        const auto pixels = bytes / sizeof(float);
        const int side = int(std::lround(std::sqrt(double(pixels))));
        if (std::size_t(side) * side != pixels)
            fail("label raster is not square: " + path.string());
        t.truth = Grid(side, side);
        t.truth.v = read_f32(path, pixels);
        for (float v : t.truth.v)
            if (v != 0.0f && v != 1.0f)
                fail("label raster not binary: " + path.string());
        labels.push_back(std::move(t));
    }
    return labels;
}

void write_labels(const std::vector<LabeledTile>& labels, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    json manifest = json::array();
    for (const LabeledTile& t : labels) {
        const std::string name =
            "label_" + std::to_string(t.tile_row) + "_" + std::to_string(t.tile_col) + ".f32";
        write_f32(dir / name, t.truth.v);
        manifest.push_back(json{{"tile_y", t.tile_row},
                                {"tile_x", t.tile_col},
                                {"path", name},
                                {"dataset", t.dataset}});
    }
    std::ofstream out(dir / "labels.json");
    if (!out) fail("cannot write labels.json in " + dir.string());
    out << manifest.dump(2) << "\n";
}

// --- folds ------------------------------------------------------------------

std::vector<FoldSplit> make_folds(const std::vector<std::string>& tile_ids, int k,
                                  std::uint64_t seed) {
    if (k < 1) fail("fold count must be >= 1");
    if (int(tile_ids.size()) < k)
        fail("need at least " + std::to_string(k) + " tiles for " + std::to_string(k) +
             " folds, have " + std::to_string(tile_ids.size()));
    std::vector<std::string> shuffled = tile_ids;
    Rng rng(mix_seed(seed, 0x0f01d5));
    rng.shuffle(shuffled);

    const int n = int(shuffled.size());
    const int base = n / k, extra = n % k;
    std::vector<FoldSplit> folds;
    int pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = base + (f < extra ? 1 : 0);
        FoldSplit fold;
        fold.variant = f + 1;
        fold.validation_ids.assign(shuffled.begin() + pos, shuffled.begin() + pos + size);
        fold.train_ids.reserve(n - size);
        for (int i = 0; i < n; ++i)
            if (i < pos || i >= pos + size) fold.train_ids.push_back(shuffled[i]);
        std::sort(fold.validation_ids.begin(), fold.validation_ids.end());
        std::sort(fold.train_ids.begin(), fold.train_ids.end());
        folds.push_back(std::move(fold));
        pos += size;
    }
    return folds;
}

void save_folds(const std::vector<FoldSplit>& folds, const std::filesystem::path& path) {
    json j = json::array();
    for (const FoldSplit& f : folds)
        j.push_back(json{{"variant", f.variant},
                         {"train", f.train_ids},
                         {"validation", f.validation_ids}});
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

std::vector<FoldSplit> load_folds(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("missing folds file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("corrupt folds file: " + std::string(e.what()));
    }
    std::vector<FoldSplit> folds;
    for (const json& rec : j) {
        FoldSplit f;
        f.variant = rec.at("variant").get<int>();
        f.train_ids = rec.at("train").get<std::vector<std::string>>();
        f.validation_ids = rec.at("validation").get<std::vector<std::string>>();
        folds.push_back(std::move(f));
    }
    return folds;
}

// --- window selection -----------------------------------------------------------

std::vector<int> select_windows(const WindowSet& set, const TransferConfig& config,
                                std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> positions;
    positions.reserve(config.windows_per_tile);
    int start = config.first_window_index;
    const int last_start = set.windows.empty() ? -1 : set.windows.back().start_index;
    for (int k = 0; k < config.windows_per_tile; ++k) {
        if (k > 0) start += int(rng.uniform_int(config.offset_min, config.offset_max));
        const Window* w = set.find_start_index(start);
        if (!w)
            fail("tile sequence too short for window " + std::to_string(k + 1) + " of " +
                 std::to_string(config.windows_per_tile) + " starting at frame " +
                 std::to_string(start) + "; last available window start is " +
                 std::to_string(last_start) + " (need at least " +
                 std::to_string(start + 1) + " window-capable frames)");
        positions.push_back(int(w - set.windows.data()));
    }
    return positions;
}

// --- max pooling over time ---------------------------------------------------------

PooledPrediction max_pool_with_source(std::span<const Grid> preds) {
    if (preds.empty()) fail("max pooling needs at least one prediction");
    for (const Grid& g : preds)
        if (!g.same_shape(preds[0])) fail("max pooling shape mismatch");
    PooledPrediction out;
    out.pooled = preds[0];
    out.source.assign(preds[0].size(), 0);
    for (int w = 1; w < int(preds.size()); ++w)
        for (std::size_t p = 0; p < out.pooled.v.size(); ++p)
            if (preds[w].v[p] > out.pooled.v[p]) {
                out.pooled.v[p] = preds[w].v[p];
                out.source[p] = w;
            }
    return out;
}

Grid max_pool_over_time(std::span<const Grid> preds) {
    return max_pool_with_source(preds).pooled;
}

// --- Tanimoto loss with complement ----------------------------------------------------

LossValue tanimoto_complement_loss(const Grid& pred, const Grid& label) {
    if (!pred.same_shape(label)) fail("loss shape mismatch");
    constexpr double eps = 1e-7;
    double spl = 0, spp = 0, sll = 0, sqm = 0, sqq = 0, smm = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double p = pred.v[i], l = label.v[i];
        const double q = 1.0 - p, m = 1.0 - l;
        spl += p * l;
        spp += p * p;
        sll += l * l;
        sqm += q * m;
        sqq += q * q;
        smm += m * m;
    }
    const double n1 = spl + eps, d1 = spp + sll - spl + eps;
    const double n2 = sqm + eps, d2 = sqq + smm - sqm + eps;

    LossValue out;
    out.loss = 1.0 - 0.5 * (n1 / d1 + n2 / d2);
    out.grad = Grid(pred.rows, pred.cols);
    const double inv_d1sq = 1.0 / (d1 * d1), inv_d2sq = 1.0 / (d2 * d2);
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double p = pred.v[i], l = label.v[i];
        const double q = 1.0 - p, m = 1.0 - l;
        const double dt1 = (l * d1 - n1 * (2.0 * p - l)) * inv_d1sq;
        const double dt2 = -(m * d2 - n2 * (2.0 * q - m)) * inv_d2sq;
        out.grad.v[i] = float(-0.5 * (dt1 + dt2));
    }
    return out;
}

// --- augmentation -------------------------------------------------------------------

AugmentTag AugmentTag::from_index(int i) {
    if (i < 0 || i >= 16) fail("augmentation index out of range");
    return AugmentTag{(i & 1) != 0, (i >> 1) & 3, (i & 8) != 0};
}

namespace {

// out = rot90^k(flip(in)); flip mirrors the x axis.
void spatial_transform(const float* in, float* out, int rows, int cols, AugmentTag tag) {
    if (tag.quarter_turns % 2 != 0 && rows != cols)
        fail("quarter-turn augmentation requires square tiles");
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            int sy = y, sx = x;
            // invert the rotation to find the source pixel
            for (int r = 0; r < tag.quarter_turns; ++r) {
                const int ty = sx, tx = rows - 1 - sy;
                sy = ty;
                sx = tx;
            }
            if (tag.flip) sx = cols - 1 - sx;
            out[std::size_t(y) * cols + x] = in[std::size_t(sy) * cols + sx];
        }
}

}  // namespace

Grid augment_grid(const Grid& g, AugmentTag tag) {
    Grid out(g.rows, g.cols);
    spatial_transform(g.v.data(), out.v.data(), g.rows, g.cols, tag);
    return out;
}

WindowTensor augment_window(const WindowTensor& w, AugmentTag tag) {
    std::vector<int> keep;
    keep.reserve(w.steps);
    int valid_seen = 0;
    for (int t = 0; t < w.steps; ++t) {
        if (!w.valid[t]) {
            if (!tag.comb) keep.push_back(t);
            continue;
        }
        if (!tag.comb || valid_seen % 2 == 0) keep.push_back(t);
        ++valid_seen;
    }
    WindowTensor out;
    out.steps = int(keep.size());
    out.bands = w.bands;
    out.rows = w.rows;
    out.cols = w.cols;
    out.valid.resize(keep.size());
    out.data.resize(std::size_t(keep.size()) * w.frame_values());
    const std::size_t plane = std::size_t(w.rows) * w.cols;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.valid[i] = w.valid[keep[i]];
        const float* src = w.frame(keep[i]);
        float* dst = out.frame(int(i));
        for (int b = 0; b < w.bands; ++b)
            spatial_transform(src + b * plane, dst + b * plane, w.rows, w.cols, tag);
    }
    return out;
}

void augment_sample(std::vector<WindowTensor>& windows, Grid& label, AugmentTag tag) {
    for (WindowTensor& w : windows) w = augment_window(w, tag);
    label = augment_grid(label, tag);
}

// --- training ------------------------------------------------------------------------

namespace {

Grid embed_center(const Grid& inner, int rows, int cols) {
    Grid out(rows, cols);
    const int y0 = (rows - inner.rows) / 2, x0 = (cols - inner.cols) / 2;
    for (int y = 0; y < inner.rows; ++y)
        for (int x = 0; x < inner.cols; ++x) out.at(y0 + y, x0 + x) = inner.at(y, x);
    return out;
}

struct SampleResult {
    double loss = 0.0;
    std::vector<float> grad;  // empty when gradients were not requested
};

// Forward all selected windows of one tile, max-pool, score the center crop,
// and (optionally) backpropagate through the per-pixel argmax routing.
SampleResult run_sample(const ModelParams& params, const TrainTile& tile,
                        const std::vector<int>& window_positions, AugmentTag tag,
                        const TransferConfig& config, std::uint64_t dropout_seed_base,
                        bool training, bool want_grad) {
    detail::Engine<float> engine(params);
    std::vector<WindowTensor> tensors;
    tensors.reserve(window_positions.size());
    for (int pos : window_positions)
        tensors.push_back(extract_window(tile.seq, tile.windows.windows[pos]));
    Grid label = tile.label;
    if (tag.index() != 0) augment_sample(tensors, label, tag);

    const int n = int(tensors.size());
    std::vector<detail::Engine<float>::Cache> caches(want_grad ? n : 0);
    std::vector<Grid> preds(n);
    for (int w = 0; w < n; ++w) {
        std::vector<float> out;
        engine.forward(tensors[w], training, mix_seed(dropout_seed_base, std::uint64_t(w)), out,
                       want_grad ? &caches[w] : nullptr);
        preds[w] = Grid(tensors[w].rows, tensors[w].cols);
        preds[w].v = std::move(out);
    }

    PooledPrediction pooled = max_pool_with_source(preds);
    const LossValue loss = tanimoto_complement_loss(
        crop_center(pooled.pooled, config.center_crop, config.center_crop),
        crop_center(label, config.center_crop, config.center_crop));

    SampleResult result;
    result.loss = loss.loss;
    if (!want_grad) return result;

    const Grid full_grad = embed_center(loss.grad, pooled.pooled.rows, pooled.pooled.cols);
    // route the pooled gradient to each pixel's winning window
    std::vector<std::vector<float>> routed(n);
    std::vector<bool> touched(n, false);
    for (std::size_t p = 0; p < full_grad.v.size(); ++p) {
        if (full_grad.v[p] == 0.0f) continue;
        const int w = pooled.source[p];
        if (routed[w].empty()) routed[w].assign(full_grad.v.size(), 0.0f);
        routed[w][p] = full_grad.v[p];
        touched[w] = true;
    }

    detail::NetWeights<float> grads;
    grads.allocate(params.arch);
    for (int w = 0; w < n; ++w) {
        if (!touched[w]) continue;
        engine.backward(tensors[w], caches[w], routed[w], grads);
    }
    grads.store_flat(result.grad);
    return result;
}

double mean_or_zero(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / double(xs.size());
}

}  // namespace

void sgd_update(std::span<float> values, std::span<float> velocity,
                std::span<const float> grad, double learning_rate, double momentum) {
    if (values.size() != velocity.size() || values.size() != grad.size())
        fail("optimizer buffer size mismatch");
    const float m = float(momentum), lr = float(learning_rate);
    for (std::size_t i = 0; i < values.size(); ++i) {
        velocity[i] = m * velocity[i] - lr * grad[i];
        values[i] += velocity[i];
    }
}

TrainResult train_variant(const FoldSplit& fold, const std::vector<TrainTile>& tiles,
                          const TransferConfig& config, const ModelDescriptor& arch) {
    auto find_tile = [&](const std::string& id) -> const TrainTile& {
        for (const TrainTile& t : tiles)
            if (t.id == id) return t;
        fail("fold references unknown tile '" + id + "'");
    };
    std::vector<const TrainTile*> train_tiles, val_tiles;
    for (const auto& id : fold.train_ids) train_tiles.push_back(&find_tile(id));
    for (const auto& id : fold.validation_ids) val_tiles.push_back(&find_tile(id));
    if (train_tiles.empty()) fail("fold has no training tiles");
    if (val_tiles.empty()) fail("fold has no validation tiles");
    if (!tiles.empty()) config.validate(tiles[0].label.rows, tiles[0].label.cols);

    const std::uint64_t variant = std::uint64_t(fold.variant);
    ModelParams params = init_params(arch, config.seed);
    std::vector<float> velocity(params.values.size(), 0.0f);

    TrainResult result;
    result.best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        // one (tile, augmentation) sample list per epoch
        struct Sample {
            const TrainTile* tile;
            AugmentTag tag;
        };
        std::vector<Sample> samples;
        if (config.augment == TransferConfig::Augment::Full) {
            for (const TrainTile* t : train_tiles)
                for (int a = 0; a < 16; ++a) samples.push_back({t, AugmentTag::from_index(a)});
        } else {
            for (const TrainTile* t : train_tiles) {
                AugmentTag tag;  // identity
                if (config.augment == TransferConfig::Augment::Random) {
                    Rng rng(mix_seed(config.seed, variant, std::uint64_t(epoch),
                                     fnv1a64(t->id), 0xa06));
                    tag = AugmentTag::from_index(int(rng.uniform_int(0, 15)));
                }
                samples.push_back({t, tag});
            }
        }
        Rng shuffle_rng(mix_seed(config.seed, variant, std::uint64_t(epoch), 0x5f0ff1e));
        shuffle_rng.shuffle(samples);

        std::vector<double> sample_losses;
        for (std::size_t batch0 = 0; batch0 < samples.size(); batch0 += config.batch_size) {
            const std::size_t batch_n =
                std::min<std::size_t>(config.batch_size, samples.size() - batch0);
            std::vector<SampleResult> results(batch_n);
            parallel_for(batch_n, config.threads, [&](std::size_t lo, std::size_t hi) {
                for (std::size_t s = lo; s < hi; ++s) {
                    const Sample& sample = samples[batch0 + s];
                    const std::uint64_t tile_key = fnv1a64(sample.tile->id);
                    const auto positions = select_windows(
                        sample.tile->windows, config,
                        mix_seed(config.seed, variant, std::uint64_t(epoch), tile_key, 0x5e1));
                    results[s] = run_sample(
                        params, *sample.tile, positions, sample.tag, config,
                        mix_seed(config.seed, variant, std::uint64_t(epoch), tile_key,
                                 std::uint64_t(sample.tag.index()), 0xd0),
                        /*training=*/true, /*want_grad=*/true);
                }
            });

            // fixed-order reduction, then one optimizer step
            std::vector<double> grad_sum(params.values.size(), 0.0);
            for (const SampleResult& r : results) {
                sample_losses.push_back(r.loss);
                if (!std::isfinite(r.loss))
                    fail("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
                for (std::size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += r.grad[i];
            }
            std::vector<float> grad_mean(params.values.size());
            const double scale = 1.0 / double(batch_n);
            for (std::size_t i = 0; i < grad_mean.size(); ++i)
                grad_mean[i] = float(grad_sum[i] * scale);
            sgd_update(params.values, velocity, grad_mean, config.learning_rate,
                       config.momentum);
        }

        std::vector<double> val_losses(val_tiles.size());
        parallel_for(val_tiles.size(), config.threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t v = lo; v < hi; ++v) {
                const TrainTile* tile = val_tiles[v];
                // fixed seeded selection per validation tile, constant across epochs
                const auto positions = select_windows(
                    tile->windows, config, mix_seed(config.seed, fnv1a64(tile->id), 0x7a1));
                val_losses[v] = run_sample(params, *tile, positions, AugmentTag{}, config, 0,
                                           /*training=*/false, /*want_grad=*/false)
                                    .loss;
            }
        });

        EpochPoint point;
        point.epoch = epoch;
        point.train_loss = mean_or_zero(sample_losses);
        point.val_loss = mean_or_zero(val_losses);
        result.trace.push_back(point);
        if (!std::isfinite(point.val_loss))
            fail("training diverged (non-finite validation loss) at epoch " +
                 std::to_string(epoch));
        if (point.val_loss < best_val) {
            best_val = point.val_loss;
            result.best = params;
            result.best_epoch = epoch;
        }
    }
    result.last = std::move(params);
    return result;
}

void write_trace_csv(const std::vector<EpochPoint>& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << "epoch,train_loss,val_loss\n";
    for (const EpochPoint& p : trace) {
        char line[96];
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", p.epoch, p.train_loss, p.val_loss);
        out << line;
    }
}

}  // namespace deltamon
