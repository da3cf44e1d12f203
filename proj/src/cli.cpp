#include "deltamon/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "deltamon/ablation.hpp"
#include "deltamon/eval.hpp"
#include "deltamon/synth.hpp"

namespace deltamon::cli {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "deltamon 1.0.0 (bundle format 1, checkpoint format 1)";

/// Flat run configuration: JSON file keys mirror the fields one to one and
/// command-line flags override them.
struct RunConfig {
    // paths
    std::string bundle, labels, run_dir, predictions, out, scenario, checkpoint;
    // generic
    std::uint64_t seed = 7;
    int threads = 1;
    // pipeline
    PipelineParams pipeline;
    // transfer
    TransferConfig transfer;
    std::string augment = "full";
    int folds = 4;
    // eval / ablation
    std::string dataset = "testing";
    std::vector<std::string> exclude;
    std::vector<std::string> ablation_deltas = {"120", "600", "inf"};
    std::vector<std::string> ablation_axes = {"sar", "opt", "both"};
    std::vector<std::string> models;

    json resolved() const {
        return json{{"bundle", bundle},
                    {"labels", labels},
                    {"run_dir", run_dir},
                    {"predictions", predictions},
                    {"out", out},
                    {"scenario", scenario},
                    {"checkpoint", checkpoint},
                    {"seed", seed},
                    {"threads", threads},
                    {"delta_days", pipeline.delta_days},
                    {"window_days", pipeline.window_days},
                    {"min_window_obs", pipeline.min_window_obs},
                    {"max_window_obs", pipeline.max_window_obs},
                    {"stride", pipeline.stride},
                    {"tile", pipeline.tile_rows},
                    {"overlap", pipeline.overlap},
                    {"learning_rate", transfer.learning_rate},
                    {"momentum", transfer.momentum},
                    {"epochs", transfer.epochs},
                    {"batch_size", transfer.batch_size},
                    {"windows_per_tile", transfer.windows_per_tile},
                    {"first_window_index", transfer.first_window_index},
                    {"offset_min", transfer.offset_min},
                    {"offset_max", transfer.offset_max},
                    {"center_crop", transfer.center_crop},
                    {"augment", augment},
                    {"folds", folds},
                    {"dataset", dataset},
                    {"exclude", exclude},
                    {"ablation_deltas", ablation_deltas},
                    {"ablation_axes", ablation_axes},
                    {"models", models}};
    }
};

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) fail("missing config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("corrupt config file: " + std::string(e.what()));
    }
    auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("bundle", cfg.bundle);
    get("labels", cfg.labels);
    get("run_dir", cfg.run_dir);
    get("predictions", cfg.predictions);
    get("out", cfg.out);
    get("scenario", cfg.scenario);
    get("checkpoint", cfg.checkpoint);
    get("seed", cfg.seed);
    get("threads", cfg.threads);
    get("delta_days", cfg.pipeline.delta_days);
    get("window_days", cfg.pipeline.window_days);
    get("min_window_obs", cfg.pipeline.min_window_obs);
    get("max_window_obs", cfg.pipeline.max_window_obs);
    get("stride", cfg.pipeline.stride);
    int tile = cfg.pipeline.tile_rows;
    get("tile", tile);
    cfg.pipeline.tile_rows = cfg.pipeline.tile_cols = tile;
    get("overlap", cfg.pipeline.overlap);
    get("learning_rate", cfg.transfer.learning_rate);
    get("momentum", cfg.transfer.momentum);
    get("epochs", cfg.transfer.epochs);
    get("batch_size", cfg.transfer.batch_size);
    get("windows_per_tile", cfg.transfer.windows_per_tile);
    get("first_window_index", cfg.transfer.first_window_index);
    get("offset_min", cfg.transfer.offset_min);
    get("offset_max", cfg.transfer.offset_max);
    get("center_crop", cfg.transfer.center_crop);
    get("augment", cfg.augment);
    get("folds", cfg.folds);
    get("dataset", cfg.dataset);
    get("exclude", cfg.exclude);
    get("ablation_deltas", cfg.ablation_deltas);
    get("ablation_axes", cfg.ablation_axes);
    get("models", cfg.models);
    return cfg;
}

void finalize(RunConfig& cfg) {
    cfg.transfer.seed = cfg.seed;
    cfg.transfer.threads = cfg.threads;
    if (cfg.augment == "none")
        cfg.transfer.augment = TransferConfig::Augment::None;
    else if (cfg.augment == "random")
        cfg.transfer.augment = TransferConfig::Augment::Random;
    else if (cfg.augment == "full")
        cfg.transfer.augment = TransferConfig::Augment::Full;
    else
        fail("augment must be one of none|random|full");
    cfg.pipeline.tile_cols = cfg.pipeline.tile_rows;
    std::fprintf(stderr, "[deltamon] config-hash=%016llx\n",
                 static_cast<unsigned long long>(fnv1a64(cfg.resolved().dump())));
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream out(dir / "config.json");
    if (!out) fail("cannot write config echo in " + dir.string());
    out << cfg.resolved().dump(2) << "\n";
}

std::pair<int, int> parse_tile_id(const std::string& id) {
    const auto colon = id.find(':');
    if (colon == std::string::npos) fail("tile ids use the form Y:X, got '" + id + "'");
    try {
        return {std::stoi(id.substr(0, colon)), std::stoi(id.substr(colon + 1))};
    } catch (const std::exception&) {
        fail("tile ids use the form Y:X, got '" + id + "'");
    }
}

std::optional<int> parse_delta(const std::string& s) {
    if (s == "inf" || s == "INF" || s == "Inf") return std::nullopt;
    try {
        return std::stoi(s);
    } catch (const std::exception&) {
        fail("ablation deltas are day counts or 'inf', got '" + s + "'");
    }
}

struct PreparedScene {
    AssembledSequence assembled;  // normalized
    NormalizationManifest norm;
    std::vector<LabeledTile> labels;
};

// read -> validate -> stack -> assemble -> normalize; the normalization
// manifest is loaded from norm_path when present, else computed and saved.
PreparedScene prepare_scene(const RunConfig& cfg, const std::filesystem::path& norm_path,
                            bool need_labels) {
    if (cfg.bundle.empty()) fail("config key 'bundle' is required");
    PreparedScene scene;
    ObservationSeries series = read_bundle(cfg.bundle);
    const auto findings = validate_series(series);
    if (!findings.empty())
        fail("bundle failed validation: " + findings[0].rule + " (" +
             std::string(mode_name(findings[0].mode)) + " #" +
             std::to_string(findings[0].index) + ")");
    series = temporal_stack(series);
    AssembledSequence assembled = assemble(series, cfg.pipeline);
    if (!norm_path.empty() && std::filesystem::exists(norm_path)) {
        scene.norm = load_normalization(norm_path);
    } else {
        scene.norm = compute_normalization(assembled);
        if (!norm_path.empty()) {
            std::error_code ec;
            std::filesystem::create_directories(norm_path.parent_path(), ec);
            save_normalization(scene.norm, norm_path);
        }
    }
    scene.assembled = normalize(std::move(assembled), scene.norm);
    if (need_labels) {
        if (cfg.labels.empty()) fail("config key 'labels' is required");
        scene.labels = read_labels(cfg.labels);
    }
    return scene;
}

TilePatch patch_for_tile(const RunConfig& cfg, int tile_row, int tile_col) {
    TilePatch p;
    p.tile_row = tile_row;
    p.tile_col = tile_col;
    p.row0 = tile_row * cfg.pipeline.tile_rows;
    p.col0 = tile_col * cfg.pipeline.tile_cols;
    p.rows = cfg.pipeline.tile_rows;
    p.cols = cfg.pipeline.tile_cols;
    return p;
}

std::vector<TrainTile> build_train_tiles(const PreparedScene& scene, const RunConfig& cfg,
                                         const std::string& dataset) {
    std::vector<TrainTile> tiles;
    for (const LabeledTile& label : scene.labels) {
        if (label.dataset != dataset) continue;
        TrainTile t;
        t.id = label.id();
        t.tile_row = label.tile_row;
        t.tile_col = label.tile_col;
        t.label = label.truth;
        t.seq = crop_sequence(scene.assembled, patch_for_tile(cfg, label.tile_row,
                                                              label.tile_col));
        t.windows = build_windows(t.seq, cfg.pipeline);
        t.windows.tile_row = label.tile_row;
        t.windows.tile_col = label.tile_col;
        tiles.push_back(std::move(t));
    }
    if (tiles.empty()) fail("no labeled tiles in dataset '" + dataset + "'");
    return tiles;
}

// --- subcommands ------------------------------------------------------------

int cmd_synth(RunConfig& cfg) {
    if (cfg.out.empty()) fail("synth needs --out");
    const ScenarioSpec spec =
        cfg.scenario.empty() ? default_scenario() : scenario_from_json_file(cfg.scenario);
    const ObservationSeries series = generate_scene(spec, cfg.seed);
    write_bundle(series, cfg.out);
    const auto labels =
        generate_labels(spec, 0, spec.duration_days, cfg.pipeline.tile_rows);
    write_labels(labels, cfg.out);
    scenario_to_json_file(spec, std::filesystem::path(cfg.out) / "scenario.json");
    echo_config(cfg, cfg.out);
    std::printf("bundle with %zu observations and %zu labeled tiles written to %s\n",
                series.total_observations(), labels.size(), cfg.out.c_str());
    return 0;
}

int cmd_stack(RunConfig& cfg) {
    if (cfg.bundle.empty() || cfg.out.empty()) fail("stack needs --bundle and --out");
    const ObservationSeries series = read_bundle(cfg.bundle);
    write_bundle(temporal_stack(series), cfg.out);
    std::printf("stacked bundle written to %s\n", cfg.out.c_str());
    return 0;
}

int cmd_windows(RunConfig& cfg) {
    if (cfg.out.empty()) fail("windows needs --out");
    PreparedScene scene = prepare_scene(cfg, "", /*need_labels=*/false);
    const TileGrid grid =
        training_tiles(scene.assembled.rows, scene.assembled.cols, cfg.pipeline);
    json report = json::array();
    for (const TilePatch& patch : grid.patches) {
        const AssembledSequence tile_seq = crop_sequence(scene.assembled, patch);
        const WindowSet set = build_windows(tile_seq, cfg.pipeline);
        json starts = json::array();
        int min_obs = 0, max_obs = 0;
        for (const Window& w : set.windows) {
            starts.push_back(json{{"start_index", w.start_index},
                                  {"start", format_utc(w.start_time)},
                                  {"frames", w.count}});
            min_obs = min_obs == 0 ? w.count : std::min(min_obs, w.count);
            max_obs = std::max(max_obs, w.count);
        }
        report.push_back(json{{"tile_y", patch.tile_row},
                              {"tile_x", patch.tile_col},
                              {"window_count", set.windows.size()},
                              {"min_frames", min_obs},
                              {"max_frames", max_obs},
                              {"windows", std::move(starts)}});
    }
    std::ofstream out(cfg.out);
    if (!out) fail("cannot write " + cfg.out);
    out << report.dump(2) << "\n";
    std::printf("window report for %zu tiles written to %s\n", grid.patches.size(),
                cfg.out.c_str());
    return 0;
}

int cmd_transfer(RunConfig& cfg, int variant) {
    if (cfg.run_dir.empty()) fail("transfer needs --run-dir");
    const std::filesystem::path run_dir(cfg.run_dir);
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    PreparedScene scene =
        prepare_scene(cfg, run_dir / "normalization.json", /*need_labels=*/true);
    const std::vector<TrainTile> tiles = build_train_tiles(scene, cfg, "trainval");

    std::vector<std::string> tile_ids;
    for (const TrainTile& t : tiles) tile_ids.push_back(t.id);
    std::vector<FoldSplit> folds;
    if (std::filesystem::exists(run_dir / "folds.json")) {
        folds = load_folds(run_dir / "folds.json");
    } else {
        folds = make_folds(tile_ids, cfg.folds, cfg.seed);
        save_folds(folds, run_dir / "folds.json");
    }
    if (variant < 1 || variant > int(folds.size()))
        fail("variant must be in [1, " + std::to_string(folds.size()) + "]");

    const ModelDescriptor arch;  // default topology
    const TrainResult result = train_variant(folds[variant - 1], tiles, cfg.transfer, arch);
    const std::string tag = "V" + std::to_string(variant);
    save_checkpoint(result.best, run_dir / (tag + "_best"));
    save_checkpoint(result.last, run_dir / (tag + "_last"));
    write_trace_csv(result.trace, run_dir / (tag + "_trace.csv"));
    echo_config(cfg, run_dir);
    std::printf("%s: best epoch %d (val loss %.6f), checkpoints in %s\n", tag.c_str(),
                result.best_epoch, result.trace[result.best_epoch - 1].val_loss,
                cfg.run_dir.c_str());
    return 0;
}

int cmd_predict(RunConfig& cfg, const std::string& model_name, bool mosaic_out,
                int mosaic_tile, int mosaic_overlap) {
    if (cfg.checkpoint.empty() || cfg.out.empty()) fail("predict needs --checkpoint and --out");
    if (cfg.labels.empty() && !mosaic_out)
        fail("predict needs --labels (tile predictions) or --mosaic");
    const ModelParams params = load_checkpoint(cfg.checkpoint);
    const std::filesystem::path norm_path =
        cfg.run_dir.empty() ? std::filesystem::path()
                            : std::filesystem::path(cfg.run_dir) / "normalization.json";
    PreparedScene scene = prepare_scene(cfg, norm_path, /*need_labels=*/!cfg.labels.empty());

    std::vector<VariantPrediction> preds;
    if (!cfg.labels.empty()) {
        for (const LabeledTile& label : scene.labels) {
            if (cfg.dataset != "all" && label.dataset != cfg.dataset) continue;
            const AssembledSequence tile_seq = crop_sequence(
                scene.assembled, patch_for_tile(cfg, label.tile_row, label.tile_col));
            WindowSet windows = build_windows(tile_seq, cfg.pipeline);
            preds.push_back(VariantPrediction{
                model_name, label.tile_row, label.tile_col,
                predict_over_windows(params, tile_seq, windows, cfg.threads),
                int(windows.windows.size())});
        }
    }
    if (mosaic_out) {
        const TileGrid grid =
            inference_tiles(scene.assembled.rows, scene.assembled.cols, mosaic_tile,
                            mosaic_overlap);
        std::vector<Grid> tiles;
        for (const TilePatch& patch : grid.patches) {
            const AssembledSequence tile_seq = crop_sequence(scene.assembled, patch);
            WindowSet windows = build_windows(tile_seq, cfg.pipeline);
            tiles.push_back(predict_over_windows(params, tile_seq, windows, cfg.threads));
        }
        const Grid full = mosaic(grid, tiles);
        std::error_code ec2;
        std::filesystem::create_directories(cfg.out, ec2);
        write_f32(std::filesystem::path(cfg.out) / (model_name + "_mosaic.f32"), full.v);
        std::ofstream meta(std::filesystem::path(cfg.out) / (model_name + "_mosaic.json"));
        meta << json{{"model", model_name}, {"rows", full.rows}, {"cols", full.cols}}.dump(2)
             << "\n";
    }
    if (!preds.empty()) write_predictions(preds, cfg.out);
    std::printf("%zu tile predictions for %s written to %s\n", preds.size(),
                model_name.c_str(), cfg.out.c_str());
    return 0;
}

int cmd_combine(RunConfig& cfg) {
    if (cfg.predictions.empty() || cfg.out.empty())
        fail("combine needs --predictions and --out");
    std::vector<VariantPrediction> preds = read_predictions(cfg.predictions);
    std::vector<std::string> models = cfg.models;
    if (models.empty()) {
        for (const VariantPrediction& p : preds)
            if (p.model != "combined" &&
                std::find(models.begin(), models.end(), p.model) == models.end())
                models.push_back(p.model);
        std::sort(models.begin(), models.end());
    }
    if (models.empty()) fail("no variant predictions to combine");

    std::vector<VariantPrediction> combined;
    for (const VariantPrediction& first : preds) {
        if (first.model != models[0]) continue;
        std::vector<Grid> rasters;
        for (const std::string& model : models) {
            const VariantPrediction* match = nullptr;
            for (const VariantPrediction& p : preds)
                if (p.model == model && p.tile_row == first.tile_row &&
                    p.tile_col == first.tile_col)
                    match = &p;
            if (!match)
                fail("missing prediction for model '" + model + "' tile " +
                     std::to_string(first.tile_row) + ":" + std::to_string(first.tile_col));
            rasters.push_back(match->raster);
        }
        combined.push_back(VariantPrediction{"combined", first.tile_row, first.tile_col,
                                             combine_variants(rasters), first.window_count});
    }
    std::vector<VariantPrediction> all = std::move(preds);
    all.insert(all.end(), combined.begin(), combined.end());
    write_predictions(all, cfg.out);
    std::printf("combined %zu tiles over {%s} into %s\n", combined.size(),
                [&] {
                    std::string s;
                    for (const auto& m : models) s += (s.empty() ? "" : ",") + m;
                    return s;
                }()
                    .c_str(),
                cfg.out.c_str());
    return 0;
}

int cmd_eval(RunConfig& cfg) {
    if (cfg.predictions.empty() || cfg.labels.empty() || cfg.out.empty())
        fail("eval needs --predictions, --labels and --out");
    const std::vector<VariantPrediction> preds = read_predictions(cfg.predictions);
    const std::vector<LabeledTile> labels = read_labels(cfg.labels);
    std::vector<std::string> models = cfg.models;
    if (models.empty()) {
        for (const VariantPrediction& p : preds)
            if (std::find(models.begin(), models.end(), p.model) == models.end())
                models.push_back(p.model);
        std::sort(models.begin(), models.end());
    }
    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    std::vector<DatasetMetrics> all;
    for (const std::string& model : models) {
        DatasetMetrics m = score_dataset(preds, labels, model, cfg.dataset,
                                         cfg.transfer.center_crop, cfg.exclude);
        const std::filesystem::path base =
            std::filesystem::path(cfg.out) / (model + "_" + cfg.dataset);
        write_curve_csv(m.roc, base.string() + "_roc.csv");
        write_curve_csv(m.pr, base.string() + "_pr.csv");
        write_curve_csv(m.kappa, base.string() + "_kappa.csv");
        all.push_back(std::move(m));
    }
    write_metrics_json(all, std::filesystem::path(cfg.out) / "metrics.json");
    for (const DatasetMetrics& m : all)
        std::printf("%s on %s: ROC AUC %.4f, PR AUC %.4f, kappa max %.4f @ %.2f\n",
                    m.model.c_str(), m.dataset.c_str(), m.roc_auc, m.pr_auc, m.kappa_max,
                    m.kappa_argmax);
    return 0;
}

int cmd_ablate(RunConfig& cfg, const std::vector<std::string>& checkpoints) {
    if (cfg.out.empty()) fail("ablate needs --out");
    if (checkpoints.empty()) fail("ablate needs --checkpoints");
    if (cfg.bundle.empty() || cfg.labels.empty()) fail("ablate needs --bundle and --labels");

    ObservationSeries series = read_bundle(cfg.bundle);
    series = temporal_stack(series);
    const std::filesystem::path norm_path =
        cfg.run_dir.empty() ? std::filesystem::path()
                            : std::filesystem::path(cfg.run_dir) / "normalization.json";
    NormalizationManifest norm;
    if (!norm_path.empty() && std::filesystem::exists(norm_path))
        norm = load_normalization(norm_path);
    else
        norm = compute_normalization(assemble(series, cfg.pipeline));
    const std::vector<LabeledTile> labels = read_labels(cfg.labels);

    AblationInputs in;
    in.stacked = &series;
    in.labels = &labels;
    in.dataset = cfg.dataset;
    in.pipeline = cfg.pipeline;
    in.norm = norm;
    in.crop = cfg.transfer.center_crop;
    in.threads = cfg.threads;
    in.exclude = cfg.exclude;
    for (const std::string& path : checkpoints) {
        std::string name = std::filesystem::path(path).filename().string();
        const auto underscore = name.find('_');
        if (underscore != std::string::npos) name = name.substr(0, underscore);
        in.variants.emplace_back(name, load_checkpoint(path));
    }

    AblationGrid grid;
    for (const std::string& d : cfg.ablation_deltas) grid.delta_days.push_back(parse_delta(d));
    grid.axes = cfg.ablation_axes;
    grid.models = cfg.models;

    const auto rows = run_ablation(grid, in);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    write_ablation_csv(rows, std::filesystem::path(cfg.out) / "ablation.csv");
    std::printf("%zu ablation rows written to %s/ablation.csv\n", rows.size(),
                cfg.out.c_str());
    return 0;
}

int cmd_trace(RunConfig& cfg, const std::vector<std::string>& checkpoints,
              const std::string& tile_id, const std::vector<std::string>& pixel_ids) {
    if (cfg.out.empty()) fail("trace needs --out");
    if (checkpoints.empty()) fail("trace needs --checkpoints");
    if (pixel_ids.empty()) fail("trace needs --pixels");
    const auto [tile_row, tile_col] = parse_tile_id(tile_id);
    const std::filesystem::path norm_path =
        cfg.run_dir.empty() ? std::filesystem::path()
                            : std::filesystem::path(cfg.run_dir) / "normalization.json";
    PreparedScene scene = prepare_scene(cfg, norm_path, /*need_labels=*/false);
    const AssembledSequence tile_seq =
        crop_sequence(scene.assembled, patch_for_tile(cfg, tile_row, tile_col));
    const WindowSet windows = build_windows(tile_seq, cfg.pipeline);
    if (windows.windows.empty()) fail("tile has no windows to trace");

    std::vector<std::pair<int, int>> pixels;
    for (const std::string& id : pixel_ids) {
        const auto [y, x] = parse_tile_id(id);
        if (y < 0 || y >= tile_seq.rows || x < 0 || x >= tile_seq.cols)
            fail("pixel " + id + " outside tile");
        pixels.emplace_back(y, x);
    }

    std::ofstream out(cfg.out);
    if (!out) fail("cannot write " + cfg.out);
    out << "model,pixel_y,pixel_x,window_start,value\n";
    for (const std::string& path : checkpoints) {
        const ModelParams params = load_checkpoint(path);
        std::string name = std::filesystem::path(path).filename().string();
        for (const Window& w : windows.windows) {
            const Grid pred = forward(params, extract_window(tile_seq, w));
            for (const auto& [y, x] : pixels) {
                char line[128];
                std::snprintf(line, sizeof(line), "%s,%d,%d,%s,%.9g\n", name.c_str(), y, x,
                              format_utc(w.start_time).c_str(), double(pred.at(y, x)));
                out << line;
            }
        }
    }
    std::printf("trace of %zu pixels over %zu windows written to %s\n", pixels.size(),
                windows.windows.size(), cfg.out.c_str());
    return 0;
}

int cmd_param_count(const std::string& topology) {
    if (topology != "default") fail("unknown topology '" + topology + "'");
    const ModelDescriptor d;
    std::printf("%zu\n", expected_param_count(d));
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"multi-modal time-series urban-change monitoring"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path;
    RunConfig cfg;
    // pre-scan for --config so flags can override file values
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }

    int variant = 1;
    std::string model_name = "V1", topology = "default", tile_id = "0:0";
    std::vector<std::string> checkpoints, pixel_ids;
    bool mosaic = false;
    int mosaic_tile = 93, mosaic_overlap = 8;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration JSON");
        sub->add_option("--seed", cfg.seed);
        sub->add_option("--threads", cfg.threads);
        sub->add_option("--bundle", cfg.bundle);
        sub->add_option("--labels", cfg.labels);
        sub->add_option("--run-dir", cfg.run_dir);
        sub->add_option("--out", cfg.out);
        sub->add_option("--dataset", cfg.dataset);
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene bundle");
    add_common(synth);
    synth->add_option("--spec", cfg.scenario, "scenario JSON (defaults to the built-in scene)");
    synth->add_option("--tile", cfg.pipeline.tile_rows);

    CLI::App* stack = app.add_subcommand("stack", "temporally stack a bundle");
    add_common(stack);

    CLI::App* windows = app.add_subcommand("windows", "report sliding windows per tile");
    add_common(windows);

    CLI::App* transfer = app.add_subcommand("transfer", "train one transfer variant");
    add_common(transfer);
    transfer->add_option("--variant", variant, "variant number (1-based fold)");
    transfer->add_option("--epochs", cfg.transfer.epochs);
    transfer->add_option("--batch-size", cfg.transfer.batch_size);
    transfer->add_option("--augment", cfg.augment, "none|random|full");
    transfer->add_option("--folds", cfg.folds);
    transfer->add_option("--windows-per-tile", cfg.transfer.windows_per_tile);

    CLI::App* predict = app.add_subcommand("predict", "per-tile max over all windows");
    add_common(predict);
    predict->add_option("--checkpoint", cfg.checkpoint);
    predict->add_option("--model", model_name, "model tag for the manifest");
    predict->add_flag("--mosaic", mosaic, "also export a full-scene mosaic");
    predict->add_option("--mosaic-tile", mosaic_tile);
    predict->add_option("--mosaic-overlap", mosaic_overlap);

    CLI::App* combine = app.add_subcommand("combine", "bagged combination of variants");
    add_common(combine);
    combine->add_option("--predictions", cfg.predictions);
    combine->add_option("--models", cfg.models)->delimiter(',');

    CLI::App* evalc = app.add_subcommand("eval", "threshold-sweep metrics");
    add_common(evalc);
    evalc->add_option("--predictions", cfg.predictions);
    evalc->add_option("--exclude", cfg.exclude)->delimiter(',');
    evalc->add_option("--models", cfg.models)->delimiter(',');

    CLI::App* ablate = app.add_subcommand("ablate", "observation-frequency study");
    add_common(ablate);
    ablate->add_option("--checkpoints", checkpoints)->delimiter(',');
    ablate->add_option("--deltas", cfg.ablation_deltas)->delimiter(',');
    ablate->add_option("--axes", cfg.ablation_axes)->delimiter(',');
    ablate->add_option("--exclude", cfg.exclude)->delimiter(',');

    CLI::App* trace = app.add_subcommand("trace", "per-pixel prediction time series");
    add_common(trace);
    trace->add_option("--checkpoints", checkpoints)->delimiter(',');
    trace->add_option("--tile", tile_id, "tile id Y:X");
    trace->add_option("--pixels", pixel_ids, "pixel list y:x,y:x,...")->delimiter(',');

    CLI::App* pcount = app.add_subcommand("param-count", "print the parameter count");
    pcount->add_option("--topology", topology);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        cfg = load_config(config_path);
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        finalize(cfg);
        if (synth->parsed()) return cmd_synth(cfg);
        if (stack->parsed()) return cmd_stack(cfg);
        if (windows->parsed()) return cmd_windows(cfg);
        if (transfer->parsed()) return cmd_transfer(cfg, variant);
        if (predict->parsed())
            return cmd_predict(cfg, model_name, mosaic, mosaic_tile, mosaic_overlap);
        if (combine->parsed()) return cmd_combine(cfg);
        if (evalc->parsed()) return cmd_eval(cfg);
        if (ablate->parsed()) return cmd_ablate(cfg, checkpoints);
        if (trace->parsed()) return cmd_trace(cfg, checkpoints, tile_id, pixel_ids);
        if (pcount->parsed()) return cmd_param_count(topology);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace deltamon::cli
