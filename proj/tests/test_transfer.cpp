#include <set>

#include "deltamon/transfer.hpp"
#include "doctest.h"
#include "model_engine.hpp"
#include "support.hpp"

using namespace deltamon;
using testsupport::ScratchDir;
using testsupport::reduced_descriptor;

namespace {

std::vector<std::string> numbered_ids(int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back(std::to_string(i / 16) + ":" + std::to_string(i % 16));
    return ids;
}

Grid random_grid(int rows, int cols, std::uint64_t seed, bool binary = false) {
    Grid g(rows, cols);
    Rng rng(seed);
    for (auto& v : g.v) v = binary ? float(rng.uniform() < 0.4) : float(rng.uniform());
    return g;
}

// Small training fixture: 8x8 tiles whose optical bands step up inside the
// "changed" region halfway through the series.
TrainTile make_tile(const std::string& id, int tile_row, int tile_col, bool with_change,
                    std::uint64_t seed) {
    TrainTile t;
    t.id = id;
    t.tile_row = tile_row;
    t.tile_col = tile_col;
    t.label = Grid(8, 8, 0.0f);
    t.seq.rows = 8;
    t.seq.cols = 8;
    const int frames = 12;
    t.seq.data.assign(std::size_t(frames) * t.seq.frame_values(), 0.0f);
    Rng rng(seed);
    Grid region(8, 8, 0.0f);
    if (with_change)
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) {
                region.at(y, x) = 1.0f;
                t.label.at(y, x) = 1.0f;
            }
    for (int f = 0; f < frames; ++f) {
        AssembledFrame meta;
        meta.timestamp = f * 2 * kSecondsPerDay;
        t.seq.meta.push_back(meta);
        for (int b = 0; b < kAssembledBands; ++b) {
            float* plane = t.seq.band(f, b);
            for (int p = 0; p < 64; ++p) {
                const float base = 0.3f + 0.05f * float(rng.uniform());
                const float bump = (f >= frames / 2 && region.v[p] > 0.0f) ? 0.5f : 0.0f;
                plane[p] = base + bump;
            }
        }
    }
    PipelineParams p;
    p.window_days = 10;
    p.min_window_obs = 2;
    p.max_window_obs = 50;
    p.tile_rows = p.tile_cols = 8;
    t.windows = build_windows(t.seq, p);
    return t;
}

TransferConfig tiny_config() {
    TransferConfig c;
    c.learning_rate = 0.05;
    c.epochs = 8;
    c.batch_size = 4;
    c.windows_per_tile = 2;
    c.first_window_index = 0;
    c.offset_min = 3;
    c.offset_max = 5;
    c.center_crop = 6;
    c.augment = TransferConfig::Augment::None;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("fold construction") {
    SUBCASE("164 tiles in 4 folds give validation sizes of 41") {
        const auto folds = make_folds(numbered_ids(164), 4, 9);
        REQUIRE(folds.size() == 4);
        for (const FoldSplit& f : folds) {
            CHECK(f.validation_ids.size() == 41);
            CHECK(f.train_ids.size() == 123);
        }
    }
    SUBCASE("5 tiles in 4 folds split 2,1,1,1") {
        const auto folds = make_folds(numbered_ids(5), 4, 9);
        std::multiset<std::size_t> sizes;
        for (const FoldSplit& f : folds) sizes.insert(f.validation_ids.size());
        CHECK(sizes == std::multiset<std::size_t>{2, 1, 1, 1});
    }
    SUBCASE("validation sets partition the tile set") {
        const auto ids = numbered_ids(23);
        const auto folds = make_folds(ids, 4, 123);
        std::set<std::string> seen;
        for (const FoldSplit& f : folds) {
            for (const auto& id : f.validation_ids) {
                CHECK(seen.insert(id).second);  // pairwise disjoint
            }
            // train and validation together cover everything
            std::set<std::string> all(f.train_ids.begin(), f.train_ids.end());
            all.insert(f.validation_ids.begin(), f.validation_ids.end());
            CHECK(all.size() == ids.size());
        }
        CHECK(seen.size() == ids.size());
    }
    SUBCASE("deterministic given the seed") {
        const auto a = make_folds(numbered_ids(10), 3, 5);
        const auto b = make_folds(numbered_ids(10), 3, 5);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].validation_ids == b[i].validation_ids);
            CHECK(a[i].train_ids == b[i].train_ids);
        }
        const auto c = make_folds(numbered_ids(10), 3, 6);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.size(); ++i)
            any_diff = any_diff || a[i].validation_ids != c[i].validation_ids;
        CHECK(any_diff);
    }
    SUBCASE("too few tiles is an error") {
        CHECK_THROWS_AS(make_folds(numbered_ids(3), 4, 1), Error);
    }
    SUBCASE("folds round trip through disk") {
        ScratchDir dir("folds_io");
        const auto folds = make_folds(numbered_ids(9), 3, 2);
        save_folds(folds, dir.path / "folds.json");
        const auto r = load_folds(dir.path / "folds.json");
        REQUIRE(r.size() == folds.size());
        for (std::size_t i = 0; i < folds.size(); ++i) {
            CHECK(r[i].variant == folds[i].variant);
            CHECK(r[i].train_ids == folds[i].train_ids);
            CHECK(r[i].validation_ids == folds[i].validation_ids);
        }
    }
}

TEST_CASE("window subset selection") {
    WindowSet set;
    for (int i = 0; i < 600; ++i) set.windows.push_back(Window{i, i * 1000, 40});
    TransferConfig config;  // paper defaults: start 21, offsets [40, 49], 10 windows

    SUBCASE("deterministic per seed, offsets within range") {
        const auto a = select_windows(set, config, 42);
        const auto b = select_windows(set, config, 42);
        CHECK(a == b);
        REQUIRE(a.size() == 10);
        CHECK(set.windows[a[0]].start_index == 21);
        for (std::size_t i = 1; i < a.size(); ++i) {
            const int step =
                set.windows[a[i]].start_index - set.windows[a[i - 1]].start_index;
            CHECK(step >= 40);
            CHECK(step <= 49);
        }
        const auto c = select_windows(set, config, 43);
        CHECK(a != c);
    }
    SUBCASE("minimum offsets place the last window at frame 381") {
        TransferConfig fixed = config;
        fixed.offset_min = fixed.offset_max = 40;
        const auto positions = select_windows(set, fixed, 7);
        CHECK(set.windows[positions.back()].start_index == 21 + 9 * 40);
    }
    SUBCASE("short series raises an error naming the requirement") {
        WindowSet small;
        for (int i = 0; i < 100; ++i) small.windows.push_back(Window{i, i * 1000, 40});
        CHECK_THROWS_WITH_AS(select_windows(small, config, 42), doctest::Contains("too short"),
                             Error);
    }
}

TEST_CASE("maximum pooling over time") {
    SUBCASE("single prediction is the identity") {
        std::vector<Grid> preds{random_grid(5, 5, 1)};
        CHECK(max_pool_over_time(preds).v == preds[0].v);
    }
    SUBCASE("a saturated window dominates") {
        std::vector<Grid> preds{random_grid(4, 4, 2), Grid(4, 4, 1.0f)};
        const Grid pooled = max_pool_over_time(preds);
        for (float v : pooled.v) CHECK(v == 1.0f);
    }
    SUBCASE("pooled output dominates every input element-wise") {
        std::vector<Grid> preds;
        for (int i = 0; i < 5; ++i) preds.push_back(random_grid(6, 6, 10 + i));
        const Grid pooled = max_pool_over_time(preds);
        for (const Grid& p : preds)
            for (std::size_t i = 0; i < p.v.size(); ++i) REQUIRE(pooled.v[i] >= p.v[i]);
        // and equals the brute-force elementwise maximum
        for (std::size_t i = 0; i < pooled.v.size(); ++i) {
            float m = preds[0].v[i];
            for (const Grid& p : preds) m = std::max(m, p.v[i]);
            REQUIRE(pooled.v[i] == m);
        }
    }
    SUBCASE("ties route to the lowest window index") {
        std::vector<Grid> preds{Grid(2, 2, 0.7f), Grid(2, 2, 0.7f)};
        const PooledPrediction p = max_pool_with_source(preds);
        for (int s : p.source) CHECK(s == 0);
    }
    SUBCASE("empty input is an error") {
        std::vector<Grid> none;
        CHECK_THROWS_AS(max_pool_over_time(none), Error);
    }
    SUBCASE("perturbing a non-winning window leaves the pooled loss unchanged") {
        std::vector<Grid> preds{random_grid(5, 5, 30), random_grid(5, 5, 31)};
        const PooledPrediction pooled = max_pool_with_source(preds);
        const Grid label = random_grid(5, 5, 32, true);
        const double base = tanimoto_complement_loss(pooled.pooled, label).loss;
        // nudge a pixel of the losing window without crossing the winner
        std::size_t pixel = 7;
        const int loser = pooled.source[pixel] == 0 ? 1 : 0;
        preds[loser].v[pixel] =
            std::min(preds[loser].v[pixel] + 1e-4f, pooled.pooled.v[pixel] - 1e-6f);
        const double after =
            tanimoto_complement_loss(max_pool_over_time(preds), label).loss;
        CHECK(after == base);
    }
}

TEST_CASE("tanimoto loss with complement") {
    SUBCASE("exact match has zero loss") {
        const Grid label = random_grid(6, 6, 40, true);
        const LossValue v = tanimoto_complement_loss(label, label);
        CHECK(v.loss == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("complementary binary rasters have loss one") {
        Grid label = random_grid(6, 6, 41, true);
        label.v[0] = 1.0f;  // keep both classes present
        label.v[1] = 0.0f;
        Grid pred = label;
        for (auto& v : pred.v) v = 1.0f - v;
        const LossValue v = tanimoto_complement_loss(pred, label);
        CHECK(v.loss == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("uniform half prediction against all-ones scores two thirds") {
        const Grid pred(5, 6, 0.5f);
        const Grid label(5, 6, 1.0f);
        const LossValue v = tanimoto_complement_loss(pred, label);
        CHECK(v.loss == doctest::Approx(2.0 / 3.0).epsilon(1e-7));
    }
    SUBCASE("loss lies in the unit interval and is complement symmetric") {
        Rng rng(55);
        for (int i = 0; i < 50; ++i) {
            const Grid pred = random_grid(5, 5, rng.bits());
            const Grid label = random_grid(5, 5, rng.bits(), true);
            const LossValue v = tanimoto_complement_loss(pred, label);
            CHECK(v.loss >= 0.0);
            CHECK(v.loss <= 1.0);
            Grid cpred = pred, clabel = label;
            for (auto& x : cpred.v) x = 1.0f - x;
            for (auto& x : clabel.v) x = 1.0f - x;
            const LossValue c = tanimoto_complement_loss(cpred, clabel);
            CHECK(c.loss == doctest::Approx(v.loss).epsilon(1e-9));
        }
    }
    SUBCASE("gradient matches central finite differences on random 5x5 rasters") {
        Rng rng(60);
        for (int iter = 0; iter < 10; ++iter) {
            Grid pred = random_grid(5, 5, rng.bits());
            const Grid label = random_grid(5, 5, rng.bits(), true);
            const LossValue v = tanimoto_complement_loss(pred, label);
            const double h = 1e-5;
            for (std::size_t i = 0; i < pred.v.size(); i += 3) {
                Grid plus = pred, minus = pred;
                plus.v[i] += float(h);
                minus.v[i] -= float(h);
                const double hp = double(plus.v[i]) - double(pred.v[i]);
                const double hm = double(pred.v[i]) - double(minus.v[i]);
                const double fd = (tanimoto_complement_loss(plus, label).loss -
                                   tanimoto_complement_loss(minus, label).loss) /
                                  (hp + hm);
                const double rel = std::abs(fd - double(v.grad.v[i])) /
                                   std::max(1e-4, std::abs(fd) + std::abs(double(v.grad.v[i])));
                REQUIRE(rel < 1e-4);
            }
        }
    }
    SUBCASE("shape mismatch is an error") {
        CHECK_THROWS_AS(tanimoto_complement_loss(Grid(3, 3), Grid(4, 4)), Error);
    }
}

TEST_CASE("sgd with momentum matches the two-step closed form") {
    std::vector<float> theta{1.0f, -2.0f};
    std::vector<float> velocity{0.0f, 0.0f};
    const std::vector<float> grad{0.5f, -1.5f};
    const double lr = 0.1, m = 0.8;
    sgd_update(theta, velocity, grad, lr, m);
    sgd_update(theta, velocity, grad, lr, m);
    // displacement after two constant-gradient steps: -lr*g*(2+m)
    CHECK(theta[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 2.8).epsilon(1e-6));
    CHECK(theta[1] == doctest::Approx(-2.0 + 0.1 * 1.5 * 2.8).epsilon(1e-6));
}

TEST_CASE("augmentation") {
    SUBCASE("the sixteen tags are distinct and enumerable") {
        std::set<int> seen;
        for (int i = 0; i < 16; ++i) {
            const AugmentTag tag = AugmentTag::from_index(i);
            CHECK(tag.index() == i);
            seen.insert((tag.flip ? 1 : 0) | (tag.quarter_turns << 1) | (tag.comb ? 8 : 0));
        }
        CHECK(seen.size() == 16);
        CHECK_THROWS_AS(AugmentTag::from_index(16), Error);
    }
    SUBCASE("four quarter turns compose to the identity") {
        const Grid g = random_grid(8, 8, 70);
        Grid r = g;
        AugmentTag turn;
        turn.quarter_turns = 1;
        for (int i = 0; i < 4; ++i) r = augment_grid(r, turn);
        CHECK(r.v == g.v);
    }
    SUBCASE("frames and label transform together") {
        WindowTensor w = testsupport::random_window(3, 2, 8, 8, 71);
        Grid label = random_grid(8, 8, 72, true);
        const WindowTensor worig = w;
        const Grid lorig = label;
        std::vector<WindowTensor> windows{w};
        AugmentTag tag;
        tag.flip = true;
        tag.quarter_turns = 3;
        augment_sample(windows, label, tag);
        // pick a pixel and verify the frame value tracks the label pixel
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                // find source pixel by applying the same transform to a probe
                Grid probe(8, 8, 0.0f);
                probe.at(y, x) = 1.0f;
                const Grid moved = augment_grid(probe, tag);
                for (int sy = 0; sy < 8; ++sy)
                    for (int sx = 0; sx < 8; ++sx)
                        if (moved.at(sy, sx) == 1.0f) {
                            CHECK(label.at(sy, sx) == lorig.at(y, x));
                            CHECK(windows[0].frame(1)[std::size_t(8) * sy + sx] ==
                                  worig.frame(1)[std::size_t(8) * y + x]);
                        }
            }
    }
    SUBCASE("the comb filter drops every second valid frame") {
        WindowTensor w = testsupport::random_window(5, 2, 4, 4, 73);
        AugmentTag tag;
        tag.comb = true;
        const WindowTensor combed = augment_window(w, tag);
        REQUIRE(combed.steps == 3);  // frames 0, 2, 4 survive
        CHECK(std::equal(combed.frame(1), combed.frame(1) + combed.frame_values(),
                         w.frame(2)));
    }
}

TEST_CASE("training on a tiny task") {
    std::vector<TrainTile> tiles;
    tiles.push_back(make_tile("0:0", 0, 0, true, 100));
    tiles.push_back(make_tile("0:1", 0, 1, false, 101));
    tiles.push_back(make_tile("1:0", 1, 0, true, 102));
    tiles.push_back(make_tile("1:1", 1, 1, true, 103));
    FoldSplit fold;
    fold.variant = 1;
    fold.train_ids = {"0:0", "0:1", "1:0"};
    fold.validation_ids = {"1:1"};
    const ModelDescriptor arch = reduced_descriptor();

    SUBCASE("zero learning rate leaves the parameters untouched") {
        TransferConfig config = tiny_config();
        config.learning_rate = 0.0;
        config.epochs = 2;
        const TrainResult r = train_variant(fold, tiles, config, arch);
        const ModelParams fresh = init_params(arch, config.seed);
        CHECK(r.last.values == fresh.values);
        CHECK(r.best.values == fresh.values);
    }
    SUBCASE("training reduces the loss and reports the argmin epoch") {
        TransferConfig config = tiny_config();
        const TrainResult r = train_variant(fold, tiles, config, arch);
        REQUIRE(int(r.trace.size()) == config.epochs);
        CHECK(r.trace[r.best_epoch - 1].train_loss < r.trace[0].train_loss);
        int argmin = 1;
        for (const EpochPoint& p : r.trace)
            if (p.val_loss < r.trace[argmin - 1].val_loss) argmin = p.epoch;
        CHECK(r.best_epoch == argmin);
    }
    SUBCASE("thread count does not change the result") {
        TransferConfig config = tiny_config();
        config.epochs = 2;
        const TrainResult serial = train_variant(fold, tiles, config, arch);
        config.threads = 3;
        const TrainResult threaded = train_variant(fold, tiles, config, arch);
        CHECK(serial.last.values == threaded.last.values);
        CHECK(serial.best.values == threaded.best.values);
    }
    SUBCASE("unknown tile ids in the fold are an error") {
        FoldSplit bad = fold;
        bad.train_ids.push_back("9:9");
        CHECK_THROWS_AS(train_variant(bad, tiles, tiny_config(), arch), Error);
    }
}

TEST_CASE("prediction commutes with flips and rotations for symmetric kernels") {
    // generic conv kernels are not rotation-equivariant; symmetrizing every
    // 3x3 kernel over the dihedral group makes the network commute with the
    // augmentation transforms, which checks that augmentation and convolution
    // index conventions agree
    const ModelDescriptor d = reduced_descriptor();
    ModelParams p = init_params(d, 200);
    for (const TensorInfo& t : tensor_table(d)) {
        if (t.shape.size() != 4 || t.shape[3] != 3) continue;
        for (std::size_t k = t.offset; k < t.offset + t.count; k += 9) {
            float* w = p.values.data() + k;
            const auto idx = [](int y, int x) { return y * 3 + x; };
            float sum = 0.0f;
            for (int j = 0; j < 9; ++j) sum += w[j];
            // average over the 8 dihedral transforms equals the mean for the
            // center-symmetric orbit structure of a 3x3 kernel
            const float corner =
                (w[idx(0, 0)] + w[idx(0, 2)] + w[idx(2, 0)] + w[idx(2, 2)]) / 4.0f;
            const float edge =
                (w[idx(0, 1)] + w[idx(1, 0)] + w[idx(1, 2)] + w[idx(2, 1)]) / 4.0f;
            (void)sum;
            w[idx(0, 0)] = w[idx(0, 2)] = w[idx(2, 0)] = w[idx(2, 2)] = corner;
            w[idx(0, 1)] = w[idx(1, 0)] = w[idx(1, 2)] = w[idx(2, 1)] = edge;
        }
    }

    WindowTensor w = testsupport::random_window(3, d.window_bands(), 12, 12, 210);
    Grid label(12, 12, 0.0f);
    for (int i = 0; i < 16; ++i) {
        const AugmentTag tag = AugmentTag::from_index(i);
        std::vector<WindowTensor> windows{w};
        Grid l = label;
        augment_sample(windows, l, tag);
        const Grid direct = forward(p, windows[0]);
        const Grid moved = augment_grid(forward(p, tag.comb ? augment_window(w, AugmentTag{false, 0, true}) : w),
                                        AugmentTag{tag.flip, tag.quarter_turns, false});
        for (int y = 2; y < 10; ++y)
            for (int x = 2; x < 10; ++x)
                REQUIRE(direct.at(y, x) == doctest::Approx(moved.at(y, x)).epsilon(2e-4));
    }
}
