#include <algorithm>

#include "deltamon/ensemble.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace deltamon;
using testsupport::ScratchDir;
using testsupport::reduced_descriptor;

namespace {

Grid random_grid(int rows, int cols, std::uint64_t seed) {
    Grid g(rows, cols);
    Rng rng(seed);
    for (auto& v : g.v) v = float(rng.uniform());
    return g;
}

AssembledSequence random_sequence(int frames, int rows, int cols, std::uint64_t seed) {
    AssembledSequence seq;
    seq.rows = rows;
    seq.cols = cols;
    seq.data.resize(std::size_t(frames) * seq.frame_values());
    Rng rng(seed);
    for (auto& v : seq.data) v = float(rng.uniform());
    for (int f = 0; f < frames; ++f) {
        AssembledFrame meta;
        meta.timestamp = f * 2 * kSecondsPerDay;
        seq.meta.push_back(meta);
    }
    return seq;
}

}  // namespace

TEST_CASE("variant prediction maximizes over windows") {
    ModelDescriptor d = reduced_descriptor();
    d.optical_bands = 13;
    d.sar_bands = 4;
    const ModelParams params = init_params(d, 5);
    const AssembledSequence seq = random_sequence(9, 8, 8, 17);

    SUBCASE("a single window equals the forward output") {
        WindowSet set;
        set.windows.push_back(Window{2, seq.meta[2].timestamp, 4});
        const Grid direct = forward(params, extract_window(seq, set.windows[0]));
        const Grid pred = predict_over_windows(params, seq, set);
        CHECK(pred.v == direct.v);
    }
    SUBCASE("duplicated windows change nothing") {
        WindowSet once, twice;
        once.windows.push_back(Window{0, 0, 5});
        twice.windows = {once.windows[0], once.windows[0]};
        CHECK(predict_over_windows(params, seq, once).v ==
              predict_over_windows(params, seq, twice).v);
    }
    SUBCASE("three windows equal the brute-force per-pixel maximum") {
        WindowSet set;
        set.windows.push_back(Window{0, seq.meta[0].timestamp, 4});
        set.windows.push_back(Window{3, seq.meta[3].timestamp, 5});
        set.windows.push_back(Window{5, seq.meta[5].timestamp, 3});
        const Grid pred = predict_over_windows(params, seq, set);
        std::vector<Grid> each;
        for (const Window& w : set.windows)
            each.push_back(forward(params, extract_window(seq, w)));
        for (std::size_t i = 0; i < pred.v.size(); ++i) {
            float m = each[0].v[i];
            for (const Grid& g : each) m = std::max(m, g.v[i]);
            REQUIRE(pred.v[i] == m);
        }
        // thread count does not change the result
        const Grid threaded = predict_over_windows(params, seq, set, 3);
        CHECK(threaded.v == pred.v);
    }
    SUBCASE("an empty window set is an error") {
        CHECK_THROWS_AS(predict_over_windows(params, seq, WindowSet{}), Error);
    }
}

TEST_CASE("bagged combination") {
    SUBCASE("identical variants pass through") {
        const Grid p = random_grid(6, 6, 3);
        const std::vector<Grid> four(4, p);
        const Grid c = combine_variants(four);
        for (std::size_t i = 0; i < p.v.size(); ++i)
            CHECK(c.v[i] == doctest::Approx(p.v[i]).epsilon(1e-6));
    }
    SUBCASE("a zero pixel in any variant forces a combined zero") {
        Grid a = random_grid(4, 4, 5), b = random_grid(4, 4, 6);
        a.v[7] = 0.0f;
        const Grid c = combine_variants(std::vector<Grid>{a, b});
        CHECK(c.v[7] == 0.0f);
    }
    SUBCASE("the documented four-variant pixel value") {
        Grid a(1, 1, 0.5f), b(1, 1, 0.5f), c(1, 1, 1.0f), d(1, 1, 1.0f);
        const Grid out = combine_variants(std::vector<Grid>{a, b, c, d});
        CHECK(out.v[0] == doctest::Approx(0.70710678).epsilon(1e-6));
    }
    SUBCASE("combined value lies between the per-pixel extremes and is monotone") {
        Rng rng(9);
        std::vector<Grid> variants;
        for (int i = 0; i < 3; ++i) variants.push_back(random_grid(5, 5, rng.bits()));
        const Grid c = combine_variants(variants);
        for (std::size_t i = 0; i < c.v.size(); ++i) {
            float lo = 1.0f, hi = 0.0f;
            for (const Grid& g : variants) {
                lo = std::min(lo, g.v[i]);
                hi = std::max(hi, g.v[i]);
            }
            REQUIRE(c.v[i] >= lo - 1e-6f);
            REQUIRE(c.v[i] <= hi + 1e-6f);
        }
        // permutation invariance
        std::vector<Grid> shuffled{variants[2], variants[0], variants[1]};
        CHECK(combine_variants(shuffled).v == c.v);
        // raising one variant never lowers the combination
        variants[1].v[12] = std::min(1.0f, variants[1].v[12] + 0.3f);
        const Grid raised = combine_variants(variants);
        for (std::size_t i = 0; i < c.v.size(); ++i) REQUIRE(raised.v[i] >= c.v[i] - 1e-7f);
    }
    SUBCASE("shape mismatches and empty input are errors") {
        std::vector<Grid> bad{Grid(2, 2, 0.5f), Grid(3, 3, 0.5f)};
        CHECK_THROWS_AS(combine_variants(bad), Error);
        CHECK_THROWS_AS(combine_variants(std::vector<Grid>{}), Error);
    }
}

TEST_CASE("prediction manifests round trip") {
    ScratchDir dir("pred_io");
    std::vector<VariantPrediction> preds;
    preds.push_back(VariantPrediction{"V1", 0, 1, random_grid(4, 4, 11), 7});
    preds.push_back(VariantPrediction{"combined", 2, 3, random_grid(4, 4, 12), 7});
    write_predictions(preds, dir.path);
    const auto r = read_predictions(dir.path);
    REQUIRE(r.size() == 2);
    CHECK(r[0].model == "V1");
    CHECK(r[0].tile_row == 0);
    CHECK(r[0].tile_col == 1);
    CHECK(r[0].raster.v == preds[0].raster.v);
    CHECK(r[1].model == "combined");
    CHECK(r[1].window_count == 7);
}
