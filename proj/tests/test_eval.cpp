#include <algorithm>

#include "deltamon/eval.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace deltamon;

namespace {

// Rank-statistic oracle for the ROC area: wins plus half-ties over all
// positive/negative pairs.
double pair_count_auc(std::span<const float> scores, std::span<const float> labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0.0f) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0.0f) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / double(pairs);
}

}  // namespace

TEST_CASE("confusion counts") {
    SUBCASE("threshold zero marks everything positive") {
        const std::vector<float> pred{0.2f, 0.9f, 0.4f, 0.7f};
        const std::vector<float> label{0.0f, 1.0f, 1.0f, 0.0f};
        const ConfusionCounts c = confusion_at(pred, label, 0.0);
        CHECK(c.tp + c.fp == 4);
        CHECK(c.tn == 0);
        CHECK(c.fn == 0);
    }
    SUBCASE("a binary prediction equal to the label is perfect at one half") {
        const std::vector<float> label{0.0f, 1.0f, 1.0f, 0.0f, 1.0f};
        const ConfusionCounts c = confusion_at(label, label, 0.5);
        CHECK(c.fp == 0);
        CHECK(c.fn == 0);
        CHECK(c.tp == 3);
        CHECK(c.tn == 2);
    }
    SUBCASE("random instances match a per-pixel enumeration") {
        Rng rng(31);
        for (int iter = 0; iter < 50; ++iter) {
            std::vector<float> pred(16), label(16);
            for (auto& v : pred) v = float(rng.uniform());
            for (auto& v : label) v = float(rng.uniform() < 0.5);
            const double thr = rng.uniform();
            const ConfusionCounts c = confusion_at(pred, label, thr);
            std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
            for (int i = 0; i < 16; ++i) {
                const bool hit = pred[i] >= thr, pos = label[i] != 0.0f;
                tp += hit && pos;
                fp += hit && !pos;
                fn += !hit && pos;
                tn += !hit && !pos;
            }
            REQUIRE(c.tp == tp);
            REQUIRE(c.fp == fp);
            REQUIRE(c.tn == tn);
            REQUIRE(c.fn == fn);
        }
    }
}

TEST_CASE("roc curves") {
    SUBCASE("perfect separation scores area one") {
        const std::vector<float> s{0.9f, 0.8f, 0.2f, 0.1f};
        const std::vector<float> l{1.0f, 1.0f, 0.0f, 0.0f};
        CHECK(*roc_curve(s, l).auc == doctest::Approx(1.0));
    }
    SUBCASE("constant scores give the chance diagonal") {
        const std::vector<float> s{0.5f, 0.5f, 0.5f, 0.5f};
        const std::vector<float> l{1.0f, 0.0f, 1.0f, 0.0f};
        CHECK(*roc_curve(s, l).auc == doctest::Approx(0.5));
    }
    SUBCASE("the documented four-pixel case scores 0.75") {
        const std::vector<float> s{0.1f, 0.4f, 0.35f, 0.8f};
        const std::vector<float> l{0.0f, 0.0f, 1.0f, 1.0f};
        CHECK(*roc_curve(s, l).auc == doctest::Approx(0.75));
        CHECK(pair_count_auc(s, l) == doctest::Approx(0.75));
    }
    SUBCASE("trapezoidal area equals the rank statistic on random instances") {
        Rng rng(37);
        for (int iter = 0; iter < 100; ++iter) {
            const int n = 5 + int(rng.uniform_int(0, 40));
            std::vector<float> s(n), l(n);
            bool pos = false, neg = false;
            for (int i = 0; i < n; ++i) {
                // quantized scores so ties happen
                s[i] = float(rng.uniform_int(0, 9)) / 9.0f;
                l[i] = float(rng.uniform() < 0.4);
                (l[i] != 0.0f ? pos : neg) = true;
            }
            if (!pos || !neg) {
                --iter;
                continue;
            }
            const MetricsCurve curve = roc_curve(s, l);
            REQUIRE(std::abs(*curve.auc - pair_count_auc(s, l)) <= 1e-12);
            // points stay in the unit square, monotone in both axes
            for (std::size_t i = 0; i < curve.points.size(); ++i) {
                REQUIRE(curve.points[i].x >= 0.0);
                REQUIRE(curve.points[i].x <= 1.0);
                REQUIRE(curve.points[i].y >= 0.0);
                REQUIRE(curve.points[i].y <= 1.0);
                if (i > 0) {
                    REQUIRE(curve.points[i].x >= curve.points[i - 1].x);
                    REQUIRE(curve.points[i].y >= curve.points[i - 1].y);
                }
            }
        }
    }
    SUBCASE("single-class labels are rejected") {
        const std::vector<float> s{0.5f, 0.6f};
        const std::vector<float> l{1.0f, 1.0f};
        CHECK_THROWS_WITH_AS(roc_curve(s, l), doctest::Contains("degenerate"), Error);
    }
}

TEST_CASE("pr curves") {
    SUBCASE("perfect separation scores area one") {
        const std::vector<float> s{0.9f, 0.8f, 0.2f, 0.1f};
        const std::vector<float> l{1.0f, 1.0f, 0.0f, 0.0f};
        CHECK(*pr_curve(s, l).auc == doctest::Approx(1.0));
    }
    SUBCASE("all-positive labels pin precision at one") {
        const std::vector<float> s{0.3f, 0.9f, 0.5f};
        const std::vector<float> l{1.0f, 1.0f, 1.0f};
        const MetricsCurve curve = pr_curve(s, l);
        for (const CurvePoint& p : curve.points) CHECK(p.y == doctest::Approx(1.0));
        CHECK(*curve.auc == doctest::Approx(1.0));
    }
    SUBCASE("the four-pixel case matches threshold enumeration point for point") {
        const std::vector<float> s{0.1f, 0.4f, 0.35f, 0.8f};
        const std::vector<float> l{0.0f, 0.0f, 1.0f, 1.0f};
        const MetricsCurve curve = pr_curve(s, l);
        // oracle: sweep distinct thresholds descending, collect (recall, precision)
        std::vector<float> sorted = s;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        std::vector<CurvePoint> expect{{0.0, 1.0}};
        for (float thr : sorted) {
            const ConfusionCounts c = confusion_at(s, l, thr);
            expect.push_back({double(c.tp) / 2.0, double(c.tp) / double(c.tp + c.fp)});
        }
        REQUIRE(curve.points.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(curve.points[i].x == doctest::Approx(expect[i].x));
            CHECK(curve.points[i].y == doctest::Approx(expect[i].y));
        }
    }
    SUBCASE("no positive pixels is an error") {
        const std::vector<float> s{0.5f, 0.6f};
        const std::vector<float> l{0.0f, 0.0f};
        CHECK_THROWS_AS(pr_curve(s, l), Error);
    }
}

TEST_CASE("kappa") {
    SUBCASE("the documented confusion scores 0.6") {
        CHECK(cohen_kappa(ConfusionCounts{40, 10, 40, 10}) == doctest::Approx(0.6));
    }
    SUBCASE("prediction equal to the label scores 1 at interior thresholds") {
        const std::vector<float> l{1.0f, 0.0f, 1.0f, 0.0f, 0.0f};
        const auto thresholds = default_kappa_thresholds();
        const MetricsCurve curve = kappa_sweep(l, l, thresholds);
        REQUIRE(curve.points.size() == 101);
        CHECK(curve.points[50].y == doctest::Approx(1.0));  // threshold 0.5
        CHECK(curve.points[0].x == doctest::Approx(0.0));
        CHECK(curve.points[100].x == doctest::Approx(1.0));
    }
    SUBCASE("constant predictions score 0 at every threshold") {
        const std::vector<float> s{0.4f, 0.4f, 0.4f, 0.4f};
        const std::vector<float> l{1.0f, 0.0f, 1.0f, 0.0f};
        const MetricsCurve curve = kappa_sweep(s, l, default_kappa_thresholds());
        for (const CurvePoint& p : curve.points) CHECK(p.y == doctest::Approx(0.0));
    }
}

TEST_CASE("dataset scoring pools center-cropped pixels across tiles") {
    // two 6x6 tiles with a 4x4 scored center
    auto tile = [](int row, int col, std::uint64_t seed, const std::string& dataset) {
        LabeledTile t;
        t.tile_row = row;
        t.tile_col = col;
        t.dataset = dataset;
        t.truth = Grid(6, 6);
        Rng rng(seed);
        for (auto& v : t.truth.v) v = float(rng.uniform() < 0.5);
        return t;
    };
    auto pred = [](int row, int col, std::uint64_t seed) {
        VariantPrediction p;
        p.model = "V1";
        p.tile_row = row;
        p.tile_col = col;
        p.raster = Grid(6, 6);
        Rng rng(seed);
        for (auto& v : p.raster.v) v = float(rng.uniform());
        return p;
    };
    std::vector<LabeledTile> labels{tile(0, 0, 1, "testing"), tile(0, 1, 2, "testing"),
                                    tile(1, 0, 3, "trainval")};
    std::vector<VariantPrediction> preds{pred(0, 0, 4), pred(0, 1, 5), pred(1, 0, 6)};

    const DatasetMetrics m = score_dataset(preds, labels, "V1", "testing", 4);
    // concatenation oracle over the two testing tiles
    std::vector<float> ps, ls;
    for (int t = 0; t < 2; ++t) {
        const Grid cp = crop_center(preds[t].raster, 4, 4);
        const Grid cl = crop_center(labels[t].truth, 4, 4);
        ps.insert(ps.end(), cp.v.begin(), cp.v.end());
        ls.insert(ls.end(), cl.v.begin(), cl.v.end());
    }
    CHECK(m.roc_auc == doctest::Approx(*roc_curve(ps, ls).auc).epsilon(1e-12));
    CHECK(m.pr_auc == doctest::Approx(*pr_curve(ps, ls).auc).epsilon(1e-12));

    SUBCASE("tile order in the manifests does not matter") {
        std::vector<VariantPrediction> shuffled{preds[2], preds[1], preds[0]};
        std::vector<LabeledTile> shuffled_labels{labels[1], labels[2], labels[0]};
        const DatasetMetrics m2 = score_dataset(shuffled, shuffled_labels, "V1", "testing", 4);
        CHECK(m2.roc_auc == m.roc_auc);
        CHECK(m2.pr_auc == m.pr_auc);
        CHECK(m2.kappa_max == m.kappa_max);
    }
    SUBCASE("excluding a tile removes exactly its center pixels") {
        const DatasetMetrics m2 =
            score_dataset(preds, labels, "V1", "testing", 4, {"0:1"});
        const Grid cp = crop_center(preds[0].raster, 4, 4);
        const Grid cl = crop_center(labels[0].truth, 4, 4);
        CHECK(m2.roc_auc ==
              doctest::Approx(*roc_curve(cp.v, cl.v).auc).epsilon(1e-12));
    }
    SUBCASE("identical prediction and label max out every metric") {
        std::vector<VariantPrediction> perfect{
            VariantPrediction{"V1", 0, 0, labels[0].truth, 1},
            VariantPrediction{"V1", 0, 1, labels[1].truth, 1}};
        const DatasetMetrics mp = score_dataset(perfect, labels, "V1", "testing", 4);
        CHECK(mp.roc_auc == doctest::Approx(1.0));
        CHECK(mp.kappa_max == doctest::Approx(1.0));
    }
    SUBCASE("missing predictions are an error") {
        CHECK_THROWS_AS(score_dataset(preds, labels, "V9", "testing", 4), Error);
    }
}

TEST_CASE("curve csv export") {
    testsupport::ScratchDir dir("eval_csv");
    const std::vector<float> s{0.9f, 0.2f};
    const std::vector<float> l{1.0f, 0.0f};
    write_curve_csv(roc_curve(s, l), dir.path / "roc.csv");
    std::ifstream in(dir.path / "roc.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "fpr,tpr");
}
