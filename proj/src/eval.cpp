#include "deltamon/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"

namespace deltamon {

using nlohmann::json;

ConfusionCounts confusion_at(std::span<const float> pred, std::span<const float> label,
                             double threshold) {
    if (pred.size() != label.size()) fail("confusion shape mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool hit = double(pred[i]) >= threshold;
        const bool positive = label[i] != 0.0f;
        if (hit && positive)
            ++c.tp;
        else if (hit)
            ++c.fp;
        else if (positive)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double cohen_kappa(const ConfusionCounts& c) {
    const double n = double(c.total());
    if (n == 0) return 0.0;
    const double po = double(c.tp + c.tn) / n;
    const double pe = (double(c.tp + c.fp) * double(c.tp + c.fn) +
                       double(c.fn + c.tn) * double(c.fp + c.tn)) /
                      (n * n);
    if (pe >= 1.0) return 0.0;
    return (po - pe) / (1.0 - pe);
}

namespace {

// Scores grouped by distinct value, descending; cumulative tp/fp per group.
struct RankedCounts {
    std::int64_t positives = 0, negatives = 0;
    std::vector<double> score;      // distinct, descending
    std::vector<std::int64_t> tp;   // cumulative at threshold = score[i]
    std::vector<std::int64_t> fp;
};

RankedCounts rank_scores(std::span<const float> scores, std::span<const float> labels) {
    if (scores.size() != labels.size()) fail("curve shape mismatch");
    if (scores.empty()) fail("curve needs at least one pixel");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RankedCounts r;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const bool positive = labels[order[k]] != 0.0f;
        (positive ? tp : fp) += 1;
        (positive ? r.positives : r.negatives) += 1;
        const bool last_of_group =
            k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]];
        if (last_of_group) {
            r.score.push_back(double(scores[order[k]]));
            r.tp.push_back(tp);
            r.fp.push_back(fp);
        }
    }
    return r;
}

double trapezoid(const std::vector<CurvePoint>& pts) {
    double auc = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        auc += (pts[i].x - pts[i - 1].x) * (pts[i].y + pts[i - 1].y) * 0.5;
    return auc;
}

}  // namespace

MetricsCurve roc_curve(std::span<const float> scores, std::span<const float> labels) {
    const RankedCounts r = rank_scores(scores, labels);
    if (r.positives == 0 || r.negatives == 0) fail("degenerate labels: single class");
    MetricsCurve curve;
    curve.kind = MetricsCurve::Kind::Roc;
    curve.points.push_back({0.0, 0.0});
    for (std::size_t i = 0; i < r.score.size(); ++i)
        curve.points.push_back(
            {double(r.fp[i]) / double(r.negatives), double(r.tp[i]) / double(r.positives)});
    curve.auc = trapezoid(curve.points);
    return curve;
}

MetricsCurve pr_curve(std::span<const float> scores, std::span<const float> labels) {
    const RankedCounts r = rank_scores(scores, labels);
    if (r.positives == 0) fail("no positive pixels for a PR curve");
    MetricsCurve curve;
    curve.kind = MetricsCurve::Kind::Pr;
    curve.points.push_back({0.0, 1.0});  // zero-prediction convention
    for (std::size_t i = 0; i < r.score.size(); ++i) {
        const double recall = double(r.tp[i]) / double(r.positives);
        const double precision = double(r.tp[i]) / double(r.tp[i] + r.fp[i]);
        curve.points.push_back({recall, precision});
    }
    curve.auc = trapezoid(curve.points);
    return curve;
}

std::vector<double> default_kappa_thresholds() {
    std::vector<double> t(101);
    for (int i = 0; i <= 100; ++i) t[i] = double(i) / 100.0;
    return t;
}

MetricsCurve kappa_sweep(std::span<const float> scores, std::span<const float> labels,
                         std::span<const double> thresholds) {
    MetricsCurve curve;
    curve.kind = MetricsCurve::Kind::Kappa;
    for (double t : thresholds)
        curve.points.push_back({t, cohen_kappa(confusion_at(scores, labels, t))});
    return curve;
}

DatasetMetrics score_dataset(const std::vector<VariantPrediction>& preds,
                             const std::vector<LabeledTile>& labels, const std::string& model,
                             const std::string& dataset, int crop,
                             const std::vector<std::string>& exclude) {
    auto excluded = [&](const std::string& id) {
        return std::find(exclude.begin(), exclude.end(), id) != exclude.end();
    };
    // deterministic pooling order regardless of manifest order
    std::map<std::pair<int, int>, const LabeledTile*> wanted;
    for (const LabeledTile& t : labels)
        if (t.dataset == dataset && !excluded(t.id()))
            wanted[{t.tile_row, t.tile_col}] = &t;
    if (wanted.empty()) fail("no labeled tiles for dataset '" + dataset + "'");

    std::vector<float> pooled_scores, pooled_labels;
    std::size_t matched = 0;
    for (const auto& [coord, tile] : wanted) {
        const VariantPrediction* pred = nullptr;
        for (const VariantPrediction& p : preds)
            if (p.model == model && p.tile_row == coord.first && p.tile_col == coord.second)
                pred = &p;
        if (!pred)
            fail("missing prediction for model '" + model + "' tile " + tile->id());
        if (pred->raster.rows != tile->truth.rows || pred->raster.cols != tile->truth.cols)
            fail("prediction/label shape mismatch on tile " + tile->id());
        const Grid ps = crop_center(pred->raster, crop, crop);
        const Grid ls = crop_center(tile->truth, crop, crop);
        pooled_scores.insert(pooled_scores.end(), ps.v.begin(), ps.v.end());
        pooled_labels.insert(pooled_labels.end(), ls.v.begin(), ls.v.end());
        ++matched;
    }
    (void)matched;

    DatasetMetrics m;
    m.model = model;
    m.dataset = dataset;
    m.roc = roc_curve(pooled_scores, pooled_labels);
    m.pr = pr_curve(pooled_scores, pooled_labels);
    const auto thresholds = default_kappa_thresholds();
    m.kappa = kappa_sweep(pooled_scores, pooled_labels, thresholds);
    m.roc_auc = *m.roc.auc;
    m.pr_auc = *m.pr.auc;
    m.kappa_max = -std::numeric_limits<double>::infinity();
    for (const CurvePoint& p : m.kappa.points)
        if (p.y > m.kappa_max) {
            m.kappa_max = p.y;
            m.kappa_argmax = p.x;
        }
    return m;
}

void write_curve_csv(const MetricsCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    switch (curve.kind) {
        case MetricsCurve::Kind::Roc: out << "fpr,tpr\n"; break;
        case MetricsCurve::Kind::Pr: out << "recall,precision\n"; break;
        case MetricsCurve::Kind::Kappa: out << "threshold,kappa\n"; break;
    }
    for (const CurvePoint& p : curve.points) {
        char line[64];
        std::snprintf(line, sizeof(line), "%.9g,%.9g\n", p.x, p.y);
        out << line;
    }
}

void write_metrics_json(const std::vector<DatasetMetrics>& metrics,
                        const std::filesystem::path& path) {
    json j = json::array();
    for (const DatasetMetrics& m : metrics)
        j.push_back(json{{"model", m.model},
                         {"dataset", m.dataset},
                         {"roc_auc", m.roc_auc},
                         {"pr_auc", m.pr_auc},
                         {"kappa_max", m.kappa_max},
                         {"kappa_argmax_threshold", m.kappa_argmax}});
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace deltamon
