#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deltamon/ensemble.hpp"
#include "deltamon/transfer.hpp"

namespace deltamon {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::int64_t total() const { return tp + fp + tn + fn; }
};

/// Pixel is predicted positive iff pred >= threshold.
ConfusionCounts confusion_at(std::span<const float> pred, std::span<const float> label,
                             double threshold);

double cohen_kappa(const ConfusionCounts& c);

struct CurvePoint {
    double x = 0.0;  // ROC: fpr, PR: recall, KAPPA: threshold
    double y = 0.0;  // ROC: tpr, PR: precision, KAPPA: kappa
};

struct MetricsCurve {
    enum class Kind { Roc, Pr, Kappa };
    Kind kind = Kind::Roc;
    std::vector<CurvePoint> points;
    std::optional<double> auc;
};

/// ROC over all distinct score thresholds plus endpoints; trapezoidal AUC.
/// Requires at least one positive and one negative pixel.
MetricsCurve roc_curve(std::span<const float> scores, std::span<const float> labels);

/// Precision/recall over all distinct thresholds, anchored at the
/// zero-prediction convention (recall 0, precision 1); trapezoidal AUC over
/// recall. Requires at least one positive pixel.
MetricsCurve pr_curve(std::span<const float> scores, std::span<const float> labels);

std::vector<double> default_kappa_thresholds();  // 101 points over [0, 1]
MetricsCurve kappa_sweep(std::span<const float> scores, std::span<const float> labels,
                         std::span<const double> thresholds);

struct DatasetMetrics {
    std::string model;
    std::string dataset;
    double roc_auc = 0.0;
    double pr_auc = 0.0;
    double kappa_max = 0.0;
    double kappa_argmax = 0.0;
    MetricsCurve roc, pr, kappa;
};

/// Pools center-cropped pixels of matching (model, tile) pairs across tiles
/// (micro-averaging) before computing the curves. Tiles listed in `exclude`
/// (ids "y:x") are dropped.
DatasetMetrics score_dataset(const std::vector<VariantPrediction>& preds,
                             const std::vector<LabeledTile>& labels, const std::string& model,
                             const std::string& dataset, int crop,
                             const std::vector<std::string>& exclude = {});

void write_curve_csv(const MetricsCurve& curve, const std::filesystem::path& path);
void write_metrics_json(const std::vector<DatasetMetrics>& metrics,
                        const std::filesystem::path& path);

}  // namespace deltamon
