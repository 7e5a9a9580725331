#include "cdul/metrics.hpp"

#include "cdul/error.hpp"
#include "cdul/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace cdul {

PrecisionRecallCurve precision_recall_curve(std::span<const double> scores,
                                            std::span<const std::uint8_t> targets) {
    if (scores.size() != targets.size())
        fail(ErrorKind::internal, "scores/targets length mismatch");
    const size_t n = scores.size();
    double total_pos = 0;
    for (std::uint8_t t : targets) {
        if (t > 1) fail(ErrorKind::internal, "targets must be 0/1");
        total_pos += t;
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    PrecisionRecallCurve curve;
    double tp = 0, fp = 0;
    size_t i = 0;
    while (i < n) {
        double threshold = scores[order[i]];
        // group tied scores into a single threshold step
        while (i < n && scores[order[i]] == threshold) {
            if (targets[order[i]] != 0) tp += 1;
            else fp += 1;
            ++i;
        }
        curve.thresholds.push_back(threshold);
        curve.precision.push_back(tp / (tp + fp));
        curve.recall.push_back(total_pos > 0 ? tp / total_pos : 0.0);
    }
    return curve;
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> targets) {
    bool has_positive = std::any_of(targets.begin(), targets.end(),
                                    [](std::uint8_t t) { return t != 0; });
    if (!has_positive) return std::nullopt;
    for (double s : scores)
        if (!std::isfinite(s)) fail(ErrorKind::numeric, "non-finite score in average_precision");

    PrecisionRecallCurve curve = precision_recall_curve(scores, targets);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t k = 0; k < curve.thresholds.size(); ++k) {
        ap += (curve.recall[k] - prev_recall) * curve.precision[k];
        prev_recall = curve.recall[k];
    }
    return ap;
}

ClasswiseReport mean_average_precision(const Matrix& scores, const Matrix& targets,
                                       const ClassVocabulary& vocab) {
    if (!scores.same_shape(targets))
        fail(ErrorKind::internal, "score/target matrix shape mismatch");
    if (scores.cols != vocab.size())
        fail(ErrorKind::internal, "matrix columns do not match vocabulary size");

    const int n_classes = scores.cols;
    const int n_samples = scores.rows;
    std::vector<std::optional<double>> aps(static_cast<size_t>(n_classes));

    par::for_each_index(n_classes, [&](std::int64_t c) {
        std::vector<double> column(static_cast<size_t>(n_samples));
        std::vector<std::uint8_t> column_targets(static_cast<size_t>(n_samples));
        for (int r = 0; r < n_samples; ++r) {
            column[static_cast<size_t>(r)] = scores.at(r, static_cast<int>(c));
            double t = targets.at(r, static_cast<int>(c));
            if (t != 0.0 && t != 1.0) fail(ErrorKind::internal, "targets must be 0/1");
            column_targets[static_cast<size_t>(r)] = static_cast<std::uint8_t>(t);
        }
        aps[static_cast<size_t>(c)] = average_precision(column, column_targets);
    });

    ClasswiseReport report;
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < n_classes; ++c) {
        const auto& ap = aps[static_cast<size_t>(c)];
        if (ap.has_value()) {
            report.per_class.emplace_back(vocab.names[static_cast<size_t>(c)], *ap);
            sum += *ap;
            ++counted;
        } else {
            report.excluded.push_back(vocab.names[static_cast<size_t>(c)]);
        }
    }
    if (counted == 0) fail(ErrorKind::data, "no class has a positive target; mAP undefined");
    report.map = sum / counted;
    return report;
}

double macro_map(const Matrix& scores, const Matrix& targets, const ClassVocabulary& vocab) {
    return mean_average_precision(scores, targets, vocab).map;
}

std::string ClasswiseReport::to_json_string() const {
    nlohmann::ordered_json j;
    j["map"] = map;
    nlohmann::ordered_json pc = nlohmann::ordered_json::object();
    for (const auto& [name, ap] : per_class) pc[name] = ap;
    j["per_class"] = std::move(pc);
    j["excluded"] = excluded;
    return j.dump(2) + "\n";
}

Matrix targets_from_manifest(const DatasetManifest& manifest) {
    Matrix targets(static_cast<int>(manifest.samples.size()), manifest.vocabulary.size());
    for (int r = 0; r < targets.rows; ++r) {
        const auto& gt = manifest.samples[static_cast<size_t>(r)].ground_truth;
        for (int c = 0; c < targets.cols; ++c) targets.at(r, c) = gt[static_cast<size_t>(c)];
    }
    return targets;
}

} // namespace cdul
