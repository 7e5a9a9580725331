#pragma once

#include "cdul/dataset.hpp"
#include "cdul/matrix.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdul {

struct PrecisionRecallCurve {
    std::vector<double> thresholds; // unique scores, descending
    std::vector<double> precision;
    std::vector<double> recall; // non-decreasing
};

PrecisionRecallCurve precision_recall_curve(std::span<const double> scores,
                                            std::span<const std::uint8_t> targets);

// AP = sum_k (R_k - R_{k-1}) * P_k over descending unique-score thresholds;
// tied scores collapse into one step. nullopt when there is no positive
// target (undefined, deliberately distinct from 0).
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> targets);

struct ClasswiseReport {
    double map = 0.0;
    std::vector<std::pair<std::string, double>> per_class; // vocabulary order
    std::vector<std::string> excluded;                     // classes without positives

    std::string to_json_string() const;
};

// scores: samples x classes; targets: same shape, entries 0/1.
// Classes without positives are excluded from the macro mean and listed.
ClasswiseReport mean_average_precision(const Matrix& scores, const Matrix& targets,
                                       const ClassVocabulary& vocab);

// Convenience: just the macro mAP (fraction in [0,1]).
double macro_map(const Matrix& scores, const Matrix& targets, const ClassVocabulary& vocab);

Matrix targets_from_manifest(const DatasetManifest& manifest);

} // namespace cdul
