#pragma once

// Projected-feature discrepancy between the dense encoder and a pruned
// execution plan, over a calibration set plus the null input.

#include "skrr/io.hpp"
#include "skrr/model.hpp"

#include <string>
#include <vector>

namespace skrr {

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

enum class Metric { Mse, Cosine };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& text);

struct DiscrepancyOptions {
    Metric metric = Metric::Mse;
    bool include_null = true;
    bool use_projection = true;

    friend bool operator==(const DiscrepancyOptions&, const DiscrepancyOptions&) = default;
};

struct DiscrepancyBreakdown {
    double d_fc = 0.0;
    double d_fnull = 0.0;
    double total = 0.0;

    friend bool operator==(const DiscrepancyBreakdown&, const DiscrepancyBreakdown&) = default;
};

/// Condition feature: hidden states through the projection layer.
Matrix project(const ModelPackage& pkg, const Matrix& hidden);

/// 1 - cosine of the flattened features, in [0, 2]. Throws UndefinedMetric on a zero input.
double metric1(const Matrix& f_dense, const Matrix& f_skip);

/// Mean squared difference over every entry.
double metric2(const Matrix& f_dense, const Matrix& f_skip);

double apply_metric(Metric metric, const Matrix& f_dense, const Matrix& f_skip);

/// Holds the dense features (and dense hidden states at every stage, for
/// prefix reuse) of one package/calibration pair. Read-only after
/// construction; evaluate() is safe to call from several threads.
class DiscrepancyEvaluator {
public:
    DiscrepancyEvaluator(const ModelPackage& pkg, const CalibrationSet& calib, DiscrepancyOptions opts = {});

    /// Features of `plan` on every calibration sequence followed by the null input.
    [[nodiscard]] std::vector<Matrix> features(const ExecutionPlan& plan) const;

    [[nodiscard]] DiscrepancyBreakdown evaluate(const ExecutionPlan& plan) const;

    [[nodiscard]] const ModelPackage& package() const { return *pkg_; }
    [[nodiscard]] const CalibrationSet& calibration() const { return *calib_; }
    [[nodiscard]] const DiscrepancyOptions& options() const { return opts_; }
    [[nodiscard]] const std::vector<Matrix>& dense_features() const { return dense_features_; }

private:
    [[nodiscard]] Matrix feature_of(std::size_t input, const ExecutionPlan& plan) const;
    [[nodiscard]] const std::vector<int>& tokens_of(std::size_t input) const;

    const ModelPackage* pkg_;
    const CalibrationSet* calib_;
    DiscrepancyOptions opts_;
    // Per input (calibration sequences, then null): dense hidden state
    // entering each sub-block.
    std::vector<std::vector<Matrix>> dense_stages_;
    std::vector<Matrix> dense_features_;
};

/// One-shot version of DiscrepancyEvaluator::evaluate.
DiscrepancyBreakdown get_discrepancy(const ModelPackage& pkg, const ExecutionPlan& plan, const CalibrationSet& calib,
                                     const DiscrepancyOptions& opts = {});

} // namespace skrr
