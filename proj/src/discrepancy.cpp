#include "skrr/discrepancy.hpp"

#include <cmath>

namespace skrr {

std::string to_string(Metric metric)
{
    return metric == Metric::Mse ? "mse" : "cos";
}

Metric parse_metric(const std::string& text)
{
    if (text == "mse") {
        return Metric::Mse;
    }
    if (text == "cos" || text == "cosine") {
        return Metric::Cosine;
    }
    throw Error("unknown metric '" + text + "' (expected mse or cos)");
}

Matrix project(const ModelPackage& pkg, const Matrix& hidden)
{
    if (hidden.cols() != pkg.config.d_model) {
        throw ShapeError("project: hidden has " + std::to_string(hidden.cols()) + " columns, expected d_model "
                         + std::to_string(pkg.config.d_model));
    }
    return matmul(hidden, pkg.projection);
}

double metric1(const Matrix& f_dense, const Matrix& f_skip)
{
    if (f_dense.rows() != f_skip.rows() || f_dense.cols() != f_skip.cols()) {
        throw ShapeError("metric1: shape mismatch " + shape_of(f_dense) + " vs " + shape_of(f_skip));
    }
    if (squared_norm(f_dense) == 0.0 || squared_norm(f_skip) == 0.0) {
        throw UndefinedMetric("cosine discrepancy is undefined for a zero feature");
    }
    return std::clamp(1.0 - flat_cosine(f_dense, f_skip), 0.0, 2.0);
}

double metric2(const Matrix& f_dense, const Matrix& f_skip)
{
    if (f_dense.rows() != f_skip.rows() || f_dense.cols() != f_skip.cols()) {
        throw ShapeError("metric2: shape mismatch " + shape_of(f_dense) + " vs " + shape_of(f_skip));
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < f_dense.size(); ++i) {
        const double d = static_cast<double>(f_dense.data()[i]) - static_cast<double>(f_skip.data()[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(f_dense.size());
}

double apply_metric(Metric metric, const Matrix& f_dense, const Matrix& f_skip)
{
    return metric == Metric::Mse ? metric2(f_dense, f_skip) : metric1(f_dense, f_skip);
}

DiscrepancyEvaluator::DiscrepancyEvaluator(const ModelPackage& pkg, const CalibrationSet& calib,
                                           DiscrepancyOptions opts)
    : pkg_(&pkg), calib_(&calib), opts_(opts)
{
    if (calib.empty()) {
        throw Error("calibration set is empty");
    }
    validate_calibration(pkg.config, calib);
    const std::size_t inputs = calib.size() + 1;
    dense_stages_.resize(inputs);
    dense_features_.reserve(inputs);
    for (std::size_t s = 0; s < inputs; ++s) {
        Matrix h = run_stack(pkg, embed(pkg, tokens_of(s)), {}, 0, &dense_stages_[s]);
        Matrix normed = final_norm(pkg, h);
        dense_features_.push_back(opts_.use_projection ? project(pkg, normed) : std::move(normed));
    }
}

const std::vector<int>& DiscrepancyEvaluator::tokens_of(std::size_t input) const
{
    return input < calib_->size() ? calib_->sequences[input] : pkg_->null_tokens;
}

Matrix DiscrepancyEvaluator::feature_of(std::size_t input, const ExecutionPlan& plan) const
{
    const int n = pkg_->config.num_sub_blocks();
    const int start = plan.first_modified(n);
    if (start >= n) {
        return dense_features_[input];
    }
    // Everything before the first modified sub-block matches the dense pass.
    Matrix normed = final_norm(*pkg_, run_stack(*pkg_, dense_stages_[input][static_cast<std::size_t>(start)], plan, start));
    return opts_.use_projection ? project(*pkg_, normed) : normed;
}

std::vector<Matrix> DiscrepancyEvaluator::features(const ExecutionPlan& plan) const
{
    validate_plan(pkg_->config, plan);
    std::vector<Matrix> out;
    out.reserve(calib_->size() + 1);
    for (std::size_t s = 0; s <= calib_->size(); ++s) {
        out.push_back(feature_of(s, plan));
    }
    return out;
}

DiscrepancyBreakdown DiscrepancyEvaluator::evaluate(const ExecutionPlan& plan) const
{
    validate_plan(pkg_->config, plan);
    DiscrepancyBreakdown out;
    double acc = 0.0;
    for (std::size_t s = 0; s < calib_->size(); ++s) {
        acc += apply_metric(opts_.metric, dense_features_[s], feature_of(s, plan));
    }
    out.d_fc = acc / static_cast<double>(calib_->size());
    if (opts_.include_null) {
        const std::size_t null_input = calib_->size();
        out.d_fnull = apply_metric(opts_.metric, dense_features_[null_input], feature_of(null_input, plan));
    }
    out.total = out.d_fc + out.d_fnull;
    return out;
}

DiscrepancyBreakdown get_discrepancy(const ModelPackage& pkg, const ExecutionPlan& plan, const CalibrationSet& calib,
                                     const DiscrepancyOptions& opts)
{
    return DiscrepancyEvaluator(pkg, calib, opts).evaluate(plan);
}

} // namespace skrr
