#include "skrr/analysis.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace skrr {

bool SimilarityMatrix::present(int a, int b) const
{
    return !std::isnan(values(a, b));
}

std::vector<std::vector<Matrix>> dense_stages(const ModelPackage& pkg, const CalibrationSet& calib)
{
    if (calib.empty()) {
        throw Error("calibration set is empty");
    }
    validate_calibration(pkg.config, calib);
    std::vector<std::vector<Matrix>> out(calib.size());
    for (std::size_t s = 0; s < calib.size(); ++s) {
        run_stack(pkg, embed(pkg, calib.sequences[s]), {}, 0, &out[s]);
    }
    return out;
}

double mean_token_cosine(const std::vector<std::vector<Matrix>>& stages, int a, int b)
{
    double acc = 0.0;
    std::int64_t count = 0;
    for (const auto& seq : stages) {
        const Matrix& ha = seq[static_cast<std::size_t>(a)];
        const Matrix& hb = seq[static_cast<std::size_t>(b)];
        for (Eigen::Index t = 0; t < ha.rows(); ++t) {
            if (squared_norm(ha.row(t)) == 0.0 || squared_norm(hb.row(t)) == 0.0) {
                throw UndefinedMetric("zero-norm hidden state at stage " + std::to_string(squared_norm(ha.row(t)) == 0.0 ? a : b));
            }
            acc += flat_cosine(ha.row(t), hb.row(t));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

SimilarityMatrix hidden_similarity_matrix(const ModelPackage& pkg, const CalibrationSet& calib)
{
    const auto stages = dense_stages(pkg, calib);
    const int n = pkg.config.num_sub_blocks() + 1;
    SimilarityMatrix m;
    m.values.resize(n, n);
    for (const auto& seq : stages) {
        m.token_count += seq.front().rows();
    }
    for (int a = 0; a < n; ++a) {
        m.values(a, a) = 1.0;
        for (int b = a + 1; b < n; ++b) {
            m.values(a, b) = m.values(b, a) = mean_token_cosine(stages, a, b);
        }
    }
    return m;
}

SimilarityMatrix block_output_similarity(const ModelPackage& pkg, std::uint64_t seed, int n_tokens)
{
    if (n_tokens < 1) {
        throw Error("block_output_similarity needs n_tokens >= 1");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, pkg.config.vocab_size - 1);
    std::vector<int> tokens(static_cast<std::size_t>(n_tokens));
    for (auto& t : tokens) {
        t = pick(rng);
    }
    const Matrix fixed = embed(pkg, tokens);

    const int n = pkg.config.num_sub_blocks();
    std::vector<Matrix> outputs;
    outputs.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        outputs.push_back(sub_block_forward(pkg, j, fixed));
        if (squared_norm(outputs.back()) == 0.0) {
            throw UndefinedMetric("sub-block " + std::to_string(j) + " produced a zero output on the fixed input");
        }
    }
    SimilarityMatrix m;
    m.token_count = n_tokens;
    m.values = Mat<double>::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    for (int a = 0; a < n; ++a) {
        m.values(a, a) = 1.0;
        for (int b = a + 1; b < n; ++b) {
            if (pkg.config.kind(a) == pkg.config.kind(b)) {
                m.values(a, b) = m.values(b, a)
                    = flat_cosine(outputs[static_cast<std::size_t>(a)], outputs[static_cast<std::size_t>(b)]);
            }
        }
    }
    return m;
}

NullNormEntry null_norm_entry(double dense_norm, double pruned_norm)
{
    return {pruned_norm, pruned_norm / dense_norm};
}

NullNormReport null_norm_report(const ModelPackage& pkg, const std::vector<ExecutionPlan>& plans)
{
    auto null_norm = [&](const ExecutionPlan& plan) {
        return l2_norm(project(pkg, encoder_forward(pkg, pkg.null_tokens, plan)));
    };
    NullNormReport report;
    report.dense_norm = null_norm({});
    for (const auto& plan : plans) {
        report.plans.push_back(null_norm_entry(report.dense_norm, null_norm(plan)));
    }
    return report;
}

Matrix perturb_null(const Matrix& f_null, double lambda, std::uint64_t seed)
{
    if (lambda < 0.0) {
        throw Error("perturbation scale must be >= 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(f_null.rows(), f_null.cols());
    for (Eigen::Index i = 0; i < f_null.size(); ++i) {
        out.data()[i] = static_cast<float>(lambda * normal(rng) + static_cast<double>(f_null.data()[i]));
    }
    return out;
}

std::string similarity_csv(const SimilarityMatrix& m)
{
    std::ostringstream out;
    out.precision(17);
    out << "index";
    for (int b = 0; b < m.size(); ++b) {
        out << ',' << b;
    }
    out << '\n';
    for (int a = 0; a < m.size(); ++a) {
        out << a;
        for (int b = 0; b < m.size(); ++b) {
            out << ',';
            if (m.present(a, b)) {
                out << m.values(a, b);
            }
        }
        out << '\n';
    }
    return out.str();
}

} // namespace skrr
