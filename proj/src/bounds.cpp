#include "skrr/bounds.hpp"

#include "skrr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace skrr {

std::string to_string(LipschitzMethod method)
{
    return method == LipschitzMethod::ExactSpectral ? "EXACT_SPECTRAL" : "EMPIRICAL";
}

LipschitzMethod parse_lipschitz_method(const std::string& text)
{
    if (text == "EXACT_SPECTRAL" || text == "exact") {
        return LipschitzMethod::ExactSpectral;
    }
    if (text == "EMPIRICAL" || text == "empirical") {
        return LipschitzMethod::Empirical;
    }
    throw Error("unknown Lipschitz method '" + text + "' (expected exact or empirical)");
}

SpectralNormResult spectral_norm(const Mat<double>& w, int max_iters, double tol, std::uint64_t seed)
{
    if (w.size() == 0) {
        throw Error("spectral_norm of an empty matrix");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(w.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v[i] = normal(rng);
    }
    v /= v.norm();

    SpectralNormResult out;
    double prev = -1.0;
    for (int it = 1; it <= max_iters; ++it) {
        const Eigen::VectorXd u = w * v;
        out.value = u.norm();
        out.iterations = it;
        if (out.value == 0.0) {
            out.converged = true;
            return out;
        }
        if (prev >= 0.0 && std::abs(out.value - prev) <= tol * out.value) {
            out.converged = true;
            return out;
        }
        prev = out.value;
        const Eigen::VectorXd next = w.transpose() * u;
        const double nn = next.norm();
        if (nn == 0.0) {
            out.converged = true;
            return out;
        }
        v = next / nn;
    }
    return out;
}

SpectralNormResult spectral_norm(const Matrix& w, int max_iters, double tol, std::uint64_t seed)
{
    return spectral_norm(Mat<double>(w.cast<double>()), max_iters, tol, seed);
}

Matrix make_probes(const EncoderConfig& config, int count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0F, 1.0F);
    Matrix probes(count, config.d_model);
    for (Eigen::Index i = 0; i < probes.size(); ++i) {
        probes.data()[i] = normal(rng);
    }
    return probes;
}

namespace {

constexpr int kEmpiricalSeqLen = 4;

Matrix gaussian_like(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<float>(normal(rng));
    }
    return m;
}

double frobenius_diff(const Matrix& a, const Matrix& b)
{
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

LipschitzTable exact_table(const ModelPackage& pkg, const LipschitzOptions& opts, const ExecutionPlan& plan)
{
    if (!pkg.config.linear_stack) {
        throw Error("EXACT_SPECTRAL constants need an all-LINEAR stack; use EMPIRICAL for MHA/FFN models");
    }
    LipschitzTable table;
    table.method = LipschitzMethod::ExactSpectral;
    table.probe_count = opts.probe_budget;
    table.seed = opts.seed;
    const Matrix probes = make_probes(pkg.config, opts.probe_budget, opts.seed);
    std::vector<Matrix> stages;
    run_stack(pkg, probes, plan, 0, &stages);
    for (int i = 0; i < pkg.config.num_sub_blocks(); ++i) {
        LipschitzEntry e;
        e.l_input = spectral_norm(pkg.sub_blocks[static_cast<std::size_t>(i)].w, 1000, 1e-8, opts.seed).value;
        const Matrix& z = stages[static_cast<std::size_t>(i)];
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            e.m_param = std::max(e.m_param, l2_norm(z.row(r)));
        }
        table.entries.push_back(e);
    }
    return table;
}

LipschitzTable empirical_table(const ModelPackage& pkg, const LipschitzOptions& opts, const CalibrationSet* calib)
{
    LipschitzTable table;
    table.method = LipschitzMethod::Empirical;
    table.probe_count = opts.probe_budget;
    table.seed = opts.seed;
    std::vector<std::vector<Matrix>> stages;
    if (calib != nullptr) {
        stages = dense_stages(pkg, *calib);
    }
    const int d = pkg.config.d_model;
    for (int i = 0; i < pkg.config.num_sub_blocks(); ++i) {
        const SubBlockWeights& weights = pkg.sub_blocks[static_cast<std::size_t>(i)];
        std::mt19937_64 rng(opts.seed * 1000003ULL + static_cast<std::uint64_t>(i));
        const double theta_scale = std::max(weights.param_norm(), 1.0) * 1e-2;
        LipschitzEntry e;
        for (int s = 0; s < opts.probe_budget; ++s) {
            Matrix z;
            if (!stages.empty()) {
                z = stages[static_cast<std::size_t>(s) % stages.size()][static_cast<std::size_t>(i)];
                z += gaussian_like(z.rows(), z.cols(), 0.1, rng);
            } else {
                z = gaussian_like(kEmpiricalSeqLen, d, 1.0, rng);
            }
            const Matrix z2 = z + gaussian_like(z.rows(), z.cols(), 0.1, rng);
            const Matrix fz = sub_block_apply(pkg.config, weights, z);
            const double dz = frobenius_diff(z, z2);
            if (dz > 0.0) {
                e.l_input = std::max(e.l_input, frobenius_diff(fz, sub_block_apply(pkg.config, weights, z2)) / dz);
            }

            // Parameter direction with norm theta_scale; the distance is
            // measured after the float round trip.
            SubBlockWeights perturbed = weights;
            std::vector<Matrix> deltas;
            double dn = 0.0;
            for (auto& [name, t] : perturbed.tensors()) {
                deltas.push_back(gaussian_like(t->rows(), t->cols(), 1.0, rng));
                dn += squared_norm(deltas.back());
            }
            const auto scale = static_cast<float>(theta_scale / std::sqrt(dn));
            double actual = 0.0;
            std::size_t k = 0;
            for (auto& [name, t] : perturbed.tensors()) {
                const Matrix before = *t;
                *t += deltas[k++] * scale;
                actual += squared_norm(Matrix(*t - before));
            }
            actual = std::sqrt(actual);
            if (actual > 0.0) {
                e.m_param = std::max(e.m_param, frobenius_diff(sub_block_apply(pkg.config, perturbed, z), fz) / actual);
            }
        }
        table.entries.push_back(e);
    }
    return table;
}

} // namespace

LipschitzTable lipschitz_table(const ModelPackage& pkg, const LipschitzOptions& opts, const ExecutionPlan& plan,
                               const CalibrationSet* calib)
{
    if (opts.probe_budget < 1) {
        throw Error("probe budget must be >= 1");
    }
    validate_plan(pkg.config, plan);
    return opts.method == LipschitzMethod::ExactSpectral ? exact_table(pkg, opts, plan)
                                                         : empirical_table(pkg, opts, calib);
}

std::vector<double> bound_coefficients(const LipschitzTable& table)
{
    const std::size_t n = table.entries.size();
    std::vector<double> c(n);
    double tail = 1.0; // prod over k > i of (1 + L_k); empty product is 1
    for (std::size_t i = n; i-- > 0;) {
        c[i] = table.entries[i].m_param * tail;
        tail *= 1.0 + table.entries[i].l_input;
    }
    return c;
}

double bound_skip(const ModelPackage& pkg, const ExecutionPlan& plan, const LipschitzTable& table)
{
    validate_plan(pkg.config, plan);
    if (!plan.reuse_map.empty()) {
        throw InvalidPlan("bound_skip expects a skip-only plan");
    }
    if (static_cast<int>(table.entries.size()) != pkg.config.num_sub_blocks()) {
        throw Error("Lipschitz table size does not match the model");
    }
    const auto c = bound_coefficients(table);
    double u = 0.0;
    for (SubBlockId i : plan.skip_set) {
        u += c[static_cast<std::size_t>(i)] * pkg.sub_blocks[static_cast<std::size_t>(i)].param_norm();
    }
    return u;
}

bool BoundReport::all_conditions_hold() const
{
    for (const auto& t : terms) {
        if (t.condition && !*t.condition) {
            return false;
        }
    }
    return true;
}

BoundReport bound_reuse(const ModelPackage& pkg, const ExecutionPlan& plan, const LipschitzTable& table)
{
    validate_plan(pkg.config, plan);
    ExecutionPlan skip_only = plan;
    skip_only.reuse_map.clear();

    BoundReport report;
    report.u_skip = bound_skip(pkg, skip_only, table);
    const auto c = bound_coefficients(table);
    double u = 0.0;
    for (SubBlockId i : plan.skip_set) {
        const auto& theta = pkg.sub_blocks[static_cast<std::size_t>(i)];
        BoundTerm term;
        term.index = i;
        term.coefficient = c[static_cast<std::size_t>(i)];
        term.param_norm = theta.param_norm();
        if (auto it = plan.reuse_map.find(i); it != plan.reuse_map.end()) {
            term.source = it->second;
            term.param_distance = theta.param_distance(pkg.sub_blocks[static_cast<std::size_t>(it->second)]);
            term.condition = *term.param_distance < term.param_norm;
            u += term.coefficient * *term.param_distance;
        } else {
            u += term.coefficient * term.param_norm;
        }
        report.terms.push_back(term);
    }
    if (!plan.reuse_map.empty()) {
        report.u_skip_reuse = u;
    }
    return report;
}

double measured_stack_error(const ModelPackage& pkg, const ExecutionPlan& plan, const Matrix& probes)
{
    validate_plan(pkg.config, plan);
    const Matrix dense = run_stack(pkg, probes, {});
    const Matrix pruned = run_stack(pkg, probes, plan);
    double worst = 0.0;
    for (Eigen::Index r = 0; r < probes.rows(); ++r) {
        worst = std::max(worst, l2_norm(dense.row(r) - pruned.row(r)));
    }
    return worst;
}

LemmaCheck verify_lemma(const ModelPackage& pkg, const ExecutionPlan& plan, const LipschitzTable& table,
                        const Matrix& probes, double relative_slack)
{
    if (table.method != LipschitzMethod::ExactSpectral) {
        throw Error("verify_lemma needs EXACT_SPECTRAL constants");
    }
    validate_plan(pkg.config, plan);
    const BoundReport report = bound_reuse(pkg, plan, table);
    LemmaCheck out;
    out.measured_max_error = measured_stack_error(pkg, plan, probes);
    out.bound = report.u_skip_reuse.value_or(report.u_skip);
    out.margin = out.bound - out.measured_max_error;
    out.holds = out.measured_max_error <= out.bound * (1.0 + relative_slack);
    return out;
}

} // namespace skrr
