#pragma once

// Error bounds for a residual stack whose sub-blocks are replaced by other
// parameters. With per-sub-block constants L_i (input Lipschitz) and M_i
// (parameter Lipschitz):
//
//   ||M(x; theta) - M(x; theta_hat)|| <= sum_i C_i ||theta_i - theta_hat_i||,
//   C_i = M_i * prod_{k > i} (1 + L_k).
//
// Skipping sets theta_hat_i = 0; re-use sets it to the source's parameters.
// Constants are exact only for all-LINEAR stacks; elsewhere they are sampled
// lower estimates and no guarantee is implied.

#include "skrr/io.hpp"
#include "skrr/model.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace skrr {

enum class LipschitzMethod { ExactSpectral, Empirical };

std::string to_string(LipschitzMethod method);
LipschitzMethod parse_lipschitz_method(const std::string& text);

struct SpectralNormResult {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Largest singular value by power iteration on W^T W from a seeded start vector.
SpectralNormResult spectral_norm(const Mat<double>& w, int max_iters = 1000, double tol = 1e-8,
                                 std::uint64_t seed = 0);
SpectralNormResult spectral_norm(const Matrix& w, int max_iters = 1000, double tol = 1e-8, std::uint64_t seed = 0);

struct LipschitzEntry {
    double l_input = 0.0;
    double m_param = 0.0;
};

struct LipschitzTable {
    std::vector<LipschitzEntry> entries;
    LipschitzMethod method = LipschitzMethod::ExactSpectral;
    int probe_count = 0;
    std::uint64_t seed = 0;
};

struct LipschitzOptions {
    LipschitzMethod method = LipschitzMethod::ExactSpectral;
    int probe_budget = 1000;
    std::uint64_t seed = 0;
};

/// Seeded N(0, 1) probe rows, one probe per row (count x d_model).
Matrix make_probes(const EncoderConfig& config, int count, std::uint64_t seed);

/// EXACT_SPECTRAL (LINEAR stacks only): L_i = ||W_i||_2 and M_i = the largest
/// norm of any probe row as it enters sub-block i under `plan`, which is the
/// exact parameter-Lipschitz constant of z -> W z over those inputs.
/// EMPIRICAL: L_i and M_i are maxima of finite-difference ratios over seeded
/// samples (calibration states with jitter when `calib` is given, Gaussian
/// sequences otherwise). Sample n of a sub-block is the same for any budget >= n.
LipschitzTable lipschitz_table(const ModelPackage& pkg, const LipschitzOptions& opts, const ExecutionPlan& plan = {},
                               const CalibrationSet* calib = nullptr);

/// C_i for every sub-block.
std::vector<double> bound_coefficients(const LipschitzTable& table);

/// Sum of C_i ||theta_i|| over skipped indices. The plan must not contain re-use entries.
double bound_skip(const ModelPackage& pkg, const ExecutionPlan& plan, const LipschitzTable& table);

struct BoundTerm {
    SubBlockId index = 0;
    double coefficient = 0.0;
    double param_norm = 0.0;
    std::optional<SubBlockId> source;
    /// ||theta_i - theta_source||, present for re-used indices.
    std::optional<double> param_distance;
    /// param_distance < param_norm, present for re-used indices.
    std::optional<bool> condition;
};

struct BoundReport {
    std::vector<BoundTerm> terms;
    double u_skip = 0.0;
    /// Present only when the plan has re-use entries.
    std::optional<double> u_skip_reuse;
    std::optional<double> measured_max_error;

    [[nodiscard]] bool all_conditions_hold() const;
};

BoundReport bound_reuse(const ModelPackage& pkg, const ExecutionPlan& plan, const LipschitzTable& table);

/// Max over probe rows of ||stack(x) - stack_plan(x)||, no final norm.
double measured_stack_error(const ModelPackage& pkg, const ExecutionPlan& plan, const Matrix& probes);

struct LemmaCheck {
    double measured_max_error = 0.0;
    double bound = 0.0;
    /// bound - measured
    double margin = 0.0;
    bool holds = false;
};

/// Max over probe rows of the stack-output error against the bound (the
/// re-use bound when the plan has re-use entries). `holds` allows a relative
/// slack for float accumulation. Requires an EXACT_SPECTRAL table.
LemmaCheck verify_lemma(const ModelPackage& pkg, const ExecutionPlan& plan, const LipschitzTable& table,
                        const Matrix& probes, double relative_slack = 1e-6);

} // namespace skrr
