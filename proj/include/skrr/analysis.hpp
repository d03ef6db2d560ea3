#pragma once

// Redundancy diagnostics: hidden-state similarity across the residual stream,
// fixed-input similarity of sub-block outputs, null-feature norm tracking and
// null-feature perturbation.

#include "skrr/discrepancy.hpp"
#include "skrr/io.hpp"
#include "skrr/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace skrr {

inline constexpr double kDefaultNullPerturbation = 1e-2;

/// Square matrix of cosines. Missing entries hold NaN.
struct SimilarityMatrix {
    Mat<double> values;
    /// Number of token vectors each entry averages over.
    std::int64_t token_count = 0;

    [[nodiscard]] int size() const { return static_cast<int>(values.rows()); }
    [[nodiscard]] bool present(int a, int b) const;
};

/// Dense hidden states per calibration sequence: stage 0 is the embedding
/// output, stage s the state after sub-block s-1, 2L+1 stages in total.
std::vector<std::vector<Matrix>> dense_stages(const ModelPackage& pkg, const CalibrationSet& calib);

/// Mean over all calibration tokens of cosine(stage a, stage b), rowwise.
double mean_token_cosine(const std::vector<std::vector<Matrix>>& stages, int a, int b);

SimilarityMatrix hidden_similarity_matrix(const ModelPackage& pkg, const CalibrationSet& calib);

/// Feeds one seeded random draw of embedding rows through every sub-block and
/// compares the flattened outputs. Pairs of different kinds are left missing.
SimilarityMatrix block_output_similarity(const ModelPackage& pkg, std::uint64_t seed, int n_tokens);

struct NullNormEntry {
    double norm = 0.0;
    double ratio = 0.0;
};

NullNormEntry null_norm_entry(double dense_norm, double pruned_norm);

struct NullNormReport {
    double dense_norm = 0.0;
    std::vector<NullNormEntry> plans;
};

NullNormReport null_norm_report(const ModelPackage& pkg, const std::vector<ExecutionPlan>& plans);

/// lambda * z + f_null with z ~ N(0, I) drawn from `seed`.
Matrix perturb_null(const Matrix& f_null, double lambda = kDefaultNullPerturbation, std::uint64_t seed = 0);

/// CSV with a header row and column of stage/sub-block indices; missing cells are empty.
std::string similarity_csv(const SimilarityMatrix& m);

} // namespace skrr
