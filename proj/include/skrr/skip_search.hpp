#pragma once

// Skip-ordering search: beam search over sub-block removal sequences plus the
// greedy, block-influence and exhaustive baselines.

#include "skrr/discrepancy.hpp"
#include "skrr/io.hpp"
#include "skrr/model.hpp"

#include <cstdint>
#include <vector>

namespace skrr {

inline constexpr int kDefaultBeamWidth = 3;
inline constexpr std::int64_t kExhaustiveLimit = 100000;

struct SearchConfig {
    int k = kDefaultBeamWidth;
    Metric metric = Metric::Mse;
    bool include_null = true;
    bool use_projection = true;
    std::uint64_t seed = 0;
    /// Parallelism budget. Results do not depend on it.
    int threads = 1;

    [[nodiscard]] DiscrepancyOptions discrepancy() const { return {metric, include_null, use_projection}; }
    void validate() const;
};

/// Full removal order over every sub-block with the discrepancy after each prefix.
struct SkipOrdering {
    std::vector<SubBlockId> order;
    std::vector<DiscrepancyBreakdown> steps;
    SearchConfig config;
    /// Number of distinct plans evaluated by the search.
    std::int64_t evaluations = 0;

    [[nodiscard]] std::vector<double> step_discrepancy() const;
    [[nodiscard]] ExecutionPlan prefix_plan(std::size_t length) const;
};

/// Beam search. Every step expands each beam entry by every remaining index,
/// collapses candidates that reach the same skip set (keeping the one with the
/// lexicographically smallest per-prefix D history, then smallest sequence),
/// ranks by (D, lexicographic skip set) and keeps k. The returned order is the
/// lineage of the single full-length entry.
SkipOrdering skip_order(const ModelPackage& pkg, const CalibrationSet& calib, const SearchConfig& cfg = {});

/// skip_order with k = 1. With include_null off and MSE this is the
/// MSE-only greedy baseline.
SkipOrdering greedy_order(const ModelPackage& pkg, const CalibrationSet& calib, SearchConfig cfg = {});

/// Block-level order by block influence, ascending.
struct BlockOrdering {
    std::vector<int> order;
    /// Score per block index: 1 - mean token cosine of block input and output.
    std::vector<double> influence;
};

BlockOrdering bi_order(const ModelPackage& pkg, const CalibrationSet& calib);

/// Removal units in order: singletons for sub-block orderings, MHA+FFN pairs
/// for block orderings.
using PruneUnits = std::vector<std::vector<SubBlockId>>;

PruneUnits prune_units(const SkipOrdering& ordering);
PruneUnits prune_units(const BlockOrdering& ordering);

struct PruneResult {
    ExecutionPlan plan;
    double target = 0.0;
    double achieved_sparsity = 0.0;
    /// Number of ordering units taken.
    std::size_t prefix_length = 0;
};

/// Shortest prefix of `units` whose sparsity reaches `target`.
PruneResult prune_to_sparsity(const ModelPackage& pkg, const PruneUnits& units, double target);
PruneResult prune_to_sparsity(const ModelPackage& pkg, const SkipOrdering& ordering, double target);

struct ExhaustiveResult {
    std::vector<SubBlockId> skip_set;
    DiscrepancyBreakdown breakdown;
    std::int64_t evaluated = 0;
};

std::int64_t binomial(int n, int k);

/// Minimum-D skip set of size m over all subsets (lexicographic tie-break).
/// Refuses to run when C(2L, m) exceeds kExhaustiveLimit.
ExhaustiveResult exhaustive_best(const ModelPackage& pkg, const CalibrationSet& calib, int m,
                                 const SearchConfig& cfg = {});

} // namespace skrr
