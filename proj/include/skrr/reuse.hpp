#pragma once

// Re-use: for each skipped sub-block, try running the nearest kept sub-block
// of the same kind on either side in its place, and keep the substitution
// only when it strictly lowers the discrepancy.

#include "skrr/discrepancy.hpp"
#include "skrr/skip_search.hpp"

#include <optional>
#include <vector>

namespace skrr {

enum class ReuseVisitOrder {
    AscendingIndex,
    /// Order in which the skipped indices appear in the skip ordering.
    SkipOrder,
};

struct ReuseConfig {
    SearchConfig search;
    ReuseVisitOrder visit = ReuseVisitOrder::AscendingIndex;
};

/// Candidate evaluation for one skipped index.
struct ReuseDecision {
    SubBlockId index = 0;
    std::optional<SubBlockId> left;
    std::optional<SubBlockId> right;
    DiscrepancyBreakdown current;
    std::optional<DiscrepancyBreakdown> with_left;
    std::optional<DiscrepancyBreakdown> with_right;
    std::optional<SubBlockId> adopted;
    /// Plan in force before this decision.
    ExecutionPlan plan_before;
};

struct AcceptedReuse {
    SubBlockId index = 0;
    SubBlockId source = 0;
    double d_before = 0.0;
    double d_after = 0.0;
};

struct RejectedReuse {
    SubBlockId index = 0;
    /// Smallest candidate D, absent when no same-kind neighbour was kept.
    std::optional<double> best_candidate;
};

struct ReuseReport {
    std::vector<AcceptedReuse> accepted;
    std::vector<RejectedReuse> rejected;
    std::vector<ReuseDecision> decisions;
    DiscrepancyBreakdown initial_breakdown;
    DiscrepancyBreakdown final_breakdown;
};

struct ReuseResult {
    ExecutionPlan plan;
    ReuseReport report;
};

/// `visit_sequence` is only consulted for ReuseVisitOrder::SkipOrder and must
/// list every skipped index.
ReuseResult reuse_assign(const ModelPackage& pkg, const ExecutionPlan& plan, const CalibrationSet& calib,
                         const ReuseConfig& cfg = {}, const std::vector<SubBlockId>& visit_sequence = {});

struct OrderedReuseResult {
    PruneResult pruned;
    ReuseResult reuse;
};

/// prune_to_sparsity on any ordering granularity, then reuse_assign.
OrderedReuseResult reuse_on_ordering(const ModelPackage& pkg, const PruneUnits& units, double target,
                                     const CalibrationSet& calib, const ReuseConfig& cfg = {});

} // namespace skrr
