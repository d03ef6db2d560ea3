#include "skrr/skip_search.hpp"

#include "skrr/analysis.hpp"
#include "skrr/parallel.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace skrr {

void SearchConfig::validate() const
{
    if (k < 1) {
        throw Error("beam width k must be >= 1, got " + std::to_string(k));
    }
}

std::vector<double> SkipOrdering::step_discrepancy() const
{
    std::vector<double> out;
    out.reserve(steps.size());
    for (const auto& s : steps) {
        out.push_back(s.total);
    }
    return out;
}

ExecutionPlan SkipOrdering::prefix_plan(std::size_t length) const
{
    ExecutionPlan plan;
    plan.skip_set.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(length, order.size())));
    return plan;
}

namespace {

struct BeamEntry {
    DiscrepancyBreakdown d;
    std::vector<SubBlockId> sequence;
    std::vector<SubBlockId> skip_set; // sorted
    std::vector<DiscrepancyBreakdown> history;
};

bool ranks_before(const BeamEntry& a, const BeamEntry& b)
{
    if (a.d.total != b.d.total) {
        return a.d.total < b.d.total;
    }
    return a.skip_set < b.skip_set;
}

bool lineage_before(const BeamEntry& a, const BeamEntry& b)
{
    for (std::size_t t = 0; t < a.history.size(); ++t) {
        if (a.history[t].total != b.history[t].total) {
            return a.history[t].total < b.history[t].total;
        }
    }
    return a.sequence < b.sequence;
}

ExecutionPlan plan_of(const std::vector<SubBlockId>& skip_set)
{
    ExecutionPlan plan;
    plan.skip_set.insert(skip_set.begin(), skip_set.end());
    return plan;
}

} // namespace

SkipOrdering skip_order(const ModelPackage& pkg, const CalibrationSet& calib, const SearchConfig& cfg)
{
    cfg.validate();
    const DiscrepancyEvaluator evaluator(pkg, calib, cfg.discrepancy());
    const int n = pkg.config.num_sub_blocks();

    SkipOrdering result;
    result.config = cfg;
    std::vector<BeamEntry> beam{BeamEntry{}};
    for (int step = 0; step < n; ++step) {
        // One candidate per skip set. Orderings reaching the same set share
        // its D, so keep the one whose earlier prefixes were cheapest, then
        // the lexicographically smallest sequence.
        std::vector<BeamEntry> candidates;
        std::map<std::vector<SubBlockId>, std::size_t> seen;
        for (const auto& parent : beam) {
            for (SubBlockId i = 0; i < n; ++i) {
                if (std::binary_search(parent.skip_set.begin(), parent.skip_set.end(), i)) {
                    continue;
                }
                BeamEntry cand;
                cand.sequence = parent.sequence;
                cand.sequence.push_back(i);
                cand.skip_set = parent.skip_set;
                cand.skip_set.insert(std::upper_bound(cand.skip_set.begin(), cand.skip_set.end(), i), i);
                cand.history = parent.history;
                const auto it = seen.find(cand.skip_set);
                if (it == seen.end()) {
                    seen.emplace(cand.skip_set, candidates.size());
                    candidates.push_back(std::move(cand));
                } else if (lineage_before(cand, candidates[it->second])) {
                    candidates[it->second] = std::move(cand);
                }
            }
        }
        parallel_for(candidates.size(), cfg.threads,
                     [&](std::size_t c) { candidates[c].d = evaluator.evaluate(plan_of(candidates[c].skip_set)); });
        result.evaluations += static_cast<std::int64_t>(candidates.size());
        for (auto& c : candidates) {
            c.history.push_back(c.d);
        }
        std::stable_sort(candidates.begin(), candidates.end(), ranks_before);
        if (candidates.size() > static_cast<std::size_t>(cfg.k)) {
            candidates.resize(static_cast<std::size_t>(cfg.k));
        }
        beam = std::move(candidates);
    }
    result.order = std::move(beam.front().sequence);
    result.steps = std::move(beam.front().history);
    return result;
}

SkipOrdering greedy_order(const ModelPackage& pkg, const CalibrationSet& calib, SearchConfig cfg)
{
    cfg.k = 1;
    return skip_order(pkg, calib, cfg);
}

BlockOrdering bi_order(const ModelPackage& pkg, const CalibrationSet& calib)
{
    const auto stages = dense_stages(pkg, calib);
    BlockOrdering out;
    for (int b = 0; b < pkg.config.num_blocks; ++b) {
        out.influence.push_back(1.0 - mean_token_cosine(stages, 2 * b, 2 * b + 2));
    }
    out.order.resize(static_cast<std::size_t>(pkg.config.num_blocks));
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(), [&](int a, int b) {
        return out.influence[static_cast<std::size_t>(a)] < out.influence[static_cast<std::size_t>(b)];
    });
    return out;
}

PruneUnits prune_units(const SkipOrdering& ordering)
{
    PruneUnits units;
    for (SubBlockId j : ordering.order) {
        units.push_back({j});
    }
    return units;
}

PruneUnits prune_units(const BlockOrdering& ordering)
{
    PruneUnits units;
    for (int b : ordering.order) {
        units.push_back({2 * b, 2 * b + 1});
    }
    return units;
}

PruneResult prune_to_sparsity(const ModelPackage& pkg, const PruneUnits& units, double target)
{
    if (!(target >= 0.0 && target <= 1.0)) {
        throw Error("target sparsity must be in [0, 1], got " + std::to_string(target));
    }
    PruneResult out;
    out.target = target;
    while (plan_sparsity(pkg, out.plan) < target && out.prefix_length < units.size()) {
        for (SubBlockId j : units[out.prefix_length]) {
            out.plan.skip_set.insert(j);
        }
        ++out.prefix_length;
    }
    out.achieved_sparsity = plan_sparsity(pkg, out.plan);
    return out;
}

PruneResult prune_to_sparsity(const ModelPackage& pkg, const SkipOrdering& ordering, double target)
{
    return prune_to_sparsity(pkg, prune_units(ordering), target);
}

std::int64_t binomial(int n, int k)
{
    if (k < 0 || k > n) {
        return 0;
    }
    k = std::min(k, n - k);
    std::int64_t r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
    }
    return r;
}

ExhaustiveResult exhaustive_best(const ModelPackage& pkg, const CalibrationSet& calib, int m, const SearchConfig& cfg)
{
    const int n = pkg.config.num_sub_blocks();
    if (m < 0 || m > n) {
        throw Error("subset size m must be in [0, " + std::to_string(n) + "], got " + std::to_string(m));
    }
    const std::int64_t count = binomial(n, m);
    if (count > kExhaustiveLimit) {
        throw Error("exhaustive search over C(" + std::to_string(n) + ", " + std::to_string(m) + ") = "
                    + std::to_string(count) + " subsets exceeds the limit of " + std::to_string(kExhaustiveLimit));
    }
    const DiscrepancyEvaluator evaluator(pkg, calib, cfg.discrepancy());

    // Lexicographic enumeration of m-subsets.
    std::vector<std::vector<SubBlockId>> subsets;
    subsets.reserve(static_cast<std::size_t>(count));
    std::vector<SubBlockId> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        subsets.push_back(idx);
        int pos = m - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - m + pos) {
            --pos;
        }
        if (pos < 0) {
            break;
        }
        ++idx[static_cast<std::size_t>(pos)];
        for (int q = pos + 1; q < m; ++q) {
            idx[static_cast<std::size_t>(q)] = idx[static_cast<std::size_t>(q - 1)] + 1;
        }
    }

    std::vector<DiscrepancyBreakdown> scores(subsets.size());
    parallel_for(subsets.size(), cfg.threads,
                 [&](std::size_t s) { scores[s] = evaluator.evaluate(plan_of(subsets[s])); });

    ExhaustiveResult best;
    best.evaluated = static_cast<std::int64_t>(subsets.size());
    std::size_t arg = 0;
    for (std::size_t s = 1; s < subsets.size(); ++s) {
        if (scores[s].total < scores[arg].total) {
            arg = s;
        }
    }
    best.skip_set = subsets[arg];
    best.breakdown = scores[arg];
    return best;
}

} // namespace skrr
