#include "skrr/reuse.hpp"

#include "skrr/parallel.hpp"

#include <algorithm>

namespace skrr {

namespace {

std::optional<SubBlockId> nearest_kept(const ExecutionPlan& plan, const EncoderConfig& config, SubBlockId i, int step)
{
    for (SubBlockId j = i + step; j >= 0 && j < config.num_sub_blocks(); j += step) {
        if (same_parity(i, j) && config.kind(i) == config.kind(j) && !plan.skip_set.contains(j)) {
            return j;
        }
    }
    return std::nullopt;
}

} // namespace

ReuseResult reuse_assign(const ModelPackage& pkg, const ExecutionPlan& plan, const CalibrationSet& calib,
                         const ReuseConfig& cfg, const std::vector<SubBlockId>& visit_sequence)
{
    validate_plan(pkg.config, plan);
    if (!plan.reuse_map.empty()) {
        throw InvalidPlan("reuse_assign expects a plan without re-use entries");
    }
    cfg.search.validate();
    const DiscrepancyEvaluator evaluator(pkg, calib, cfg.search.discrepancy());

    std::vector<SubBlockId> visit(plan.skip_set.begin(), plan.skip_set.end());
    if (cfg.visit == ReuseVisitOrder::SkipOrder) {
        std::vector<SubBlockId> ordered;
        for (SubBlockId j : visit_sequence) {
            if (plan.skip_set.contains(j) && std::find(ordered.begin(), ordered.end(), j) == ordered.end()) {
                ordered.push_back(j);
            }
        }
        if (ordered.size() != visit.size()) {
            throw Error("skip-order visit sequence does not cover every skipped index");
        }
        visit = std::move(ordered);
    }

    ReuseResult result;
    result.plan = plan;
    result.report.initial_breakdown = evaluator.evaluate(plan);
    for (SubBlockId i : visit) {
        ReuseDecision dec;
        dec.index = i;
        dec.plan_before = result.plan;
        dec.left = nearest_kept(result.plan, pkg.config, i, -1);
        dec.right = nearest_kept(result.plan, pkg.config, i, +1);

        std::vector<std::optional<ExecutionPlan>> trials(3);
        trials[0] = result.plan;
        if (dec.left) {
            trials[1] = result.plan;
            trials[1]->reuse_map[i] = *dec.left;
        }
        if (dec.right) {
            trials[2] = result.plan;
            trials[2]->reuse_map[i] = *dec.right;
        }
        std::vector<DiscrepancyBreakdown> scores(3);
        parallel_for(3, cfg.search.threads, [&](std::size_t t) {
            if (trials[t]) {
                scores[t] = evaluator.evaluate(*trials[t]);
            }
        });
        dec.current = scores[0];
        if (dec.left) {
            dec.with_left = scores[1];
        }
        if (dec.right) {
            dec.with_right = scores[2];
        }

        // Strict improvement over both alternatives; ties reject.
        const double cur = dec.current.total;
        const bool left_wins = dec.with_left && dec.with_left->total < cur
                               && (!dec.with_right || dec.with_left->total < dec.with_right->total);
        const bool right_wins = !left_wins && dec.with_right && dec.with_right->total < cur
                                && (!dec.with_left || dec.with_right->total < dec.with_left->total);
        if (left_wins || right_wins) {
            const SubBlockId source = left_wins ? *dec.left : *dec.right;
            const DiscrepancyBreakdown& after = left_wins ? *dec.with_left : *dec.with_right;
            dec.adopted = source;
            result.plan.reuse_map[i] = source;
            result.report.accepted.push_back({i, source, cur, after.total});
        } else {
            std::optional<double> best;
            if (dec.with_left) {
                best = dec.with_left->total;
            }
            if (dec.with_right) {
                best = best ? std::min(*best, dec.with_right->total) : dec.with_right->total;
            }
            result.report.rejected.push_back({i, best});
        }
        result.report.decisions.push_back(std::move(dec));
    }
    result.report.final_breakdown = evaluator.evaluate(result.plan);
    return result;
}

OrderedReuseResult reuse_on_ordering(const ModelPackage& pkg, const PruneUnits& units, double target,
                                     const CalibrationSet& calib, const ReuseConfig& cfg)
{
    OrderedReuseResult out;
    out.pruned = prune_to_sparsity(pkg, units, target);
    std::vector<SubBlockId> sequence;
    for (std::size_t u = 0; u < out.pruned.prefix_length; ++u) {
        sequence.insert(sequence.end(), units[u].begin(), units[u].end());
    }
    out.reuse = reuse_assign(pkg, out.pruned.plan, calib, cfg, sequence);
    return out;
}

} // namespace skrr
