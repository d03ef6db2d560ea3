#include "cli.hpp"

#include "skrr/analysis.hpp"
#include "skrr/bounds.hpp"
#include "skrr/discrepancy.hpp"
#include "skrr/io.hpp"
#include "skrr/reuse.hpp"
#include "skrr/skip_search.hpp"
#include "skrr/synthetic.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace skrr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

namespace {

/// Flag combinations that parse but make no sense together.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string model;
    std::string calib;
    std::string out = ".";
    std::uint64_t seed = 0;
    int threads = 1;
    int k = kDefaultBeamWidth;
    std::string metric = "mse";
    bool null = true;
    bool projection = true;
    double target = std::numeric_limits<double>::quiet_NaN();

    // gen
    int blocks = 4;
    int d_model = 32;
    int heads = 4;
    int d_ff = 0;
    int d_cond = 16;
    int vocab = 64;
    int max_seq_len = 16;
    bool linear = false;
    int calib_count = 8;
    int calib_min_len = 4;
    int calib_max_len = 0;
    std::vector<std::string> plants;

    // order / prune / reuse
    std::string method = "beam";
    std::string ordering;
    std::string plan;
    std::string visit = "ascending";

    // analyze
    std::vector<std::string> plans;
    int tokens = 16;

    // oracle
    int max_m = 4;

    // bound
    std::string lipschitz = "exact";
    int probes = 1000;
};

// ---------------------------------------------------------------------------
// File helpers

fs::path require_file(const std::string& path, const std::string& what)
{
    if (path.empty()) {
        throw UsageError(what + " is required");
    }
    fs::path p(path);
    if (fs::is_directory(p) && what == "--model") {
        p /= "model.skrr";
    }
    if (!fs::is_regular_file(p)) {
        throw Error(what + ": no such file '" + p.string() + "'");
    }
    return p;
}

struct Input {
    fs::path path;
    std::string bytes;

    [[nodiscard]] json digest() const { return {{"file", path.filename().string()}, {"sha256", sha256_hex(bytes)}}; }
};

Input read_input(const std::string& path, const std::string& what)
{
    Input in;
    in.path = require_file(path, what);
    in.bytes = read_file(in.path);
    return in;
}

ModelPackage parse_model(const Input& in)
{
    return deserialize_package(in.bytes);
}

CalibrationSet parse_calib(const Input& in, const ModelPackage& pkg)
{
    std::istringstream stream(in.bytes);
    CalibrationSet calib = parse_calibration(stream);
    validate_calibration(pkg.config, calib);
    return calib;
}

json parse_json(const Input& in)
{
    try {
        return json::parse(in.bytes);
    } catch (const json::exception& e) {
        throw FormatError(in.path.string() + ": " + e.what());
    }
}

fs::path prepare_out(const Options& o)
{
    fs::path dir(o.out);
    fs::create_directories(dir);
    return dir;
}

void write_json(const fs::path& path, const json& j)
{
    write_file(path, j.dump(2) + "\n");
}

std::string fmt(double v)
{
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// JSON conversions

json breakdown_json(const DiscrepancyBreakdown& d)
{
    return {{"d_fc", d.d_fc}, {"d_fnull", d.d_fnull}, {"total", d.total}};
}

json plan_fields(const ExecutionPlan& plan)
{
    json reuse = json::array();
    for (const auto& [k, v] : plan.reuse_map) {
        reuse.push_back({k, v});
    }
    return {{"skip_set", std::vector<int>(plan.skip_set.begin(), plan.skip_set.end())}, {"reuse_map", reuse}};
}

json sparsity_accounting(const ModelPackage& pkg)
{
    json per = json::array();
    for (const auto& sb : pkg.sub_blocks) {
        per.push_back(sb.param_count());
    }
    return {{"convention", "sub-block parameters only; embedding, final norm and projection excluded"},
            {"stack_params", total_stack_params(pkg)},
            {"sub_block_params", per}};
}

ExecutionPlan plan_from_json(const json& j, const EncoderConfig& config)
{
    ExecutionPlan plan;
    try {
        for (int i : j.at("skip_set").get<std::vector<int>>()) {
            plan.skip_set.insert(i);
        }
        if (j.contains("reuse_map")) {
            for (const auto& pair : j.at("reuse_map")) {
                plan.reuse_map[pair.at(0).get<int>()] = pair.at(1).get<int>();
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("plan file: ") + e.what());
    }
    validate_plan(config, plan);
    return plan;
}

SearchConfig search_config(const Options& o)
{
    SearchConfig cfg;
    cfg.k = o.k;
    cfg.metric = parse_metric(o.metric);
    cfg.include_null = o.null;
    cfg.use_projection = o.projection;
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    cfg.validate();
    return cfg;
}

json search_json(const Options& o)
{
    return {{"k", o.k}, {"metric", o.metric}, {"null", o.null}, {"projection", o.projection}};
}

json manifest(const std::string& sub, const Options& o, json config, json inputs)
{
    return {{"subcommand", sub},
            {"config", std::move(config)},
            {"inputs", std::move(inputs)},
            {"tool_version", kToolVersion},
            {"seed", o.seed}};
}

void check_target(double target)
{
    if (!(target >= 0.0 && target <= 1.0)) {
        throw UsageError("--target must be in [0, 1]");
    }
}

// An ordering read back from `order` output, or computed on the spot.
struct OrderingUnits {
    PruneUnits units;
    std::vector<SubBlockId> sequence;
};

OrderingUnits ordering_from_json(const json& j, const ModelPackage& pkg, const json& model_digest)
{
    OrderingUnits out;
    try {
        const auto recorded = j.at("manifest").at("inputs").at("model").at("sha256").get<std::string>();
        if (recorded != model_digest.at("sha256").get<std::string>()) {
            throw Error("ordering file was computed for a different model (sha256 " + recorded + ")");
        }
        const auto granularity = j.at("granularity").get<std::string>();
        const auto order = j.at("order").get<std::vector<int>>();
        for (int u : order) {
            if (granularity == "block") {
                if (u < 0 || u >= pkg.config.num_blocks) {
                    throw FormatError("ordering file: block index out of range");
                }
                out.units.push_back({2 * u, 2 * u + 1});
            } else {
                if (u < 0 || u >= pkg.config.num_sub_blocks()) {
                    throw FormatError("ordering file: sub-block index out of range");
                }
                out.units.push_back({u});
            }
            out.sequence.insert(out.sequence.end(), out.units.back().begin(), out.units.back().end());
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("ordering file: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns the JSON artifacts it wrote, keyed by file name.

RedundancySpec parse_plants(const std::vector<std::string>& plants)
{
    RedundancySpec spec;
    for (const auto& text : plants) {
        std::vector<std::string> parts;
        std::stringstream ss(text);
        for (std::string item; std::getline(ss, item, ':');) {
            parts.push_back(item);
        }
        if (parts.size() < 2 || parts.size() > 3) {
            throw UsageError("--plant expects MODE:INDEX[:ARG], got '" + text + "'");
        }
        std::string mode = parts[0];
        std::transform(mode.begin(), mode.end(), mode.begin(), [](unsigned char c) { return std::toupper(c); });
        Redundancy r;
        try {
            r.mode = parse_redundancy_mode(mode);
            r.sub_block = std::stoi(parts[1]);
            if (r.mode == RedundancyMode::NearZero) {
                if (parts.size() == 3) {
                    r.epsilon = std::stod(parts[2]);
                }
            } else {
                if (parts.size() != 3) {
                    throw UsageError(mode + " needs a partner index: '" + text + "'");
                }
                r.other = std::stoi(parts[2]);
            }
        } catch (const std::logic_error&) {
            throw UsageError("--plant: cannot parse '" + text + "'");
        } catch (const InvalidModel& e) {
            throw UsageError(std::string("--plant: ") + e.what());
        }
        spec.push_back(r);
    }
    return spec;
}

void cmd_gen(const Options& o)
{
    EncoderConfig cfg;
    cfg.num_blocks = o.blocks;
    cfg.d_model = o.d_model;
    cfg.n_heads = o.heads;
    cfg.d_ff = o.d_ff > 0 ? o.d_ff : 2 * o.d_model;
    cfg.d_cond = o.d_cond;
    cfg.vocab_size = o.vocab;
    cfg.max_seq_len = o.max_seq_len;
    cfg.linear_stack = o.linear;
    const RedundancySpec spec = parse_plants(o.plants);

    const ModelPackage pkg = generate_synthetic(cfg, o.seed, spec);
    const CalibrationSet calib
        = generate_calibration(cfg, o.seed ^ 0x5bd1e995ULL, o.calib_count, o.calib_min_len, o.calib_max_len);

    const fs::path dir = prepare_out(o);
    const std::string model_bytes = serialize_package(pkg);
    std::ostringstream calib_stream;
    write_calibration(calib_stream, calib);
    write_file(dir / "model.skrr", model_bytes);
    write_file(dir / "calib.jsonl", calib_stream.str());

    json config = {{"blocks", cfg.num_blocks},
                   {"d_model", cfg.d_model},
                   {"heads", cfg.n_heads},
                   {"d_ff", cfg.d_ff},
                   {"d_cond", cfg.d_cond},
                   {"vocab", cfg.vocab_size},
                   {"max_seq_len", cfg.max_seq_len},
                   {"linear", cfg.linear_stack},
                   {"calib_count", o.calib_count},
                   {"calib_min_len", o.calib_min_len},
                   {"calib_max_len", o.calib_max_len},
                   {"plant", o.plants}};
    json report = {{"manifest", manifest("gen", o, config, json::object())},
                   {"model", {{"file", "model.skrr"}, {"sha256", sha256_hex(model_bytes)}}},
                   {"calibration",
                    {{"file", "calib.jsonl"},
                     {"sha256", sha256_hex(calib_stream.str())},
                     {"sequences", calib.size()}}},
                   {"sub_block_params", total_stack_params(pkg)}};
    for (const auto& r : spec) {
        if (r.mode == RedundancyMode::InteractPair) {
            const NullNormProbe probe = probe_null_norms(pkg, r.sub_block, r.other);
            report["interact_pair"].push_back({{"pair", {std::min(r.sub_block, r.other), std::max(r.sub_block, r.other)}},
                                               {"dense", probe.dense},
                                               {"skip_first", probe.skip_first},
                                               {"skip_second", probe.skip_second},
                                               {"skip_both", probe.skip_both},
                                               {"joint_over_single", probe.joint_over_single()}});
        }
    }
    write_json(dir / "gen.json", report);
}

struct Loaded {
    Input model_in;
    Input calib_in;
    ModelPackage pkg;
    CalibrationSet calib;
    json inputs;
};

Loaded load_model_and_calib(const Options& o, bool need_calib = true)
{
    Loaded l;
    l.model_in = read_input(o.model, "--model");
    l.pkg = parse_model(l.model_in);
    l.inputs["model"] = l.model_in.digest();
    if (need_calib || !o.calib.empty()) {
        l.calib_in = read_input(o.calib, "--calib");
        l.calib = parse_calib(l.calib_in, l.pkg);
        l.inputs["calib"] = l.calib_in.digest();
    }
    return l;
}

void cmd_order(const Options& o)
{
    Loaded l = load_model_and_calib(o);
    const SearchConfig cfg = search_config(o);
    json config = search_json(o);
    config["method"] = o.method;

    json report = {{"manifest", manifest("order", o, config, l.inputs)}, {"method", o.method}};
    std::ostringstream csv;
    csv << "step,index,kind,D_fc,D_fnull,D_total,sparsity_after\n";
    if (o.method == "beam" || o.method == "greedy") {
        const SkipOrdering ordering = o.method == "beam" ? skip_order(l.pkg, l.calib, cfg) : greedy_order(l.pkg, l.calib, cfg);
        report["granularity"] = "sub_block";
        report["order"] = ordering.order;
        report["step_discrepancy"] = ordering.step_discrepancy();
        report["evaluations"] = ordering.evaluations;
        json steps = json::array();
        ExecutionPlan plan;
        for (std::size_t s = 0; s < ordering.order.size(); ++s) {
            const SubBlockId j = ordering.order[s];
            plan.skip_set.insert(j);
            const double sp = plan_sparsity(l.pkg, plan);
            const DiscrepancyBreakdown& d = ordering.steps[s];
            json step = breakdown_json(d);
            step["index"] = j;
            step["sparsity_after"] = sp;
            steps.push_back(step);
            csv << s + 1 << ',' << j << ',' << to_string(l.pkg.config.kind(j)) << ',' << fmt(d.d_fc) << ','
                << fmt(d.d_fnull) << ',' << fmt(d.total) << ',' << fmt(sp) << '\n';
        }
        report["steps"] = steps;
    } else if (o.method == "bi") {
        const BlockOrdering ordering = bi_order(l.pkg, l.calib);
        const DiscrepancyEvaluator evaluator(l.pkg, l.calib, cfg.discrepancy());
        report["granularity"] = "block";
        report["order"] = ordering.order;
        report["influence"] = ordering.influence;
        json steps = json::array();
        std::vector<double> totals;
        ExecutionPlan plan;
        for (std::size_t s = 0; s < ordering.order.size(); ++s) {
            const int b = ordering.order[s];
            plan.skip_set.insert({2 * b, 2 * b + 1});
            const DiscrepancyBreakdown d = evaluator.evaluate(plan);
            const double sp = plan_sparsity(l.pkg, plan);
            totals.push_back(d.total);
            json step = breakdown_json(d);
            step["index"] = b;
            step["sparsity_after"] = sp;
            steps.push_back(step);
            csv << s + 1 << ',' << b << ",BLOCK," << fmt(d.d_fc) << ',' << fmt(d.d_fnull) << ',' << fmt(d.total) << ','
                << fmt(sp) << '\n';
        }
        report["step_discrepancy"] = totals;
        report["steps"] = steps;
    } else {
        throw UsageError("--method must be beam, greedy or bi");
    }
    report["sparsity_accounting"] = sparsity_accounting(l.pkg);
    const fs::path dir = prepare_out(o);
    write_json(dir / "order.json", report);
    write_file(dir / "order.csv", csv.str());
}

OrderingUnits resolve_ordering(const Options& o, const Loaded& l, json& inputs)
{
    if (!o.ordering.empty()) {
        const Input in = read_input(o.ordering, "--ordering");
        inputs["ordering"] = in.digest();
        return ordering_from_json(parse_json(in), l.pkg, l.inputs.at("model"));
    }
    const SkipOrdering ordering = skip_order(l.pkg, l.calib, search_config(o));
    OrderingUnits out;
    out.units = prune_units(ordering);
    out.sequence = ordering.order;
    return out;
}

void cmd_prune(const Options& o)
{
    check_target(o.target);
    Loaded l = load_model_and_calib(o);
    json inputs = l.inputs;
    const OrderingUnits ordering = resolve_ordering(o, l, inputs);
    const PruneResult pruned = prune_to_sparsity(l.pkg, ordering.units, o.target);
    const DiscrepancyBreakdown d = get_discrepancy(l.pkg, pruned.plan, l.calib, search_config(o).discrepancy());

    json config = search_json(o);
    config["target"] = o.target;
    json report = {{"manifest", manifest("prune", o, config, inputs)}};
    report.update(plan_fields(pruned.plan));
    report["target"] = pruned.target;
    report["achieved_sparsity"] = pruned.achieved_sparsity;
    report["prefix_length"] = pruned.prefix_length;
    report["breakdown"] = breakdown_json(d);
    report["sparsity_accounting"] = sparsity_accounting(l.pkg);
    write_json(prepare_out(o) / "plan.json", report);
}

void cmd_reuse(const Options& o)
{
    Loaded l = load_model_and_calib(o);
    json inputs = l.inputs;
    ReuseConfig cfg;
    cfg.search = search_config(o);
    if (o.visit == "ascending") {
        cfg.visit = ReuseVisitOrder::AscendingIndex;
    } else if (o.visit == "skip-order") {
        cfg.visit = ReuseVisitOrder::SkipOrder;
    } else {
        throw UsageError("--visit must be ascending or skip-order");
    }

    json config = search_json(o);
    config["visit"] = o.visit;
    ExecutionPlan base;
    std::vector<SubBlockId> sequence;
    std::optional<double> target;
    if (!o.plan.empty()) {
        if (!std::isnan(o.target)) {
            throw UsageError("give either --plan or --target, not both");
        }
        const Input in = read_input(o.plan, "--plan");
        inputs["plan"] = in.digest();
        base = plan_from_json(parse_json(in), l.pkg.config);
        if (!base.reuse_map.empty()) {
            throw UsageError("--plan already contains re-use entries");
        }
        if (cfg.visit == ReuseVisitOrder::SkipOrder) {
            if (o.ordering.empty()) {
                throw UsageError("--visit skip-order with --plan needs --ordering");
            }
            sequence = resolve_ordering(o, l, inputs).sequence;
        }
    } else {
        if (std::isnan(o.target)) {
            throw UsageError("reuse needs --plan or --target");
        }
        check_target(o.target);
        target = o.target;
        config["target"] = o.target;
        const OrderingUnits ordering = resolve_ordering(o, l, inputs);
        const PruneResult pruned = prune_to_sparsity(l.pkg, ordering.units, o.target);
        base = pruned.plan;
        sequence = ordering.sequence;
    }

    const ReuseResult result = reuse_assign(l.pkg, base, l.calib, cfg, sequence);
    const json m = manifest("reuse", o, config, inputs);

    json decisions = json::array();
    for (const auto& dec : result.report.decisions) {
        json d = {{"index", dec.index}, {"D_current", dec.current.total}};
        d["left"] = dec.left ? json(*dec.left) : json(nullptr);
        d["right"] = dec.right ? json(*dec.right) : json(nullptr);
        d["D_l"] = dec.with_left ? json(dec.with_left->total) : json(nullptr);
        d["D_r"] = dec.with_right ? json(dec.with_right->total) : json(nullptr);
        d["adopted"] = dec.adopted ? json(*dec.adopted) : json(nullptr);
        decisions.push_back(d);
    }
    json report = {{"manifest", m},
                   {"skip_set", std::vector<int>(base.skip_set.begin(), base.skip_set.end())},
                   {"decisions", decisions},
                   {"reuse_map", plan_fields(result.plan)["reuse_map"]},
                   {"initial_breakdown", breakdown_json(result.report.initial_breakdown)},
                   {"final_breakdown", breakdown_json(result.report.final_breakdown)}};

    json plan = {{"manifest", m}};
    plan.update(plan_fields(result.plan));
    plan["target"] = target ? json(*target) : json(nullptr);
    plan["achieved_sparsity"] = plan_sparsity(l.pkg, result.plan);
    plan["breakdown"] = breakdown_json(result.report.final_breakdown);
    plan["sparsity_accounting"] = sparsity_accounting(l.pkg);

    const fs::path dir = prepare_out(o);
    write_json(dir / "reuse.json", report);
    write_json(dir / "plan.json", plan);
}

void cmd_eval(const Options& o)
{
    Loaded l = load_model_and_calib(o);
    json inputs = l.inputs;
    const Input in = read_input(o.plan, "--plan");
    inputs["plan"] = in.digest();
    const ExecutionPlan plan = plan_from_json(parse_json(in), l.pkg.config);
    const DiscrepancyBreakdown d = get_discrepancy(l.pkg, plan, l.calib, search_config(o).discrepancy());
    const NullNormReport null = null_norm_report(l.pkg, {plan});

    json report = {{"manifest", manifest("eval", o, search_json(o), inputs)}};
    report.update(plan_fields(plan));
    report["sparsity"] = plan_sparsity(l.pkg, plan);
    report["sparsity_accounting"] = sparsity_accounting(l.pkg);
    report["breakdown"] = breakdown_json(d);
    report["null_norm"] = {{"dense", null.dense_norm}, {"plan", null.plans[0].norm}, {"ratio", null.plans[0].ratio}};
    write_json(prepare_out(o) / "eval.json", report);
}

void cmd_analyze(const Options& o)
{
    if (o.tokens < 1) {
        throw UsageError("--tokens must be >= 1");
    }
    Loaded l = load_model_and_calib(o);
    json inputs = l.inputs;
    std::vector<ExecutionPlan> plans;
    json plan_files = json::array();
    for (std::size_t i = 0; i < o.plans.size(); ++i) {
        const Input in = read_input(o.plans[i], "--plan");
        inputs["plan" + std::to_string(i)] = in.digest();
        plans.push_back(plan_from_json(parse_json(in), l.pkg.config));
        plan_files.push_back(in.path.filename().string());
    }
    const SimilarityMatrix hidden = hidden_similarity_matrix(l.pkg, l.calib);
    const SimilarityMatrix blocks = block_output_similarity(l.pkg, o.seed, o.tokens);
    const NullNormReport null = null_norm_report(l.pkg, plans);

    json config = {{"tokens", o.tokens}};
    json report = {{"manifest", manifest("analyze", o, config, inputs)},
                   {"hidden_similarity",
                    {{"file", "hidden_similarity.csv"},
                     {"size", hidden.size()},
                     {"token_count", hidden.token_count},
                     {"cosine", "token-level, averaged over calibration tokens"}}},
                   {"block_output_similarity",
                    {{"file", "block_similarity.csv"},
                     {"size", blocks.size()},
                     {"token_count", blocks.token_count},
                     {"cross_kind", "missing"}}}};
    json entries = json::array();
    for (std::size_t i = 0; i < plans.size(); ++i) {
        json e = plan_fields(plans[i]);
        e["file"] = plan_files[i];
        e["norm"] = null.plans[i].norm;
        e["ratio"] = null.plans[i].ratio;
        entries.push_back(e);
    }
    report["null_norms"] = {{"dense", null.dense_norm}, {"plans", entries}};

    const fs::path dir = prepare_out(o);
    write_file(dir / "hidden_similarity.csv", similarity_csv(hidden));
    write_file(dir / "block_similarity.csv", similarity_csv(blocks));
    write_json(dir / "analyze.json", report);
}

void cmd_oracle(const Options& o)
{
    Loaded l = load_model_and_calib(o);
    const SearchConfig cfg = search_config(o);
    const int n = l.pkg.config.num_sub_blocks();
    const int max_m = std::min(o.max_m, n);
    if (max_m < 1) {
        throw UsageError("--max-m must be >= 1");
    }
    const SkipOrdering beam = skip_order(l.pkg, l.calib, cfg);
    const SkipOrdering greedy = greedy_order(l.pkg, l.calib, cfg);

    json entries = json::array();
    bool all_dominated = true;
    for (int m = 1; m <= max_m; ++m) {
        const ExhaustiveResult best = exhaustive_best(l.pkg, l.calib, m, cfg);
        const double beam_d = beam.steps[static_cast<std::size_t>(m - 1)].total;
        const double greedy_d = greedy.steps[static_cast<std::size_t>(m - 1)].total;
        const bool dominated = best.breakdown.total <= beam_d && best.breakdown.total <= greedy_d;
        all_dominated = all_dominated && dominated;
        entries.push_back({{"m", m},
                           {"exhaustive", {{"skip_set", best.skip_set}, {"total", best.breakdown.total}, {"evaluated", best.evaluated}}},
                           {"beam", {{"k", cfg.k}, {"total", beam_d}}},
                           {"greedy", {{"total", greedy_d}}},
                           {"oracle_dominates", dominated}});
    }
    json config = search_json(o);
    config["max_m"] = max_m;
    json report = {{"manifest", manifest("oracle", o, config, l.inputs)},
                   {"entries", entries},
                   {"all_dominated", all_dominated}};
    write_json(prepare_out(o) / "oracle.json", report);
}

void cmd_bound(const Options& o)
{
    Loaded l = load_model_and_calib(o, false);
    json inputs = l.inputs;
    const Input in = read_input(o.plan, "--plan");
    inputs["plan"] = in.digest();
    const ExecutionPlan plan = plan_from_json(parse_json(in), l.pkg.config);

    LipschitzOptions opts;
    opts.method = parse_lipschitz_method(o.lipschitz);
    opts.probe_budget = o.probes;
    opts.seed = o.seed;
    const LipschitzTable table = lipschitz_table(l.pkg, opts, plan, l.calib.empty() ? nullptr : &l.calib);
    const BoundReport bound = bound_reuse(l.pkg, plan, table);
    const auto c = bound_coefficients(table);
    const Matrix probes = make_probes(l.pkg.config, o.probes, o.seed);

    json rows = json::array();
    for (std::size_t i = 0; i < table.entries.size(); ++i) {
        rows.push_back({{"index", i}, {"L", table.entries[i].l_input}, {"M", table.entries[i].m_param}, {"C", c[i]}});
    }
    json terms = json::array();
    for (const auto& t : bound.terms) {
        json j = {{"index", t.index}, {"coefficient", t.coefficient}, {"param_norm", t.param_norm}};
        j["source"] = t.source ? json(*t.source) : json(nullptr);
        j["param_distance"] = t.param_distance ? json(*t.param_distance) : json(nullptr);
        j["condition"] = t.condition ? json(*t.condition) : json(nullptr);
        terms.push_back(j);
    }
    json config = {{"lipschitz", to_string(opts.method)}, {"probes", o.probes}};
    json report = {{"manifest", manifest("bound", o, config, inputs)},
                   {"method", to_string(table.method)},
                   {"table", rows},
                   {"terms", terms},
                   {"u_skip", bound.u_skip},
                   {"u_skip_reuse", bound.u_skip_reuse ? json(*bound.u_skip_reuse) : json(nullptr)},
                   {"all_conditions_hold", bound.all_conditions_hold()}};
    report.update(plan_fields(plan));
    if (table.method == LipschitzMethod::ExactSpectral) {
        const LemmaCheck check = verify_lemma(l.pkg, plan, table, probes);
        report["measured_max_error"] = check.measured_max_error;
        report["bound"] = check.bound;
        report["bound_holds"] = check.holds;
        report["guaranteed"] = true;
    } else {
        report["measured_max_error"] = measured_stack_error(l.pkg, plan, probes);
        report["bound"] = bound.u_skip_reuse.value_or(bound.u_skip);
        report["bound_holds"] = nullptr;
        report["guaranteed"] = false;
    }
    write_json(prepare_out(o) / "bound.json", report);
}

// ---------------------------------------------------------------------------
// Argument wiring

void add_io(CLI::App* sub, Options& o, bool calib)
{
    sub->add_option("--model", o.model, "Model package file or directory containing model.skrr");
    if (calib) {
        sub->add_option("--calib", o.calib, "Calibration JSONL file");
    }
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "Seed")->capture_default_str();
    sub->add_option("--threads", o.threads, "Parallelism budget (does not change results)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
}

void add_search(CLI::App* sub, Options& o)
{
    sub->add_option("--k", o.k, "Beam width")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--metric", o.metric, "Discrepancy metric")
        ->check(CLI::IsMember({"mse", "cos"}))
        ->capture_default_str();
    sub->add_flag("--null,!--no-null", o.null, "Include the null-input term (default on)");
    sub->add_flag("--projection,!--no-projection", o.projection, "Measure after the projection layer (default on)");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"Layer skipping and re-use for residual encoders", "skrr"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    auto* gen = app.add_subcommand("gen", "Generate a seeded synthetic model and calibration set");
    add_io(gen, o, false);
    gen->add_option("--blocks", o.blocks, "Transformer blocks L")->capture_default_str();
    gen->add_option("--d-model", o.d_model, "Hidden width")->capture_default_str();
    gen->add_option("--heads", o.heads, "Attention heads")->capture_default_str();
    gen->add_option("--d-ff", o.d_ff, "FFN width (default 2 * d_model)");
    gen->add_option("--d-cond", o.d_cond, "Projection output width")->capture_default_str();
    gen->add_option("--vocab", o.vocab, "Vocabulary size")->capture_default_str();
    gen->add_option("--max-seq-len", o.max_seq_len, "Maximum sequence length")->capture_default_str();
    gen->add_flag("--linear", o.linear, "All-LINEAR stack");
    gen->add_option("--calib-count", o.calib_count, "Calibration sequences")->capture_default_str();
    gen->add_option("--calib-min-len", o.calib_min_len, "Shortest calibration sequence")->capture_default_str();
    gen->add_option("--calib-max-len", o.calib_max_len, "Longest calibration sequence (0 = max-seq-len)")
        ->capture_default_str();
    gen->add_option("--plant", o.plants,
                    "Planted redundancy: NEAR_ZERO:j[:eps], DUPLICATE_OF:j:src or INTERACT_PAIR:a:b (repeatable)");

    auto* order = app.add_subcommand("order", "Compute a skip ordering");
    add_io(order, o, true);
    add_search(order, o);
    order->add_option("--method", o.method, "beam, greedy or bi")
        ->check(CLI::IsMember({"beam", "greedy", "bi"}))
        ->capture_default_str();

    auto* prune = app.add_subcommand("prune", "Shortest ordering prefix reaching a target sparsity");
    add_io(prune, o, true);
    add_search(prune, o);
    prune->add_option("--target", o.target, "Target sparsity in [0, 1]")->required();
    prune->add_option("--ordering", o.ordering, "order.json to prune along (default: run the beam search)");

    auto* reuse = app.add_subcommand("reuse", "Assign adjacent re-use to skipped sub-blocks");
    add_io(reuse, o, true);
    add_search(reuse, o);
    reuse->add_option("--target", o.target, "Target sparsity in [0, 1]");
    reuse->add_option("--plan", o.plan, "Skip-only plan.json to start from");
    reuse->add_option("--ordering", o.ordering, "order.json to prune along / visit in");
    reuse->add_option("--visit", o.visit, "ascending or skip-order")
        ->check(CLI::IsMember({"ascending", "skip-order"}))
        ->capture_default_str();

    auto* eval = app.add_subcommand("eval", "Discrepancy of a plan");
    add_io(eval, o, true);
    add_search(eval, o);
    eval->add_option("--plan", o.plan, "plan.json")->required();

    auto* analyze = app.add_subcommand("analyze", "Similarity matrices and null-feature norms");
    add_io(analyze, o, true);
    analyze->add_option("--plan", o.plans, "plan.json files for the null-norm report (repeatable)");
    analyze->add_option("--tokens", o.tokens, "Random tokens for the sub-block output similarity")
        ->capture_default_str();

    auto* oracle = app.add_subcommand("oracle", "Exhaustive search against beam and greedy prefixes");
    add_io(oracle, o, true);
    add_search(oracle, o);
    oracle->add_option("--max-m", o.max_m, "Largest subset size")->capture_default_str();

    auto* bound = app.add_subcommand("bound", "Error bound of a plan");
    add_io(bound, o, true);
    bound->add_option("--plan", o.plan, "plan.json")->required();
    bound->add_option("--lipschitz", o.lipschitz, "exact (LINEAR stacks) or empirical")
        ->check(CLI::IsMember({"exact", "empirical"}))
        ->capture_default_str();
    bound->add_option("--probes", o.probes, "Probe budget")->check(CLI::PositiveNumber)->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const auto start = std::chrono::steady_clock::now();
    try {
        if (name == "gen") {
            cmd_gen(o);
        } else if (name == "order") {
            cmd_order(o);
        } else if (name == "prune") {
            cmd_prune(o);
        } else if (name == "reuse") {
            cmd_reuse(o);
        } else if (name == "eval") {
            cmd_eval(o);
        } else if (name == "analyze") {
            cmd_analyze(o);
        } else if (name == "oracle") {
            cmd_oracle(o);
        } else if (name == "bound") {
            cmd_bound(o);
        }
    } catch (const UsageError& e) {
        err << "skrr " << name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const UndefinedMetric& e) {
        const char* hint = name == "analyze" ? " (a sub-block with zero output has no direction to compare)"
                                             : " (try --metric mse or --no-null)";
        err << "skrr " << name << ": " << e.what() << hint << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "skrr " << name << ": " << e.what() << "\n";
        return kExitData;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
        write_json(fs::path(o.out) / (name + ".runtime.json"), {{"wall_time_s", seconds}, {"threads", o.threads}});
    } catch (const std::exception& e) {
        err << "skrr " << name << ": " << e.what() << "\n";
        return kExitData;
    }
    out << "skrr " << name << ": wrote " << o.out << "\n";
    return kExitOk;
}

} // namespace skrr::cli
