#include "skrr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace skrr {

namespace {

using Rng = std::mt19937_64;

void fill_gaussian(Matrix& m, Eigen::Index rows, Eigen::Index cols, float stddev, Rng& rng)
{
    std::normal_distribution<float> dist(0.0F, stddev);
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
}

SubBlockWeights random_sub_block(const EncoderConfig& config, SubBlockKind kind, Rng& rng)
{
    const int d = config.d_model;
    const float sd = 1.0F / std::sqrt(static_cast<float>(d));
    SubBlockWeights w;
    w.kind = kind;
    switch (kind) {
    case SubBlockKind::Mha:
        w.norm_gain = Matrix::Ones(1, d);
        fill_gaussian(w.wq, d, d, sd, rng);
        fill_gaussian(w.wk, d, d, sd, rng);
        fill_gaussian(w.wv, d, d, sd, rng);
        fill_gaussian(w.wo, d, d, sd, rng);
        break;
    case SubBlockKind::Ffn:
        w.norm_gain = Matrix::Ones(1, d);
        fill_gaussian(w.w1, d, config.d_ff, sd, rng);
        fill_gaussian(w.w2, config.d_ff, d, sd, rng);
        break;
    case SubBlockKind::Linear:
        fill_gaussian(w.w, d, d, sd, rng);
        break;
    }
    return w;
}

void check_index(const EncoderConfig& config, SubBlockId j, const std::string& what)
{
    if (j < 0 || j >= config.num_sub_blocks()) {
        throw InvalidModel(what + ": sub-block " + std::to_string(j) + " out of range");
    }
}

float row_rms(const Matrix& row, float eps)
{
    double sq = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        sq += static_cast<double>(row.data()[i]) * row.data()[i];
    }
    return static_cast<float>(std::sqrt(sq / static_cast<double>(row.size()) + eps));
}

Matrix null_feature(const ModelPackage& pkg, const ExecutionPlan& plan)
{
    return matmul(encoder_forward(pkg, pkg.null_tokens, plan), pkg.projection);
}

// Carrier-channel construction for one attempt. Channel 0 is the carrier.
void build_interact_pair(ModelPackage& pkg, SubBlockId a, SubBlockId b, Rng& rng)
{
    const EncoderConfig& cfg = pkg.config;
    const int d = cfg.d_model;
    std::normal_distribution<float> normal(0.0F, 1.0F);

    // Null token excites the carrier; every other token leaves it at zero.
    for (int t = 0; t < cfg.vocab_size; ++t) {
        pkg.embedding(t, 0) = 0.0F;
    }
    for (int c = 1; c < d; ++c) {
        pkg.embedding(kNullToken, c) = normal(rng);
    }
    pkg.embedding(kNullToken, 0) = row_rms(pkg.embedding.row(kNullToken), 0.0F) * std::sqrt(static_cast<float>(d) / (d - 1));

    // Nothing else writes the carrier.
    for (int j = 0; j < cfg.num_sub_blocks(); ++j) {
        if (j != a && j != b) {
            pkg.sub_blocks[static_cast<std::size_t>(j)].output_weight().col(0).setZero();
        }
    }

    // gelu(x) - gelu(-x) == x, so two mirrored hidden units make an exact
    // linear branch F(h)_0 = coeff * rmsnorm(h)_0 inside the FFN.
    auto set_branch = [&](SubBlockId j, float coeff) {
        auto& w = pkg.sub_blocks[static_cast<std::size_t>(j)];
        w.norm_gain = Matrix::Ones(1, d);
        w.w1 = Matrix::Zero(d, cfg.d_ff);
        w.w2 = Matrix::Zero(cfg.d_ff, d);
        w.w1(0, 0) = 1.0F;
        w.w1(0, 1) = -1.0F;
        w.w2(0, 0) = coeff;
        w.w2(1, 0) = -coeff;
    };
    set_branch(a, 0.0F);
    set_branch(b, 0.0F);

    const auto keep = static_cast<float>(1.0 - kInteractResidual);
    std::vector<Matrix> stages;
    run_stack(pkg, embed(pkg, pkg.null_tokens), {}, 0, &stages);
    set_branch(a, -keep * row_rms(stages[static_cast<std::size_t>(a)].row(0), cfg.norm_eps));

    ExecutionPlan skip_a;
    skip_a.skip_set = {a};
    run_stack(pkg, embed(pkg, pkg.null_tokens), skip_a, 0, &stages);
    set_branch(b, -keep * row_rms(stages[static_cast<std::size_t>(b)].row(0), cfg.norm_eps));

    // Projection: the carrier row is scaled so the dense null feature splits
    // evenly between the carrier direction and everything else.
    const Matrix normed = encoder_forward(pkg, pkg.null_tokens);
    Matrix rest = normed.row(0);
    const float carrier = rest(0, 0);
    rest(0, 0) = 0.0F;
    Matrix rest_proj = pkg.projection;
    rest_proj.row(0).setZero();
    const double g = l2_norm(matmul(rest, rest_proj));
    Matrix q(1, cfg.d_cond);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        q(0, i) = normal(rng);
    }
    const double qn = l2_norm(q);
    const double denom = std::max(std::abs(static_cast<double>(carrier)), 1e-30);
    pkg.projection.row(0) = (q * static_cast<float>(g / (qn * denom))).row(0);
}

} // namespace

double NullNormProbe::joint_over_single() const
{
    return std::min(skip_both / skip_first, skip_both / skip_second);
}

NullNormProbe probe_null_norms(const ModelPackage& pkg, SubBlockId first, SubBlockId second)
{
    NullNormProbe p;
    p.dense = l2_norm(null_feature(pkg, {}));
    ExecutionPlan plan;
    plan.skip_set = {first};
    p.skip_first = l2_norm(null_feature(pkg, plan));
    plan.skip_set = {second};
    p.skip_second = l2_norm(null_feature(pkg, plan));
    plan.skip_set = {first, second};
    p.skip_both = l2_norm(null_feature(pkg, plan));
    return p;
}

ModelPackage generate_synthetic(const EncoderConfig& config, std::uint64_t seed, const RedundancySpec& spec)
{
    config.validate();
    Rng rng(seed);

    ModelPackage pkg;
    pkg.config = config;
    pkg.seed = seed;
    pkg.redundancy = spec;
    fill_gaussian(pkg.embedding, config.vocab_size, config.d_model, 1.0F, rng);
    pkg.sub_blocks.reserve(static_cast<std::size_t>(config.num_sub_blocks()));
    for (int j = 0; j < config.num_sub_blocks(); ++j) {
        pkg.sub_blocks.push_back(random_sub_block(config, config.kind(j), rng));
    }
    pkg.final_gain = Matrix::Ones(1, config.d_model);
    fill_gaussian(pkg.projection, config.d_model, config.d_cond, 1.0F / std::sqrt(static_cast<float>(config.d_model)),
                  rng);
    pkg.null_tokens.assign(static_cast<std::size_t>(std::min(4, config.max_seq_len)), kNullToken);

    auto block = [&](SubBlockId j) -> SubBlockWeights& { return pkg.sub_blocks[static_cast<std::size_t>(j)]; };

    for (const auto& r : spec) {
        check_index(config, r.sub_block, to_string(r.mode));
        if (r.mode == RedundancyMode::NearZero) {
            block(r.sub_block).output_weight() *= static_cast<float>(r.epsilon);
        }
    }
    for (const auto& r : spec) {
        if (r.mode != RedundancyMode::DuplicateOf) {
            continue;
        }
        check_index(config, r.other, "DUPLICATE_OF source");
        if (r.other == r.sub_block || config.kind(r.other) != config.kind(r.sub_block)
            || !same_parity(r.other, r.sub_block)) {
            throw InvalidModel("DUPLICATE_OF needs a distinct source of the same kind: " + std::to_string(r.sub_block)
                               + " <- " + std::to_string(r.other));
        }
        block(r.sub_block) = block(r.other);
    }

    for (const auto& r : spec) {
        if (r.mode != RedundancyMode::InteractPair) {
            continue;
        }
        check_index(config, r.other, "INTERACT_PAIR partner");
        const SubBlockId a = std::min(r.sub_block, r.other);
        const SubBlockId b = std::max(r.sub_block, r.other);
        if (a == b || config.kind(a) != SubBlockKind::Ffn || config.kind(b) != SubBlockKind::Ffn) {
            throw InvalidModel("INTERACT_PAIR needs two distinct FFN sub-blocks");
        }
        if (config.d_ff < 2 || config.d_model < 2) {
            throw InvalidModel("INTERACT_PAIR needs d_ff >= 2 and d_model >= 2");
        }
        bool built = false;
        for (int attempt = 0; attempt < kInteractAttempts && !built; ++attempt) {
            ModelPackage trial = pkg;
            Rng trial_rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt + 1)));
            build_interact_pair(trial, a, b, trial_rng);
            const NullNormProbe probe = probe_null_norms(trial, a, b);
            if (std::isfinite(probe.joint_over_single()) && probe.joint_over_single() >= 10.0
                && probe.skip_both / probe.dense >= 10.0) {
                pkg = std::move(trial);
                built = true;
            }
        }
        if (!built) {
            throw Error("INTERACT_PAIR(" + std::to_string(a) + ", " + std::to_string(b) + ") infeasible after "
                        + std::to_string(kInteractAttempts) + " attempts");
        }
    }
    pkg.validate();
    return pkg;
}

} // namespace skrr
