#include "skrr/model.hpp"

#include <cmath>

namespace skrr {

std::string to_string(SubBlockKind kind)
{
    switch (kind) {
    case SubBlockKind::Mha:
        return "MHA";
    case SubBlockKind::Ffn:
        return "FFN";
    case SubBlockKind::Linear:
        return "LINEAR";
    }
    return "?";
}

SubBlockKind parse_sub_block_kind(const std::string& text)
{
    if (text == "MHA") {
        return SubBlockKind::Mha;
    }
    if (text == "FFN") {
        return SubBlockKind::Ffn;
    }
    if (text == "LINEAR") {
        return SubBlockKind::Linear;
    }
    throw InvalidModel("unknown sub-block kind '" + text + "'");
}

std::string to_string(RedundancyMode mode)
{
    switch (mode) {
    case RedundancyMode::NearZero:
        return "NEAR_ZERO";
    case RedundancyMode::DuplicateOf:
        return "DUPLICATE_OF";
    case RedundancyMode::InteractPair:
        return "INTERACT_PAIR";
    }
    return "?";
}

RedundancyMode parse_redundancy_mode(const std::string& text)
{
    if (text == "NEAR_ZERO") {
        return RedundancyMode::NearZero;
    }
    if (text == "DUPLICATE_OF") {
        return RedundancyMode::DuplicateOf;
    }
    if (text == "INTERACT_PAIR") {
        return RedundancyMode::InteractPair;
    }
    throw InvalidModel("unknown redundancy mode '" + text + "'");
}

SubBlockKind EncoderConfig::kind(SubBlockId j) const
{
    if (linear_stack) {
        return SubBlockKind::Linear;
    }
    return j % 2 == 0 ? SubBlockKind::Mha : SubBlockKind::Ffn;
}

void EncoderConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw InvalidModel("invalid encoder config: " + what);
        }
    };
    require(num_blocks >= 1, "num_blocks must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(d_cond >= 1, "d_cond must be >= 1");
    require(vocab_size >= 1, "vocab_size must be >= 1");
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
    require(norm_eps > 0.0F, "norm_eps must be > 0");
}

std::vector<std::pair<std::string, const Matrix*>> SubBlockWeights::tensors() const
{
    switch (kind) {
    case SubBlockKind::Mha:
        return {{"norm_gain", &norm_gain}, {"wq", &wq}, {"wk", &wk}, {"wv", &wv}, {"wo", &wo}};
    case SubBlockKind::Ffn:
        return {{"norm_gain", &norm_gain}, {"w1", &w1}, {"w2", &w2}};
    case SubBlockKind::Linear:
        return {{"w", &w}};
    }
    return {};
}

std::vector<std::pair<std::string, Matrix*>> SubBlockWeights::tensors()
{
    std::vector<std::pair<std::string, Matrix*>> out;
    for (const auto& [name, ptr] : std::as_const(*this).tensors()) {
        out.emplace_back(name, const_cast<Matrix*>(ptr));
    }
    return out;
}

Matrix& SubBlockWeights::output_weight()
{
    return const_cast<Matrix&>(std::as_const(*this).output_weight());
}

const Matrix& SubBlockWeights::output_weight() const
{
    switch (kind) {
    case SubBlockKind::Mha:
        return wo;
    case SubBlockKind::Ffn:
        return w2;
    case SubBlockKind::Linear:
        break;
    }
    return w;
}

std::int64_t SubBlockWeights::param_count() const
{
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors()) {
        n += static_cast<std::int64_t>(t->size());
    }
    return n;
}

double SubBlockWeights::param_norm() const
{
    double acc = 0.0;
    for (const auto& [name, t] : tensors()) {
        acc += squared_norm(*t);
    }
    return std::sqrt(acc);
}

double SubBlockWeights::param_distance(const SubBlockWeights& other) const
{
    if (other.kind != kind) {
        throw InvalidModel("param_distance between different sub-block kinds");
    }
    const auto mine = tensors();
    const auto theirs = other.tensors();
    double acc = 0.0;
    for (std::size_t t = 0; t < mine.size(); ++t) {
        const Matrix& a = *mine[t].second;
        const Matrix& b = *theirs[t].second;
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw ShapeError("param_distance: tensor " + mine[t].first + " shape mismatch");
        }
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

namespace {

void expect_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what)
{
    if (m.rows() != rows || m.cols() != cols) {
        throw InvalidModel(what + " has shape " + shape_of(m) + ", expected " + shape_str(rows, cols));
    }
}

} // namespace

void ModelPackage::validate() const
{
    config.validate();
    const int d = config.d_model;
    expect_shape(embedding, config.vocab_size, d, "embedding");
    expect_shape(final_gain, 1, d, "final_gain");
    expect_shape(projection, d, config.d_cond, "projection");
    if (static_cast<int>(sub_blocks.size()) != config.num_sub_blocks()) {
        throw InvalidModel("expected " + std::to_string(config.num_sub_blocks()) + " sub-blocks, got "
                           + std::to_string(sub_blocks.size()));
    }
    for (int j = 0; j < config.num_sub_blocks(); ++j) {
        const auto& sb = sub_blocks[static_cast<std::size_t>(j)];
        const std::string tag = "sub-block " + std::to_string(j);
        if (sb.kind != config.kind(j)) {
            throw InvalidModel(tag + " is " + to_string(sb.kind) + ", layout requires " + to_string(config.kind(j)));
        }
        switch (sb.kind) {
        case SubBlockKind::Mha:
            expect_shape(sb.norm_gain, 1, d, tag + " norm_gain");
            expect_shape(sb.wq, d, d, tag + " wq");
            expect_shape(sb.wk, d, d, tag + " wk");
            expect_shape(sb.wv, d, d, tag + " wv");
            expect_shape(sb.wo, d, d, tag + " wo");
            break;
        case SubBlockKind::Ffn:
            expect_shape(sb.norm_gain, 1, d, tag + " norm_gain");
            expect_shape(sb.w1, d, config.d_ff, tag + " w1");
            expect_shape(sb.w2, config.d_ff, d, tag + " w2");
            break;
        case SubBlockKind::Linear:
            expect_shape(sb.w, d, d, tag + " w");
            break;
        }
    }
    if (null_tokens.empty() || static_cast<int>(null_tokens.size()) > config.max_seq_len) {
        throw InvalidModel("null_tokens length must be in [1, max_seq_len]");
    }
    for (int t : null_tokens) {
        if (t < 0 || t >= config.vocab_size) {
            throw InvalidModel("null token id " + std::to_string(t) + " out of vocabulary");
        }
    }
}

int ExecutionPlan::first_modified(int num_sub_blocks) const
{
    return skip_set.empty() ? num_sub_blocks : *skip_set.begin();
}

void validate_plan(const EncoderConfig& config, const ExecutionPlan& plan)
{
    const int n = config.num_sub_blocks();
    for (SubBlockId j : plan.skip_set) {
        if (j < 0 || j >= n) {
            throw InvalidPlan("skip index " + std::to_string(j) + " outside [0, " + std::to_string(n) + ")");
        }
    }
    for (const auto& [key, src] : plan.reuse_map) {
        const std::string tag = "reuse " + std::to_string(key) + "->" + std::to_string(src);
        if (!plan.skip_set.contains(key)) {
            throw InvalidPlan(tag + ": key is not skipped");
        }
        if (src < 0 || src >= n) {
            throw InvalidPlan(tag + ": source out of range");
        }
        if (plan.skip_set.contains(src)) {
            throw InvalidPlan(tag + ": source is itself skipped");
        }
        if (key == src) {
            throw InvalidPlan(tag + ": self mapping");
        }
        if (!same_parity(key, src) || config.kind(key) != config.kind(src)) {
            throw InvalidPlan(tag + ": sub-block kinds differ");
        }
    }
}

Matrix embed(const ModelPackage& pkg, const std::vector<int>& tokens)
{
    if (tokens.empty()) {
        throw Error("cannot embed an empty token sequence");
    }
    Matrix h(static_cast<Eigen::Index>(tokens.size()), pkg.config.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (t < 0 || t >= pkg.config.vocab_size) {
            throw Error("unknown token id " + std::to_string(t) + " (vocab_size " + std::to_string(pkg.config.vocab_size)
                        + ")");
        }
        h.row(static_cast<Eigen::Index>(i)) = pkg.embedding.row(t);
    }
    return h;
}

namespace {

Matrix attention(const EncoderConfig& config, const SubBlockWeights& w, const Matrix& h)
{
    const Matrix x = rms_norm_rows<float>(h, w.norm_gain.row(0), config.norm_eps);
    const Matrix q = matmul(x, w.wq);
    const Matrix k = matmul(x, w.wk);
    const Matrix v = matmul(x, w.wv);
    const Eigen::Index dh = config.d_model / config.n_heads;
    const float scale = 1.0F / std::sqrt(static_cast<float>(dh));
    Matrix ctx(h.rows(), config.d_model);
    for (int head = 0; head < config.n_heads; ++head) {
        const Eigen::Index off = head * dh;
        const Matrix qh = q.middleCols(off, dh);
        const Matrix kh = k.middleCols(off, dh);
        const Matrix vh = v.middleCols(off, dh);
        const Matrix scores = matmul_transposed(qh, kh) * scale;
        ctx.middleCols(off, dh) = matmul(softmax_rows(scores), vh);
    }
    return matmul(ctx, w.wo);
}

Matrix feed_forward(const EncoderConfig& config, const SubBlockWeights& w, const Matrix& h)
{
    const Matrix x = rms_norm_rows<float>(h, w.norm_gain.row(0), config.norm_eps);
    return matmul(gelu(matmul(x, w.w1)), w.w2);
}

} // namespace

Matrix sub_block_apply(const EncoderConfig& config, const SubBlockWeights& weights, const Matrix& h)
{
    if (h.cols() != config.d_model) {
        throw ShapeError("sub-block input has " + std::to_string(h.cols()) + " columns, expected d_model "
                         + std::to_string(config.d_model));
    }
    switch (weights.kind) {
    case SubBlockKind::Mha:
        return attention(config, weights, h);
    case SubBlockKind::Ffn:
        return feed_forward(config, weights, h);
    case SubBlockKind::Linear:
        return matmul_transposed(h, weights.w);
    }
    throw InvalidModel("unreachable sub-block kind");
}

Matrix sub_block_forward(const ModelPackage& pkg, SubBlockId j, const Matrix& h)
{
    if (j < 0 || j >= pkg.config.num_sub_blocks()) {
        throw InvalidPlan("sub-block index " + std::to_string(j) + " out of range");
    }
    return sub_block_apply(pkg.config, pkg.sub_blocks[static_cast<std::size_t>(j)], h);
}

Matrix run_stack(const ModelPackage& pkg, Matrix h, const ExecutionPlan& plan, int start, std::vector<Matrix>* stages)
{
    const int n = pkg.config.num_sub_blocks();
    if (stages != nullptr) {
        stages->resize(static_cast<std::size_t>(n + 1));
    }
    for (int j = start; j < n; ++j) {
        if (stages != nullptr) {
            (*stages)[static_cast<std::size_t>(j)] = h;
        }
        if (!plan.skip_set.contains(j)) {
            h += sub_block_forward(pkg, j, h);
        } else if (auto it = plan.reuse_map.find(j); it != plan.reuse_map.end()) {
            h += sub_block_forward(pkg, it->second, h);
        }
    }
    if (stages != nullptr) {
        (*stages)[static_cast<std::size_t>(n)] = h;
    }
    return h;
}

Matrix final_norm(const ModelPackage& pkg, const Matrix& h)
{
    return rms_norm_rows<float>(h, pkg.final_gain.row(0), pkg.config.norm_eps);
}

Matrix encoder_forward(const ModelPackage& pkg, const std::vector<int>& tokens, const ExecutionPlan& plan)
{
    validate_plan(pkg.config, plan);
    return final_norm(pkg, run_stack(pkg, embed(pkg, tokens), plan));
}

std::int64_t count_params(const ModelPackage& pkg, SubBlockId j)
{
    if (j < 0 || j >= pkg.config.num_sub_blocks()) {
        throw InvalidPlan("sub-block index " + std::to_string(j) + " out of range");
    }
    return pkg.sub_blocks[static_cast<std::size_t>(j)].param_count();
}

std::int64_t total_stack_params(const ModelPackage& pkg)
{
    std::int64_t total = 0;
    for (const auto& sb : pkg.sub_blocks) {
        total += sb.param_count();
    }
    return total;
}

double plan_sparsity(const ModelPackage& pkg, const ExecutionPlan& plan)
{
    validate_plan(pkg.config, plan);
    std::int64_t removed = 0;
    for (SubBlockId j : plan.skip_set) {
        removed += count_params(pkg, j);
    }
    return static_cast<double>(removed) / static_cast<double>(total_stack_params(pkg));
}

} // namespace skrr
