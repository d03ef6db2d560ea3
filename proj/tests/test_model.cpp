#include "fixtures.hpp"

#include "skrr/model.hpp"
#include "skrr/synthetic.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>

using namespace skrr;
using skrr::test::random_matrix;
using skrr::test::small_config;

namespace {

using MatD = Eigen::MatrixXd;

MatD rms_rows_ref(const MatD& h, const Eigen::RowVectorXd& gain, double eps)
{
    MatD out(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
        const double ms = h.row(r).squaredNorm() / static_cast<double>(h.cols());
        out.row(r) = h.row(r).cwiseProduct(gain) / std::sqrt(ms + eps);
    }
    return out;
}

// Double-precision textbook forward of one sub-block, written against Eigen
// expressions rather than the library kernels.
MatD sub_block_ref(const EncoderConfig& c, const SubBlockWeights& w, const MatD& h)
{
    if (w.kind == SubBlockKind::Linear) {
        return h * w.w.cast<double>().transpose();
    }
    const MatD x = rms_rows_ref(h, w.norm_gain.cast<double>().row(0), c.norm_eps);
    if (w.kind == SubBlockKind::Ffn) {
        MatD a = x * w.w1.cast<double>();
        a = a.unaryExpr([](double v) { return 0.5 * v * std::erfc(-v / std::sqrt(2.0)); });
        return a * w.w2.cast<double>();
    }
    const MatD q = x * w.wq.cast<double>();
    const MatD k = x * w.wk.cast<double>();
    const MatD v = x * w.wv.cast<double>();
    const int dh = c.d_model / c.n_heads;
    MatD ctx(h.rows(), c.d_model);
    for (int head = 0; head < c.n_heads; ++head) {
        MatD s = q.middleCols(head * dh, dh) * k.middleCols(head * dh, dh).transpose() / std::sqrt(double(dh));
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp().matrix();
            s.row(r) /= s.row(r).sum();
        }
        ctx.middleCols(head * dh, dh) = s * v.middleCols(head * dh, dh);
    }
    return ctx * w.wo.cast<double>();
}

MatD encoder_ref(const ModelPackage& pkg, const std::vector<int>& tokens, const ExecutionPlan& plan)
{
    MatD h(static_cast<Eigen::Index>(tokens.size()), pkg.config.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        h.row(static_cast<Eigen::Index>(i)) = pkg.embedding.row(tokens[i]).cast<double>();
    }
    for (int j = 0; j < pkg.config.num_sub_blocks(); ++j) {
        int src = j;
        if (plan.skip_set.contains(j)) {
            auto it = plan.reuse_map.find(j);
            if (it == plan.reuse_map.end()) {
                continue;
            }
            src = it->second;
        }
        h += sub_block_ref(pkg.config, pkg.sub_blocks[static_cast<std::size_t>(src)], h);
    }
    return rms_rows_ref(h, pkg.final_gain.cast<double>().row(0), pkg.config.norm_eps);
}

std::int64_t params_oracle(const EncoderConfig& c, SubBlockId j)
{
    const std::int64_t d = c.d_model;
    switch (c.kind(j)) {
    case SubBlockKind::Mha:
        return 4 * d * d + d;
    case SubBlockKind::Ffn:
        return 2 * d * c.d_ff + d;
    case SubBlockKind::Linear:
        return d * d;
    }
    return -1;
}

} // namespace

TEST_CASE("config layout and validation")
{
    EncoderConfig c = small_config(3);
    CHECK(c.num_sub_blocks() == 6);
    CHECK(c.kind(0) == SubBlockKind::Mha);
    CHECK(c.kind(1) == SubBlockKind::Ffn);
    CHECK(c.kind(4) == SubBlockKind::Mha);
    CHECK(block_of(5) == 2);
    c.linear_stack = true;
    CHECK(c.kind(3) == SubBlockKind::Linear);

    EncoderConfig bad = small_config();
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), InvalidModel);
    CHECK_THROWS_AS(generate_synthetic(bad, 1), InvalidModel);
}

TEST_CASE("sub_block_forward special cases")
{
    ModelPackage pkg = generate_synthetic(small_config(), 3);
    const Matrix h = random_matrix(5, 8, 11);
    for (int j = 0; j < 4; ++j) {
        ModelPackage z = pkg;
        test::zero_sub_block(z, j);
        CHECK(sub_block_forward(z, j, h).isZero(0.0F));
    }

    ModelPackage ffn = pkg;
    ffn.sub_blocks[1].w2.setZero();
    CHECK(sub_block_forward(ffn, 1, h).isZero(0.0F));

    EncoderConfig lc = small_config(1, 2);
    lc.n_heads = 1;
    lc.linear_stack = true;
    ModelPackage lin = generate_synthetic(lc, 1);
    lin.sub_blocks[0].w = 2.0F * Matrix::Identity(2, 2);
    Matrix ones(1, 2);
    ones << 1.0F, 1.0F;
    Matrix two(1, 2);
    two << 2.0F, 2.0F;
    CHECK(sub_block_forward(lin, 0, ones) == two);

    CHECK_THROWS_AS(sub_block_forward(pkg, 0, random_matrix(2, 7, 1)), ShapeError);
}

TEST_CASE("LINEAR applies W to each row")
{
    EncoderConfig lc = small_config(1, 3);
    lc.n_heads = 1;
    lc.linear_stack = true;
    ModelPackage lin = generate_synthetic(lc, 4);
    Matrix w(3, 3);
    w << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    lin.sub_blocks[0].w = w;
    Matrix x(1, 3);
    x << 1, 0, -1;
    Matrix expected(1, 3); // W * (1, 0, -1)^T
    expected << -2, -2, -2;
    CHECK(sub_block_forward(lin, 0, x) == expected);
}

TEST_CASE("forward matches a double-precision reference")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelPackage pkg = generate_synthetic(small_config(3), seed);
        const std::vector<int> tokens{3, 1, 4, 1, 5, 9};
        for (const ExecutionPlan& plan :
             {ExecutionPlan{}, ExecutionPlan{{1, 2}, {}}, ExecutionPlan{{0, 3}, {{0, 2}, {3, 5}}}}) {
            const Matrix out = encoder_forward(pkg, tokens, plan);
            const MatD ref = encoder_ref(pkg, tokens, plan);
            CHECK((out.cast<double>() - ref).norm() / ref.norm() <= 1e-5);
        }
    }
}

TEST_CASE("attention is permutation equivariant")
{
    const ModelPackage pkg = generate_synthetic(small_config(), 21);
    const Matrix h = random_matrix(5, 8, 2);
    std::vector<int> perm{3, 0, 4, 1, 2};
    Matrix hp(5, 8);
    for (int i = 0; i < 5; ++i) {
        hp.row(i) = h.row(perm[static_cast<std::size_t>(i)]);
    }
    const Matrix out = sub_block_forward(pkg, 0, h);
    const Matrix outp = sub_block_forward(pkg, 0, hp);
    for (int i = 0; i < 5; ++i) {
        CHECK((outp.row(i) - out.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-5F);
    }
}

TEST_CASE("encoder_forward plan semantics")
{
    const ModelPackage pkg = generate_synthetic(small_config(2), 5);
    const std::vector<int> tokens{1, 2, 3, 4};
    const Matrix dense = encoder_forward(pkg, tokens);
    CHECK(encoder_forward(pkg, tokens, ExecutionPlan{}) == dense);

    ExecutionPlan all;
    for (int j = 0; j < 4; ++j) {
        all.skip_set.insert(j);
    }
    CHECK(encoder_forward(pkg, tokens, all) == final_norm(pkg, embed(pkg, tokens)));

    CHECK_THROWS_AS(encoder_forward(pkg, {1, 99}), Error);
    CHECK_THROWS_AS(embed(pkg, {}), Error);
}

TEST_CASE("skipping a NEAR_ZERO sub-block barely moves the output")
{
    const ModelPackage pkg = generate_synthetic(small_config(3), 8, {{3, RedundancyMode::NearZero, 1e-3}});
    const std::vector<int> tokens{5, 6, 7, 8, 9};
    const Matrix dense = encoder_forward(pkg, tokens);
    const Matrix pruned = encoder_forward(pkg, tokens, ExecutionPlan{{3}, {}});
    CHECK(test::relative_l2(dense, pruned) <= 1e-2);
}

TEST_CASE("re-use is pure substitution")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelPackage pkg = generate_synthetic(small_config(3), seed);
        const std::vector<int> tokens{2, 7, 1, 8};
        const ExecutionPlan plan{{1, 2}, {{1, 5}, {2, 0}}};
        ModelPackage explicit_pkg = pkg;
        explicit_pkg.sub_blocks[1] = pkg.sub_blocks[5];
        explicit_pkg.sub_blocks[2] = pkg.sub_blocks[0];
        CHECK(encoder_forward(pkg, tokens, plan) == encoder_forward(explicit_pkg, tokens));
    }
}

TEST_CASE("plan validation")
{
    const EncoderConfig c = small_config(3);
    CHECK_NOTHROW(validate_plan(c, ExecutionPlan{{1, 2}, {{1, 3}}}));
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{6}, {}}), InvalidPlan);
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{-1}, {}}), InvalidPlan);
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{1}, {{3, 5}}}), InvalidPlan); // key not skipped
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{1, 3}, {{1, 3}}}), InvalidPlan); // source skipped
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{1}, {{1, 1}}}), InvalidPlan);
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{1}, {{1, 2}}}), InvalidPlan); // parity
    CHECK_THROWS_AS(validate_plan(c, ExecutionPlan{{1}, {{1, 9}}}), InvalidPlan);

    const ModelPackage pkg = generate_synthetic(c, 1);
    CHECK_THROWS_AS(encoder_forward(pkg, {1, 2}, ExecutionPlan{{1}, {{1, 2}}}), InvalidPlan);
}

TEST_CASE("first_modified")
{
    CHECK(ExecutionPlan{}.first_modified(8) == 8);
    CHECK(ExecutionPlan{{5, 2}, {}}.first_modified(8) == 2);
}

TEST_CASE("parameter accounting")
{
    for (bool linear : {false, true}) {
        EncoderConfig c = small_config(4);
        c.linear_stack = linear;
        const ModelPackage pkg = generate_synthetic(c, 2);
        std::int64_t total = 0;
        for (int j = 0; j < 8; ++j) {
            CHECK(count_params(pkg, j) == params_oracle(c, j));
            total += params_oracle(c, j);
        }
        CHECK(total_stack_params(pkg) == total);

        CHECK(plan_sparsity(pkg, {}) == 0.0);
        ExecutionPlan all;
        for (int j = 0; j < 8; ++j) {
            all.skip_set.insert(j);
        }
        CHECK(plan_sparsity(pkg, all) == 1.0);
        // d_ff = 2 d_model gives 4d^2 + d for both kinds
        CHECK(plan_sparsity(pkg, ExecutionPlan{{3}, {}}) == 0.125);
        CHECK(plan_sparsity(pkg, ExecutionPlan{{3, 5}, {{3, 1}}}) == 0.25);
    }
}

TEST_CASE("sparsity is monotone in the skip set")
{
    EncoderConfig c = small_config(4);
    c.d_ff = 24;
    const ModelPackage pkg = generate_synthetic(c, 2);
    std::vector<int> order(8);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(order.begin(), order.end(), rng);
        ExecutionPlan plan;
        double prev = 0.0;
        for (int j : order) {
            plan.skip_set.insert(j);
            const double s = plan_sparsity(pkg, plan);
            CHECK(s >= prev);
            prev = s;
        }
        CHECK(prev == doctest::Approx(1.0));
    }
}
