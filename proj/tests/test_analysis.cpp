#include "fixtures.hpp"

#include "skrr/analysis.hpp"
#include "skrr/skip_search.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace skrr;
using skrr::test::small_config;

namespace {

void check_symmetric_unit_diagonal(const SimilarityMatrix& m)
{
    for (int a = 0; a < m.size(); ++a) {
        CHECK(std::abs(m.values(a, a) - 1.0) <= 1e-6);
        for (int b = 0; b < m.size(); ++b) {
            CHECK(m.present(a, b) == m.present(b, a));
            if (m.present(a, b)) {
                CHECK(std::abs(m.values(a, b) - m.values(b, a)) <= 1e-6);
                CHECK(m.values(a, b) <= 1.0 + 1e-9);
                CHECK(m.values(a, b) >= -1.0 - 1e-9);
            }
        }
    }
}

} // namespace

TEST_CASE("hidden_similarity_matrix")
{
    const EncoderConfig c = small_config(3);
    const ModelPackage pkg = generate_synthetic(c, 2);
    const CalibrationSet calib = generate_calibration(c, 2, 5);
    const SimilarityMatrix m = hidden_similarity_matrix(pkg, calib);
    CHECK(m.size() == 7);
    check_symmetric_unit_diagonal(m);

    // Tokenwise cosine oracle from independently collected stage states.
    double acc = 0.0;
    std::int64_t count = 0;
    for (const auto& seq : calib.sequences) {
        std::vector<Matrix> stages;
        run_stack(pkg, embed(pkg, seq), {}, 0, &stages);
        for (Eigen::Index t = 0; t < stages[1].rows(); ++t) {
            const Eigen::VectorXd a = stages[1].row(t).cast<double>();
            const Eigen::VectorXd b = stages[4].row(t).cast<double>();
            acc += a.dot(b) / (a.norm() * b.norm());
            ++count;
        }
    }
    CHECK(m.values(1, 4) == doctest::Approx(acc / static_cast<double>(count)).epsilon(1e-9));
    CHECK(m.token_count == count);

    CHECK_THROWS_AS(hidden_similarity_matrix(pkg, CalibrationSet{}), Error);
}

TEST_CASE("hidden similarity of a stack of zero sub-blocks is all ones")
{
    const EncoderConfig c = small_config(2);
    ModelPackage pkg = generate_synthetic(c, 2);
    for (int j = 0; j < 4; ++j) {
        test::zero_sub_block(pkg, j);
    }
    const SimilarityMatrix m = hidden_similarity_matrix(pkg, generate_calibration(c, 1, 3));
    for (int a = 0; a < m.size(); ++a) {
        for (int b = 0; b < m.size(); ++b) {
            CHECK(std::abs(m.values(a, b) - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("a planted near-zero sub-block leaves adjacent stages aligned")
{
    EncoderConfig c;
    const ModelPackage pkg = generate_synthetic(c, 5, {{3, RedundancyMode::NearZero, 1e-3}});
    const SimilarityMatrix m = hidden_similarity_matrix(pkg, generate_calibration(c, 5, 8));
    CHECK(m.values(3, 4) >= 0.999);
}

TEST_CASE("block influence is the hidden-similarity statistic")
{
    EncoderConfig c;
    const ModelPackage pkg = generate_synthetic(c, 7);
    const CalibrationSet calib = generate_calibration(c, 7, 6);
    const SimilarityMatrix m = hidden_similarity_matrix(pkg, calib);
    const BlockOrdering bi = bi_order(pkg, calib);
    for (int b = 0; b < c.num_blocks; ++b) {
        CHECK(bi.influence[static_cast<std::size_t>(b)] == doctest::Approx(1.0 - m.values(2 * b, 2 * b + 2)).epsilon(1e-12));
    }
}

TEST_CASE("block_output_similarity")
{
    EncoderConfig c;
    const ModelPackage pkg = generate_synthetic(c, 3, {{1, RedundancyMode::DuplicateOf, 0.0, 3}});
    const SimilarityMatrix m = block_output_similarity(pkg, 11, 8);
    CHECK(m.size() == 8);
    CHECK(m.token_count == 8);
    check_symmetric_unit_diagonal(m);
    CHECK(m.values(1, 3) >= 0.999);
    CHECK_FALSE(m.present(0, 1));
    CHECK_FALSE(m.present(2, 5));
    CHECK(m.present(0, 6));

    CHECK(similarity_csv(block_output_similarity(pkg, 11, 8)) == similarity_csv(m));

    CHECK_THROWS_AS(block_output_similarity(pkg, 1, 0), Error);
    ModelPackage zeroed = pkg;
    test::zero_sub_block(zeroed, 2);
    CHECK_THROWS_AS(block_output_similarity(zeroed, 1, 4), UndefinedMetric);
}

TEST_CASE("independent random sub-blocks are far from aligned")
{
    EncoderConfig c;
    c.d_model = 64;
    c.d_ff = 128;
    double sum = 0.0;
    int count = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SimilarityMatrix m = block_output_similarity(generate_synthetic(c, seed), seed, 16);
        for (int a = 0; a < m.size(); ++a) {
            for (int b = a + 1; b < m.size(); ++b) {
                if (m.present(a, b)) {
                    sum += std::abs(m.values(a, b));
                    ++count;
                }
            }
        }
    }
    CHECK(sum / count <= 0.5);
}

TEST_CASE("similarity_csv layout")
{
    SimilarityMatrix m;
    m.values = Mat<double>::Constant(2, 2, std::nan(""));
    m.values(0, 0) = 1.0;
    m.values(1, 1) = 1.0;
    m.values(1, 0) = 0.25;
    CHECK(similarity_csv(m) == "index,0,1\n0,1,\n1,0.25,1\n");
}

TEST_CASE("null norm report")
{
    CHECK(null_norm_entry(0.03, 3.34).ratio == doctest::Approx(111.3).epsilon(1e-3));
    CHECK(null_norm_entry(2.0, 2.0).ratio == 1.0);

    EncoderConfig c;
    ModelPackage pkg = generate_synthetic(c, 4, {{1, RedundancyMode::InteractPair, 0.0, 3}});
    const std::vector<ExecutionPlan> plans{{}, ExecutionPlan{{1}, {}}, ExecutionPlan{{1, 3}, {}}};
    const NullNormReport r = null_norm_report(pkg, plans);
    CHECK(r.plans.size() == 3);
    CHECK(r.plans[0].ratio == 1.0);
    CHECK(r.plans[0].norm == r.dense_norm);
    CHECK(r.plans[2].ratio >= 10.0);
    CHECK(r.dense_norm == doctest::Approx(l2_norm(Matrix(encoder_forward(pkg, pkg.null_tokens) * pkg.projection))));

    pkg.projection *= 8.0F;
    const NullNormReport scaled = null_norm_report(pkg, plans);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(scaled.plans[i].ratio == doctest::Approx(r.plans[i].ratio).epsilon(1e-6));
    }
}

TEST_CASE("perturb_null")
{
    const Matrix f = test::random_matrix(4, 16, 3);
    CHECK(perturb_null(f, 0.0, 9) == f);
    CHECK(kDefaultNullPerturbation == 1e-2);
    CHECK(perturb_null(f, 0.01, 5) == perturb_null(f, 0.01, 5));
    CHECK(perturb_null(f, 0.01, 5) != perturb_null(f, 0.01, 6));
    CHECK_THROWS_AS(perturb_null(f, -1.0, 0), Error);

    const double lambda = kDefaultNullPerturbation;
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        acc += (perturb_null(f, lambda, seed).cast<double>() - f.cast<double>()).squaredNorm();
    }
    const double expected = lambda * lambda * static_cast<double>(f.size());
    CHECK(std::abs(acc / 1000.0 - expected) <= 0.05 * expected);
}
