#include "fixtures.hpp"

#include "skrr/discrepancy.hpp"
#include "skrr/parallel.hpp"

#include <doctest.h>

#include <cmath>

using namespace skrr;
using skrr::test::random_matrix;
using skrr::test::small_config;

namespace {

Matrix row(std::initializer_list<float> v)
{
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (float x : v) {
        m(0, i++) = x;
    }
    return m;
}

double mse_oracle(const Matrix& a, const Matrix& b)
{
    return (a.cast<double>() - b.cast<double>()).squaredNorm() / static_cast<double>(a.size());
}

double cos_oracle(const Matrix& a, const Matrix& b)
{
    const Eigen::MatrixXd x = a.cast<double>();
    const Eigen::MatrixXd y = b.cast<double>();
    return 1.0 - (x.array() * y.array()).sum() / (x.norm() * y.norm());
}

} // namespace

TEST_CASE("project")
{
    EncoderConfig c = small_config();
    c.d_cond = c.d_model;
    ModelPackage pkg = generate_synthetic(c, 1);
    const Matrix h = random_matrix(3, 8, 2);
    pkg.projection = Matrix::Identity(8, 8);
    CHECK(project(pkg, h) == h);
    pkg.projection.setZero();
    CHECK(project(pkg, h).isZero(0.0F));

    EncoderConfig c2 = small_config(1, 2);
    c2.n_heads = 1;
    c2.d_cond = 2;
    ModelPackage p2 = generate_synthetic(c2, 1);
    p2.projection << 1, 0, 0, 2;
    CHECK(project(p2, row({1, 2})) == row({1, 4}));
    CHECK_THROWS_AS(project(p2, row({1, 2, 3})), ShapeError);
}

TEST_CASE("metric1")
{
    const Matrix f = random_matrix(3, 4, 5);
    CHECK(metric1(f, f) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(metric1(f, Matrix(-f)) == doctest::Approx(2.0));
    CHECK(metric1(row({1, 0}), row({1, 1})) == doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(metric1(row({1, 0}), row({1, 1})) == doctest::Approx(0.2929).epsilon(1e-4));
    CHECK_THROWS_AS(metric1(Matrix::Zero(3, 4), f), UndefinedMetric);
    CHECK_THROWS_AS(metric1(f, Matrix::Zero(3, 4)), UndefinedMetric);
    CHECK_THROWS_AS(metric1(f, Matrix::Zero(4, 3)), ShapeError);

    for (std::uint64_t s = 0; s < 20; ++s) {
        const Matrix a = random_matrix(2, 5, s);
        const Matrix b = random_matrix(2, 5, s + 50);
        const double m = metric1(a, b);
        CHECK(m >= 0.0);
        CHECK(m <= 2.0);
        CHECK(m == doctest::Approx(cos_oracle(a, b)).epsilon(1e-9));
        CHECK(metric1(Matrix(a * 4.0F), Matrix(b * 0.25F)) == doctest::Approx(m).epsilon(1e-6));
    }
}

TEST_CASE("metric2")
{
    const Matrix f = random_matrix(3, 4, 5);
    CHECK(metric2(f, f) == 0.0);
    CHECK(metric2(row({1, 2}), row({1, 4})) == 2.0);
    const Matrix shifted = (f.array() + 0.5F).matrix();
    CHECK(metric2(f, shifted) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK_THROWS_AS(metric2(f, Matrix::Zero(4, 3)), ShapeError);

    for (std::uint64_t s = 0; s < 20; ++s) {
        const Matrix a = random_matrix(3, 6, s);
        Matrix b = a;
        CHECK(metric2(a, b) == 0.0);
        b(s % 3, s % 6) = std::nextafter(b(s % 3, s % 6), 100.0F);
        CHECK(metric2(a, b) > 0.0);
        const Matrix c = random_matrix(3, 6, s + 99);
        CHECK(metric2(a, c) == doctest::Approx(mse_oracle(a, c)).epsilon(1e-12));
    }
}

TEST_CASE("get_discrepancy basics")
{
    const EncoderConfig c = small_config(3);
    const ModelPackage pkg = generate_synthetic(c, 6);
    const CalibrationSet calib = generate_calibration(c, 6, 5);

    const DiscrepancyBreakdown none = get_discrepancy(pkg, {}, calib);
    CHECK(none == DiscrepancyBreakdown{0.0, 0.0, 0.0});

    const ExecutionPlan plan{{2, 3}, {}};
    const DiscrepancyBreakdown with_null = get_discrepancy(pkg, plan, calib);
    CHECK(with_null.total == with_null.d_fc + with_null.d_fnull);
    CHECK(with_null.d_fnull > 0.0);

    const DiscrepancyBreakdown no_null = get_discrepancy(pkg, plan, calib, {Metric::Mse, false, true});
    CHECK(no_null.d_fnull == 0.0);
    CHECK(no_null.total == no_null.d_fc);
    CHECK(no_null.d_fc == with_null.d_fc);

    CHECK_THROWS_AS(get_discrepancy(pkg, plan, CalibrationSet{}), Error);
    CHECK_THROWS_AS(get_discrepancy(pkg, ExecutionPlan{{2}, {{2, 1}}}, calib), InvalidPlan);
}

TEST_CASE("evaluator matches an independent recomputation")
{
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const EncoderConfig c = small_config(3);
        const ModelPackage pkg = generate_synthetic(c, seed);
        const CalibrationSet calib = generate_calibration(c, seed, 4);
        for (Metric metric : {Metric::Mse, Metric::Cosine}) {
            const DiscrepancyEvaluator ev(pkg, calib, {metric, true, true});
            for (const ExecutionPlan& plan :
                 {ExecutionPlan{{0}, {}}, ExecutionPlan{{3, 5}, {}}, ExecutionPlan{{1, 4}, {{1, 3}, {4, 2}}}}) {
                const auto dense = test::features_of(pkg, calib, {});
                const auto pruned = test::features_of(pkg, calib, plan);
                double fc = 0.0;
                for (std::size_t s = 0; s < calib.size(); ++s) {
                    fc += metric == Metric::Mse ? mse_oracle(dense[s], pruned[s]) : cos_oracle(dense[s], pruned[s]);
                }
                fc /= static_cast<double>(calib.size());
                const double fnull = metric == Metric::Mse ? mse_oracle(dense.back(), pruned.back())
                                                           : cos_oracle(dense.back(), pruned.back());
                const DiscrepancyBreakdown d = ev.evaluate(plan);
                CHECK(d.d_fc == doctest::Approx(fc).epsilon(1e-4));
                CHECK(d.d_fnull == doctest::Approx(fnull).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("cached dense features give bitwise the same result as full recomputation")
{
    const EncoderConfig c = small_config(3);
    const ModelPackage pkg = generate_synthetic(c, 12);
    const CalibrationSet calib = generate_calibration(c, 12, 5);
    const DiscrepancyEvaluator ev(pkg, calib);
    for (const ExecutionPlan& plan : {ExecutionPlan{{4}, {}}, ExecutionPlan{{1, 5}, {{1, 3}}}}) {
        double acc = 0.0;
        for (const auto& seq : calib.sequences) {
            const Matrix fd = project(pkg, encoder_forward(pkg, seq));
            const Matrix fp = project(pkg, encoder_forward(pkg, seq, plan));
            acc += metric2(fd, fp);
        }
        DiscrepancyBreakdown expected;
        expected.d_fc = acc / static_cast<double>(calib.size());
        expected.d_fnull
            = metric2(project(pkg, encoder_forward(pkg, pkg.null_tokens)), project(pkg, encoder_forward(pkg, pkg.null_tokens, plan)));
        expected.total = expected.d_fc + expected.d_fnull;
        CHECK(ev.evaluate(plan) == expected);

        const auto feats = ev.features(plan);
        for (std::size_t s = 0; s < calib.size(); ++s) {
            CHECK(feats[s] == project(pkg, encoder_forward(pkg, calib.sequences[s], plan)));
        }
    }
}

TEST_CASE("projection off measures final hidden states")
{
    const EncoderConfig c = small_config(2);
    const ModelPackage pkg = generate_synthetic(c, 3);
    const CalibrationSet calib = generate_calibration(c, 3, 3);
    const DiscrepancyEvaluator ev(pkg, calib, {Metric::Mse, true, false});
    const auto feats = ev.features(ExecutionPlan{{1}, {}});
    CHECK(feats[0] == encoder_forward(pkg, calib.sequences[0], ExecutionPlan{{1}, {}}));
    CHECK(feats.back().cols() == c.d_model);
}

TEST_CASE("skipping a planted near-zero sub-block is almost free")
{
    EncoderConfig c;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelPackage pkg = generate_synthetic(c, seed, {{5, RedundancyMode::NearZero, 1e-3}});
        const CalibrationSet calib = generate_calibration(c, seed, 8);
        CHECK(get_discrepancy(pkg, ExecutionPlan{{5}, {}}, calib).total <= 1e-4);
    }
}

TEST_CASE("behaviourally identical plans agree")
{
    const EncoderConfig c = small_config(3);
    ModelPackage pkg = generate_synthetic(c, 8);
    test::zero_sub_block(pkg, 3);
    const CalibrationSet calib = generate_calibration(c, 8, 4);
    const DiscrepancyEvaluator ev(pkg, calib);
    CHECK(std::abs(ev.evaluate(ExecutionPlan{{3}, {}}).total - ev.evaluate({}).total) <= 1e-7);
    CHECK(std::abs(ev.evaluate(ExecutionPlan{{1, 3}, {}}).total - ev.evaluate(ExecutionPlan{{1}, {}}).total) <= 1e-7);
}

TEST_CASE("cosine on a zero null feature is an error")
{
    const EncoderConfig c = small_config(2);
    ModelPackage pkg = generate_synthetic(c, 3);
    pkg.projection.setZero();
    const CalibrationSet calib = generate_calibration(c, 3, 3);
    CHECK_THROWS_AS(get_discrepancy(pkg, ExecutionPlan{{1}, {}}, calib, {Metric::Cosine, true, true}), UndefinedMetric);
    CHECK(get_discrepancy(pkg, ExecutionPlan{{1}, {}}, calib, {Metric::Mse, true, true}).total == 0.0);
}

TEST_CASE("concurrent evaluation matches serial evaluation")
{
    const EncoderConfig c = small_config(3);
    const ModelPackage pkg = generate_synthetic(c, 4);
    const CalibrationSet calib = generate_calibration(c, 4, 6);
    const DiscrepancyEvaluator ev(pkg, calib);
    std::vector<ExecutionPlan> plans;
    for (int a = 0; a < 6; ++a) {
        for (int b = a + 1; b < 6; ++b) {
            plans.push_back(ExecutionPlan{{a, b}, {}});
        }
    }
    std::vector<DiscrepancyBreakdown> serial(plans.size());
    std::vector<DiscrepancyBreakdown> threaded(plans.size());
    parallel_for(plans.size(), 1, [&](std::size_t i) { serial[i] = ev.evaluate(plans[i]); });
    parallel_for(plans.size(), 4, [&](std::size_t i) { threaded[i] = ev.evaluate(plans[i]); });
    CHECK(serial == threaded);
}

TEST_CASE("INTERACT_PAIR: MSE separates the joint skip, cosine does not")
{
    EncoderConfig c;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModelPackage pkg = generate_synthetic(c, seed, {{1, RedundancyMode::InteractPair, 0.0, 3}});
        const CalibrationSet calib = generate_calibration(c, seed, 8);
        const DiscrepancyEvaluator mse(pkg, calib, {Metric::Mse, true, true});
        const DiscrepancyEvaluator cos(pkg, calib, {Metric::Cosine, true, true});
        const ExecutionPlan first{{1}, {}};
        const ExecutionPlan second{{3}, {}};
        const ExecutionPlan both{{1, 3}, {}};
        const double m2_joint = mse.evaluate(both).total;
        const double m1_joint = cos.evaluate(both).total;
        for (const auto& single : {first, second}) {
            CHECK(m2_joint >= 10.0 * mse.evaluate(single).total);
            CHECK(m1_joint < 2.0 * cos.evaluate(single).total);
            CHECK(m1_joint > 0.5 * cos.evaluate(single).total);
        }
    }
}
