#pragma once

#include "skrr/io.hpp"
#include "skrr/model.hpp"
#include "skrr/synthetic.hpp"

#include <cmath>
#include <random>

namespace skrr::test {

inline EncoderConfig small_config(int blocks = 2, int d_model = 8)
{
    EncoderConfig c;
    c.num_blocks = blocks;
    c.d_model = d_model;
    c.n_heads = 2;
    c.d_ff = 2 * d_model;
    c.d_cond = 4;
    c.vocab_size = 16;
    c.max_seq_len = 8;
    return c;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, float scale = 1.0F)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0F, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = normal(rng);
    }
    return m;
}

inline void zero_sub_block(ModelPackage& pkg, SubBlockId j)
{
    for (auto& [name, t] : pkg.sub_blocks[static_cast<std::size_t>(j)].tensors()) {
        if (name != "norm_gain") {
            t->setZero();
        }
    }
}

/// Every sequence of the calibration set plus the null input through the
/// encoder, projected.
inline std::vector<Matrix> features_of(const ModelPackage& pkg, const CalibrationSet& calib, const ExecutionPlan& plan)
{
    std::vector<Matrix> out;
    for (const auto& seq : calib.sequences) {
        out.push_back(encoder_forward(pkg, seq, plan) * pkg.projection);
    }
    out.push_back(encoder_forward(pkg, pkg.null_tokens, plan) * pkg.projection);
    return out;
}

inline double relative_l2(const Matrix& a, const Matrix& b)
{
    return (a.cast<double>() - b.cast<double>()).norm() / a.cast<double>().norm();
}

} // namespace skrr::test
