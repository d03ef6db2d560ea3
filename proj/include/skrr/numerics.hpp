#pragma once

// Dense primitives behind the encoder forward pass. Storage is Eigen; every
// reduction here walks indices in ascending order so results are reproducible
// bit for bit across runs and thread counts.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skrr {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = Mat<float>;
using Vector = RowVec<float>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols)
{
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

template <typename Derived>
std::string shape_of(const Eigen::DenseBase<Derived>& m)
{
    return shape_str(m.rows(), m.cols());
}

inline constexpr float kDefaultNormEps = 1e-6F;
inline constexpr float kMinNormEps = 1e-12F;

/// Matrix product with out(i,j) accumulated over ascending inner index.
template <typename Scalar>
Mat<Scalar> matmul(const Mat<Scalar>& a, const Mat<Scalar>& b)
{
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + shape_of(a) + " x " + shape_of(b));
    }
    Mat<Scalar> out = Mat<Scalar>::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index k = 0; k < a.cols(); ++k) {
            const Scalar aik = a(i, k);
            for (Eigen::Index j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

/// a * b^T, same summation contract as matmul.
template <typename Scalar>
Mat<Scalar> matmul_transposed(const Mat<Scalar>& a, const Mat<Scalar>& b)
{
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_transposed: shape mismatch " + shape_of(a) + " x " + shape_of(b) + "^T");
    }
    Mat<Scalar> out(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            Scalar acc = 0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) {
                acc += a(i, k) * b(j, k);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& a)
{
    Mat<Scalar> out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        Scalar mx = a(i, 0);
        for (Eigen::Index j = 1; j < a.cols(); ++j) {
            mx = std::max(mx, a(i, j));
        }
        Scalar sum = 0;
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out(i, j) = std::exp(a(i, j) - mx);
            sum += out(i, j);
        }
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out(i, j) /= sum;
        }
    }
    return out;
}

/// out[i] = gain[i] * row[i] / sqrt(mean(row^2) + eps); eps is floored at 1e-12.
template <typename Scalar>
RowVec<Scalar> rms_norm(const RowVec<Scalar>& row, const RowVec<Scalar>& gain, Scalar eps = kDefaultNormEps)
{
    if (row.size() != gain.size()) {
        throw ShapeError("rms_norm: row length " + std::to_string(row.size()) + " != gain length "
                         + std::to_string(gain.size()));
    }
    // Computed in double and rounded once, so positive rescaling of the row
    // changes the result by at most an ulp or so.
    const double e = std::max(static_cast<double>(eps), static_cast<double>(kMinNormEps));
    double sq = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        sq += static_cast<double>(row[i]) * static_cast<double>(row[i]);
    }
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(row.size()) + e);
    RowVec<Scalar> out(row.size());
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        out[i] = static_cast<Scalar>(static_cast<double>(gain[i]) * (static_cast<double>(row[i]) * inv));
    }
    return out;
}

/// Row-wise rms_norm over a token matrix.
template <typename Scalar>
Mat<Scalar> rms_norm_rows(const Mat<Scalar>& h, const RowVec<Scalar>& gain, Scalar eps = kDefaultNormEps)
{
    Mat<Scalar> out(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
        out.row(r) = rms_norm<Scalar>(h.row(r), gain, eps);
    }
    return out;
}

/// Exact-erf GELU, x * Phi(x).
template <typename Scalar>
Scalar gelu(Scalar x)
{
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Mat<Scalar> gelu(const Mat<Scalar>& a)
{
    return a.unaryExpr([](Scalar x) { return gelu(x); });
}

/// Sum of squares accumulated in double, ascending over flattened row-major data.
template <typename Derived>
double squared_norm(const Eigen::DenseBase<Derived>& a)
{
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double v = static_cast<double>(a(i, j));
            acc += v * v;
        }
    }
    return acc;
}

template <typename Derived>
double l2_norm(const Eigen::DenseBase<Derived>& a)
{
    return std::sqrt(squared_norm(a));
}

template <typename DerivedA, typename DerivedB>
double flat_dot(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("flat_dot: shape mismatch " + shape_of(a) + " vs " + shape_of(b));
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            acc += static_cast<double>(a(i, j)) * static_cast<double>(b(i, j));
        }
    }
    return acc;
}

/// Cosine of two flattened arrays, clamped to [-1, 1]. Throws on a zero-norm input.
template <typename DerivedA, typename DerivedB>
double flat_cosine(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b)
{
    const double na = squared_norm(a);
    const double nb = squared_norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw Error("cosine of a zero-norm vector is undefined");
    }
    const double c = flat_dot(a, b) / std::sqrt(na * nb);
    return std::clamp(c, -1.0, 1.0);
}

} // namespace skrr
