#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "qd/errors.hpp"

namespace qd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Counter-based random stream. Draw `i` is a pure function of (key, i), so
/// streams are reproducible bit for bit and children can be derived from a
/// key without touching the parent's position.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0) : seed_(seed), key_(detail::mix64(seed + detail::kGolden)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t key() const { return key_; }
    std::uint64_t position() const { return counter_; }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u64(); }

    std::uint64_t next_u64() { return detail::mix64(key_ + (++counter_) * detail::kGolden); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0)
            throw NumericError("RngStream::below: empty range");
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Deterministic child stream; depends only on this stream's key and `index`.
    RngStream spawn(std::uint64_t index) const {
        RngStream child;
        child.seed_ = seed_;
        child.key_ = detail::mix64(key_ ^ detail::mix64(index * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL));
        return child;
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline RngStream spawn_stream(const RngStream& root, std::uint64_t index) { return root.spawn(index); }

/// Fisher-Yates shuffle driven by RngStream (std::shuffle is not portable).
template <typename T>
void shuffle(std::span<T> items, RngStream& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(items[i - 1], items[j]);
    }
}

/// `count` distinct indices from [0, n) in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, RngStream& rng) {
    count = std::min(count, n);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.below(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

/// Square symmetric matrix. The constructor averages with the transpose, so
/// A(i,j) == A(j,i) holds exactly.
class SymMatrix {
public:
    SymMatrix() = default;

    explicit SymMatrix(const Mat& m) {
        if (m.rows() != m.cols())
            throw NumericError("SymMatrix: matrix is not square");
        data_ = 0.5 * (m + m.transpose());
    }

    static SymMatrix identity(Eigen::Index n) { return SymMatrix(Mat::Identity(n, n)); }

    Eigen::Index order() const { return data_.rows(); }
    const Mat& matrix() const { return data_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return data_(i, j); }

private:
    Mat data_;
};

/// Eigenvalues ascending; eigenvectors are the matching columns.
struct Eigendecomposition {
    Vec values;
    Mat vectors;

    Mat reconstruct() const { return vectors * values.asDiagonal() * vectors.transpose(); }
};

enum class EigenMethod {
    Jacobi,      ///< cyclic Jacobi rotations
    Tridiagonal, ///< Householder reduction + implicit QL (Eigen's SelfAdjointEigenSolver)
};

namespace detail {

inline Eigendecomposition sort_ascending(Vec values, const Mat& vectors) {
    const auto n = values.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values(a) < values(b); });
    Eigendecomposition out;
    out.values.resize(n);
    out.vectors.resize(vectors.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = values(order[static_cast<std::size_t>(i)]);
        out.vectors.col(i) = vectors.col(order[static_cast<std::size_t>(i)]);
    }
    return out;
}

inline Eigendecomposition jacobi_eig(const Mat& input) {
    const Eigen::Index n = input.rows();
    Mat a = input;
    Mat v = Mat::Identity(n, n);
    const double scale = std::max(a.norm(), std::numeric_limits<double>::min());

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q)
                off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * scale)
            break;

        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0)
                    continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    return sort_ascending(a.diagonal(), v);
}

} // namespace detail

inline Eigendecomposition sym_eig(const SymMatrix& m, EigenMethod method = EigenMethod::Jacobi) {
    if (!m.matrix().allFinite())
        throw NumericError("sym_eig: non-finite matrix entries");
    if (m.order() == 0)
        return {};
    if (method == EigenMethod::Jacobi)
        return detail::jacobi_eig(m.matrix());
    Eigen::SelfAdjointEigenSolver<Mat> solver(m.matrix());
    if (solver.info() != Eigen::Success)
        throw NumericError("sym_eig: eigensolver did not converge");
    return detail::sort_ascending(solver.eigenvalues(), solver.eigenvectors());
}

/// Per-axis standard deviations sqrt(max(lambda, 1e-12 * max lambda)).
inline Vec clamped_sqrt_eigenvalues(const Vec& values) {
    const double top = values.size() > 0 ? std::max(values.maxCoeff(), 0.0) : 0.0;
    const double floor = 1e-12 * top;
    return values.unaryExpr([floor](double l) { return std::sqrt(std::max(l, floor)); });
}

/// mean + scale * V diag(sqrt(lambda)) z, drawing `count` samples as columns.
/// Normals are consumed sample by sample, coordinate by coordinate.
inline Mat sample_mvn_batch(const Vec& mean, const Eigendecomposition& eig, double scale, Eigen::Index count, RngStream& rng) {
    const Eigen::Index n = mean.size();
    if (eig.values.size() != n || eig.vectors.rows() != n || eig.vectors.cols() != n)
        throw NumericError("sample_mvn: dimension mismatch between mean and covariance");
    const Vec sd = clamped_sqrt_eigenvalues(eig.values) * scale;
    Mat z(n, count);
    for (Eigen::Index j = 0; j < count; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            z(i, j) = rng.normal();
    Mat out = eig.vectors * (sd.asDiagonal() * z);
    out.colwise() += mean;
    return out;
}

inline Vec sample_mvn(const Vec& mean, const Eigendecomposition& eig, RngStream& rng) {
    return sample_mvn_batch(mean, eig, 1.0, 1, rng).col(0);
}

} // namespace qd
