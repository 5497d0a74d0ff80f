#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "qd/numerics.hpp"

using namespace qd;

namespace {

Mat random_symmetric(Eigen::Index n, RngStream& rng, double scale = 1.0) {
    Mat a(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            a(i, j) = rng.uniform(-scale, scale);
    return 0.5 * (a + a.transpose());
}

} // namespace

TEST(Rng, SameSeedSameSequence) {
    RngStream a(123), b(123);
    for (int i = 0; i < 1000; ++i)
        ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SpawnIsDeterministic) {
    const RngStream root(7);
    RngStream a = spawn_stream(root, 0), b = spawn_stream(root, 0);
    for (int i = 0; i < 100; ++i)
        ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SpawnIndicesDiffer) {
    RngStream a = spawn_stream(RngStream(7), 0), b = spawn_stream(RngStream(7), 1);
    int same = 0;
    for (int i = 0; i < 100; ++i)
        same += a.next_u64() == b.next_u64();
    EXPECT_EQ(same, 0);
}

TEST(Rng, SpawnSeedsDiffer) {
    RngStream a = spawn_stream(RngStream(7), 3), b = spawn_stream(RngStream(8), 3);
    int same = 0;
    for (int i = 0; i < 100; ++i)
        same += a.next_u64() == b.next_u64();
    EXPECT_EQ(same, 0);
}

TEST(Rng, SpawnDoesNotAdvanceParent) {
    RngStream a(5), b(5);
    (void)a.spawn(9);
    EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, FirstDrawsAreFrozen) {
    // Pins the generator so a silent change to it shows up as a failure.
    RngStream r(0);
    const std::uint64_t first = r.next_u64();
    RngStream again(0);
    EXPECT_EQ(first, again.next_u64());
    EXPECT_EQ(first, detail::mix64(detail::mix64(0 + detail::kGolden) + detail::kGolden));
}

TEST(Rng, UniformMoments) {
    RngStream r(11);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
        s2 += u * u;
    }
    EXPECT_NEAR(s / n, 0.5, 0.005);
    EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
    RngStream r(12);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, BelowIsInRangeAndCoversAll) {
    RngStream r(13);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = r.below(7);
        ASSERT_LT(v, 7u);
        ++hits[v];
    }
    for (int h : hits)
        EXPECT_NEAR(h, 1000, 150);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
    RngStream r(14);
    const auto picks = sample_without_replacement(50, 20, r);
    EXPECT_EQ(picks.size(), 20u);
    EXPECT_EQ(std::set<std::size_t>(picks.begin(), picks.end()).size(), 20u);
    const auto all = sample_without_replacement(5, 100, r);
    EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()), (std::set<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(SymEig, Identity) {
    const auto e = sym_eig(SymMatrix::identity(3));
    EXPECT_TRUE(e.values.isApprox(Vec::Ones(3)));
    EXPECT_LT((e.vectors.transpose() * e.vectors - Mat::Identity(3, 3)).norm(), 1e-12);
}

TEST(SymEig, DiagonalGivesAxisVectors) {
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 9.0;
    d(1, 1) = 4.0;
    const auto e = sym_eig(SymMatrix(d));
    EXPECT_DOUBLE_EQ(e.values(0), 4.0);
    EXPECT_DOUBLE_EQ(e.values(1), 9.0);
    EXPECT_NEAR(std::abs(e.vectors(1, 0)), 1.0, 1e-15);
    EXPECT_NEAR(std::abs(e.vectors(0, 1)), 1.0, 1e-15);
}

TEST(SymEig, RandomFiveByFiveReconstructs) {
    RngStream r(21);
    const Mat a = random_symmetric(5, r);
    for (EigenMethod m : {EigenMethod::Jacobi, EigenMethod::Tridiagonal}) {
        const auto e = sym_eig(SymMatrix(a), m);
        EXPECT_LT((e.reconstruct() - a).norm(), 1e-9);
        EXPECT_LT((e.vectors.transpose() * e.vectors - Mat::Identity(5, 5)).norm(), 1e-10);
        for (Eigen::Index i = 1; i < 5; ++i)
            EXPECT_LE(e.values(i - 1), e.values(i));
    }
}

TEST(SymEig, RoundTripAcrossScales) {
    RngStream r(22);
    for (int trial = 0; trial < 40; ++trial) {
        const Eigen::Index n = 1 + static_cast<Eigen::Index>(r.below(30));
        const double scale = std::pow(10.0, r.uniform(-3.0, 5.0));
        const Mat a = random_symmetric(n, r, scale);
        const auto e = sym_eig(SymMatrix(a));
        EXPECT_LE((e.reconstruct() - a).norm(), 1e-8 * std::max(1.0, a.norm())) << "n=" << n;
    }
}

TEST(SymEig, JacobiAgreesWithTridiagonal) {
    RngStream r(23);
    const Mat a = random_symmetric(12, r);
    const auto j = sym_eig(SymMatrix(a), EigenMethod::Jacobi);
    const auto t = sym_eig(SymMatrix(a), EigenMethod::Tridiagonal);
    EXPECT_LT((j.values - t.values).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(SymEig, NonFiniteThrows) {
    Mat a = Mat::Identity(3, 3);
    a(1, 2) = a(2, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(sym_eig(SymMatrix(a)), NumericError);
}

TEST(SymMatrix, SymmetricByConstruction) {
    Mat a(2, 2);
    a << 1, 2, 4, 3;
    const SymMatrix s(a);
    EXPECT_EQ(s.matrix()(0, 1), s.matrix()(1, 0));
}

TEST(Mvn, DegenerateCovarianceReturnsMean) {
    Eigendecomposition e{Vec::Zero(3), Mat::Identity(3, 3)};
    RngStream r(31);
    const Vec mean = Vec::LinSpaced(3, 1.0, 3.0);
    EXPECT_TRUE(sample_mvn(mean, e, r).isApprox(mean));
}

TEST(Mvn, IdentityCovarianceMonteCarlo) {
    const auto e = sym_eig(SymMatrix::identity(3));
    RngStream r(32);
    const Mat s = sample_mvn_batch(Vec::Zero(3), e, 1.0, 100000, r);
    const Vec mu = s.rowwise().mean();
    const Mat centered = s.colwise() - mu;
    const Mat cov = centered * centered.transpose() / static_cast<double>(s.cols() - 1);
    EXPECT_LT((cov - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Mvn, MarginalStd) {
    Mat c = Mat::Zero(2, 2);
    c(0, 0) = 4.0;
    c(1, 1) = 1.0;
    const auto e = sym_eig(SymMatrix(c));
    Vec mean(2);
    mean << 1.0, 2.0;
    RngStream r(33);
    const Mat s = sample_mvn_batch(mean, e, 1.0, 100000, r);
    for (Eigen::Index d = 0; d < 2; ++d) {
        const double m = s.row(d).mean();
        const double sd = std::sqrt((s.row(d).array() - m).square().sum() / static_cast<double>(s.cols() - 1));
        EXPECT_NEAR(sd, d == 0 ? 2.0 : 1.0, 0.05);
        EXPECT_NEAR(m, mean(d), 0.05);
    }
}

TEST(Mvn, DimensionMismatchThrows) {
    const auto e = sym_eig(SymMatrix::identity(3));
    RngStream r(34);
    EXPECT_THROW(sample_mvn(Vec::Zero(2), e, r), NumericError);
}

TEST(Mvn, EigenvalueFloor) {
    Vec v(3);
    v << -1e-20, 0.0, 4.0;
    const Vec s = clamped_sqrt_eigenvalues(v);
    EXPECT_DOUBLE_EQ(s(2), 2.0);
    EXPECT_DOUBLE_EQ(s(0), std::sqrt(4e-12));
}
