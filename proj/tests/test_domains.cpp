#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <fstream>

#include "qd/domains.hpp"

using namespace qd;

namespace {

void write_idx(const std::filesystem::path& path, std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
               const std::vector<unsigned char>& bytes, std::uint32_t magic = 0x00000803u) {
    std::ofstream f(path, std::ios::binary);
    for (std::uint32_t v : {magic, count, rows, cols}) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        f.write(reinterpret_cast<const char*>(b), 4);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Vec triangle(double x0, double y0, double x1, double y1, double x2, double y2, double b, double a) {
    Vec t(8);
    t << x0, y0, x1, y1, x2, y2, b, a;
    return t;
}

} // namespace

TEST(LpClip, Examples) {
    EXPECT_EQ(lp_clip(3.0), 3.0);
    EXPECT_DOUBLE_EQ(lp_clip(10.24), 0.5);
    EXPECT_EQ(lp_clip(-5.12), -5.12);
    EXPECT_DOUBLE_EQ(lp_clip(-10.24), -0.5);
}

TEST(LpMeasures, Examples) {
    EXPECT_TRUE(lp_measures(Vec::Zero(10), 2).isZero());
    Vec t(4);
    t << 1, 2, 10.24, -10.24;
    const Vec m = lp_measures(t, 2);
    EXPECT_DOUBLE_EQ(m(0), 3.0);
    EXPECT_DOUBLE_EQ(m(1), 0.0);
    EXPECT_THROW(lp_measures(Vec::Zero(5), 2), DomainError);
}

TEST(LpMeasures, BoundsFuzz) {
    const LinearProjection d(100, 10, LpObjective::Sphere);
    const Vec lo = d.measure_lower(), hi = d.measure_upper();
    EXPECT_DOUBLE_EQ(hi(0), 51.2);
    RngStream rng(1);
    for (int i = 0; i < 20000; ++i) {
        Vec t(100);
        const double scale = std::pow(10.0, rng.uniform(0.0, 6.0));
        for (Eigen::Index j = 0; j < 100; ++j)
            t(j) = rng.uniform(-scale, scale);
        const Vec m = lp_measures(t, 10);
        ASSERT_TRUE((m.array() >= lo.array()).all() && (m.array() <= hi.array()).all());
    }
}

TEST(LpMeasures, IrwinHallVariance) {
    // Sum of r uniforms on [-5.12, 5.12] has variance r * 10.24^2 / 12.
    RngStream rng(2);
    const int draws = 20000;
    Vec s = Vec::Zero(10), s2 = Vec::Zero(10);
    for (int i = 0; i < draws; ++i) {
        Vec t(100);
        for (Eigen::Index j = 0; j < 100; ++j)
            t(j) = rng.uniform(-kLpBound, kLpBound);
        const Vec m = lp_measures(t, 10);
        s += m;
        s2 += m.cwiseAbs2();
    }
    const double expected = 10.0 * 10.24 * 10.24 / 12.0;
    for (Eigen::Index j = 0; j < 10; ++j) {
        const double mean = s(j) / draws;
        const double var = (s2(j) - draws * mean * mean) / (draws - 1);
        EXPECT_NEAR(var / expected, 1.0, 0.05) << "measure " << j;
    }
}

TEST(LpObjective, Anchors) {
    EXPECT_DOUBLE_EQ(lp_objective(Vec::Constant(20, 2.048), LpObjective::Sphere), 1.0);
    EXPECT_DOUBLE_EQ(lp_objective(Vec::Constant(20, 2.048), LpObjective::Rastrigin), 1.0);
    EXPECT_NEAR(lp_objective(Vec::Constant(20, -7.168), LpObjective::Sphere), 0.0, 1e-15);
    EXPECT_NEAR(lp_objective(Vec::Constant(20, -7.168), LpObjective::Rastrigin), 0.0, 1e-15);
    EXPECT_NEAR(lp_objective(Vec::Zero(100), LpObjective::Sphere), 1.0 - 2.048 * 2.048 / (9.216 * 9.216), 1e-15);
    EXPECT_NEAR(lp_objective(Vec::Zero(100), LpObjective::Sphere), 0.9506, 1e-4);
    EXPECT_EQ(lp_objective(Vec::Constant(3, 1e9), LpObjective::Flat), 1.0);
}

TEST(LpObjective, RangeOnNormalizationBox) {
    RngStream rng(3);
    for (int i = 0; i < 10000; ++i) {
        Vec t(10);
        for (Eigen::Index j = 0; j < 10; ++j)
            t(j) = rng.uniform(-7.168, 7.168);
        for (LpObjective k : {LpObjective::Sphere, LpObjective::Rastrigin}) {
            const double f = lp_objective(t, k);
            ASSERT_GE(f, 0.0);
            ASSERT_LE(f, 1.0);
        }
    }
}

TEST(LinearProjection, EvaluateUsesRawThetaForObjective) {
    const LinearProjection d(4, 2, LpObjective::Sphere);
    Vec t(4);
    t << 10.24, 0, 0, 0;
    double m[2];
    const double f = d.evaluate(t.data(), m, nullptr);
    EXPECT_DOUBLE_EQ(f, lp_objective(t, LpObjective::Sphere));
    EXPECT_DOUBLE_EQ(m[0], 0.5);
    EXPECT_EQ(d.name(), "lp_sphere_2d");
}

TEST(Arm, Examples) {
    const auto straight = arm_fk(Vec::Zero(100));
    EXPECT_DOUBLE_EQ(straight[0], 100.0);
    EXPECT_DOUBLE_EQ(straight[1], 0.0);
    Vec t(2);
    t << std::numbers::pi / 2, std::numbers::pi / 2;
    const auto p = arm_fk(t);
    EXPECT_NEAR(p[0], -1.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(arm_objective(Vec::Constant(5, 0.7)), 1.0);
    Vec e(2);
    e << std::numbers::pi, -std::numbers::pi;
    EXPECT_NEAR(arm_objective(e), 1.0 - std::numbers::pi * std::numbers::pi, 1e-12);
}

TEST(Arm, ComplexProductOracle) {
    RngStream rng(4);
    for (int c = 0; c < 1000; ++c) {
        Vec t(100);
        for (Eigen::Index j = 0; j < 100; ++j)
            t(j) = rng.uniform(-4.0, 4.0);
        std::complex<double> rot(1.0, 0.0), pos(0.0, 0.0);
        for (Eigen::Index j = 0; j < 100; ++j) {
            rot *= std::polar(1.0, std::clamp(t(j), -std::numbers::pi, std::numbers::pi));
            pos += rot;
        }
        const auto p = arm_fk(t);
        ASSERT_NEAR(p[0], pos.real(), 1e-12);
        ASSERT_NEAR(p[1], pos.imag(), 1e-12);
        ASSERT_LE(std::hypot(p[0], p[1]), 100.0 + 1e-12);
    }
}

TEST(Render, TransparentIsBlack) {
    RngStream rng(5);
    Vec p(240);
    for (Eigen::Index i = 0; i < 240; ++i)
        p(i) = i % 8 == 7 ? 0.0 : rng.uniform();
    EXPECT_TRUE(render_triangles(p).isZero());
}

TEST(Render, FullCoverageIsWhite) {
    // Two opaque white triangles tiling the square.
    Vec p(16);
    p << triangle(0, 0, 1, 0, 0, 1, 1, 1), triangle(1, 0, 1, 1, 0, 1, 1, 1);
    EXPECT_TRUE((render_triangles(p).array() == 1.0).all());
}

TEST(Render, LaterTriangleOnTop) {
    Vec p(16);
    p << triangle(0, 0, 1, 0, 0, 1, 0.3, 1), triangle(0, 0, 0.6, 0, 0, 0.6, 0.8, 1);
    const Vec img = render_triangles(p);
    EXPECT_EQ(img(0), 0.8);
    EXPECT_EQ(img(20 * 28 + 2), 0.3);
}

TEST(Render, AlphaCompositing) {
    Vec p(16);
    p << triangle(0, 0, 1, 0, 0, 1, 1.0, 1), triangle(0, 0, 1, 0, 0, 1, 0.0, 0.25);
    EXPECT_DOUBLE_EQ(render_triangles(p)(0), 0.75);
}

TEST(Render, HalfPlaneCountMatchesOracle) {
    // Independent count: pixel centres (x+.5, y+.5) with x + y <= 14 inside (0,0),(14,0),(0,14).
    Vec p = triangle(0, 0, 0.5, 0, 0, 0.5, 1, 1);
    const Vec img = render_triangles(p);
    int expected = 0;
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x)
            expected += (x + 0.5) + (y + 0.5) <= 14.0;
    EXPECT_EQ(img.sum(), expected);
}

TEST(Render, VertexPermutationInvariance) {
    RngStream rng(6);
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (int c = 0; c < 200; ++c) {
        Vec p(240);
        for (Eigen::Index i = 0; i < 240; ++i)
            p(i) = rng.uniform(-0.1, 1.1);
        const Vec ref = render_triangles(p);
        for (const auto& perm : perms) {
            Vec q = p;
            for (Eigen::Index t = 0; t < 30; ++t)
                for (int v = 0; v < 3; ++v) {
                    q(t * 8 + 2 * v) = p(t * 8 + 2 * perm[v]);
                    q(t * 8 + 2 * v + 1) = p(t * 8 + 2 * perm[v] + 1);
                }
            ASSERT_EQ(render_triangles(q), ref);
        }
    }
}

TEST(TaObjective, Examples) {
    const Vec a = Vec::Constant(784, 0.3);
    EXPECT_EQ(ta_objective(a, a), 1.0);
    EXPECT_EQ(ta_objective(Vec::Zero(784), Vec::Ones(784)), 0.0);
    EXPECT_THROW(ta_objective(Vec::Zero(3), Vec::Zero(4)), DomainError);
}

TEST(Idx, ParsesAndScales) {
    const auto path = std::filesystem::temp_directory_path() / "qd_test_images.idx";
    write_idx(path, 2, 2, 2, {0, 255, 51, 102, 255, 255, 0, 0});
    const Mat m = load_idx(path.string());
    EXPECT_EQ(m.rows(), 4);
    EXPECT_EQ(m.cols(), 2);
    EXPECT_EQ(m(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(m(2, 0), 0.2);
    EXPECT_EQ(m(3, 1), 0.0);
    std::filesystem::remove(path);
}

TEST(Idx, BadFilesThrow) {
    const auto dir = std::filesystem::temp_directory_path();
    write_idx(dir / "qd_bad_magic.idx", 1, 1, 1, {0}, 0x00000801u);
    write_idx(dir / "qd_truncated.idx", 3, 2, 2, {1, 2, 3});
    write_idx(dir / "qd_empty.idx", 0, 28, 28, {});
    EXPECT_THROW(load_idx((dir / "qd_bad_magic.idx").string()), IoError);
    EXPECT_THROW(load_idx((dir / "qd_truncated.idx").string()), IoError);
    EXPECT_THROW(load_idx((dir / "qd_empty.idx").string()), IoError);
    EXPECT_THROW(load_idx((dir / "qd_missing.idx").string()), IoError);
    for (const char* f : {"qd_bad_magic.idx", "qd_truncated.idx", "qd_empty.idx"})
        std::filesystem::remove(dir / f);
}

TEST(Idx, BundledMnistSubset) {
    const Mat m = load_idx(std::string(QD_DATA_DIR) + "/mnist5k-images-idx3-ubyte");
    EXPECT_EQ(m.rows(), 784);
    EXPECT_EQ(m.cols(), 5000);
    EXPECT_GE(m.minCoeff(), 0.0);
    EXPECT_LE(m.maxCoeff(), 1.0);
}

TEST(Subsample, DistinctAndDeterministic) {
    Mat m(1, 100);
    for (Eigen::Index j = 0; j < 100; ++j)
        m(0, j) = static_cast<double>(j);
    RngStream a(7), b(7);
    const Mat x = subsample_images(m, 30, a);
    EXPECT_EQ(x, subsample_images(m, 30, b));
    std::set<double> s(x.data(), x.data() + x.size());
    EXPECT_EQ(s.size(), 30u);
}

TEST(TriangleArrangement, ObjectiveAgainstAssignedCentroid) {
    Mat data(784, 2);
    data.col(0).setZero();
    data.col(1).setOnes();
    const TriangleArrangement d(data);
    EXPECT_EQ(d.solution_dim(), 240u);
    EXPECT_EQ(d.tessellation()->cell_count(), 2u);
    Vec p = Vec::Zero(240);
    std::vector<double> m(784);
    std::size_t cell = 99;
    EXPECT_EQ(d.evaluate(p.data(), m.data(), &cell), 1.0);
    EXPECT_EQ(cell, 0u);
    p.head(16) << triangle(0, 0, 1, 0, 0, 1, 1, 1), triangle(1, 0, 1, 1, 0, 1, 1, 1);
    EXPECT_EQ(d.evaluate(p.data(), m.data(), &cell), 1.0);
    EXPECT_EQ(cell, 1u);
}

TEST(EvaluateBatch, WorkerCountDoesNotChangeResults) {
    const LinearProjection d(20, 2, LpObjective::Rastrigin);
    RngStream rng(8);
    Mat s(20, 64);
    for (Eigen::Index i = 0; i < s.size(); ++i)
        s(i) = rng.uniform(-20, 20);
    const auto a = evaluate_batch(d, s, 1), b = evaluate_batch(d, s, 4);
    EXPECT_EQ(a.objectives, b.objectives);
    EXPECT_EQ(a.measures, b.measures);
    EXPECT_THROW(evaluate_batch(d, Mat::Zero(19, 2)), DomainError);
}

TEST(EvaluateBatch, NonFiniteIsRejected) {
    const LinearProjection d(2, 2, LpObjective::Sphere);
    Mat s = Mat::Zero(2, 1);
    s(0, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(evaluate_batch(d, s), DomainError);
}
