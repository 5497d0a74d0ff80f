#pragma once

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "qd/archive.hpp"
#include "qd/errors.hpp"
#include "qd/numerics.hpp"

namespace qd {

/// Batch of evaluated solutions, column-aligned with the solution matrix.
struct Evaluation {
    Vec objectives;
    Mat measures;
    /// Archive cells, filled only by domains that locate them while evaluating.
    std::vector<std::size_t> cells;
};

/// A benchmark problem: objective and measures of a solution vector.
class Domain {
public:
    virtual ~Domain() = default;

    virtual std::string name() const = 0;
    virtual std::size_t solution_dim() const = 0;
    virtual std::size_t measure_dim() const = 0;
    virtual Vec measure_lower() const = 0;
    virtual Vec measure_upper() const = 0;
    virtual Vec initial_solution() const = 0;

    /// Pure function of `theta`. Writes measure_dim() values to `measures`;
    /// when cells_known() it also writes the archive cell.
    virtual double evaluate(const double* theta, double* measures, std::size_t* cell) const = 0;
    virtual bool cells_known() const { return false; }

    /// Tessellation the domain prescribes (QDDM domains); null when the
    /// archive is configured separately.
    virtual std::shared_ptr<const Tessellation> tessellation() const { return nullptr; }
};

/// Evaluates every column of `solutions`. With workers > 1 the columns are
/// split over a task arena; each result lands in its own slot, so the output
/// does not depend on the worker count.
inline Evaluation evaluate_batch(const Domain& domain, const Mat& solutions, int workers = 1) {
    if (static_cast<std::size_t>(solutions.rows()) != domain.solution_dim())
        throw DomainError(domain.name() + ": expected solutions of dimension " + std::to_string(domain.solution_dim()));
    const Eigen::Index count = solutions.cols();
    Evaluation ev;
    ev.objectives.resize(count);
    ev.measures.resize(static_cast<Eigen::Index>(domain.measure_dim()), count);
    const bool with_cells = domain.cells_known();
    if (with_cells)
        ev.cells.assign(static_cast<std::size_t>(count), 0);
    auto body = [&](Eigen::Index begin, Eigen::Index end) {
        for (Eigen::Index j = begin; j < end; ++j)
            ev.objectives(j) = domain.evaluate(solutions.col(j).data(), ev.measures.col(j).data(),
                                               with_cells ? &ev.cells[static_cast<std::size_t>(j)] : nullptr);
    };
    if (workers <= 1 || count < 2) {
        body(0, count);
    } else {
        tbb::task_arena arena(workers);
        arena.execute([&] {
            tbb::parallel_for(tbb::blocked_range<Eigen::Index>(0, count), [&](const tbb::blocked_range<Eigen::Index>& r) { body(r.begin(), r.end()); });
        });
    }
    for (Eigen::Index j = 0; j < count; ++j)
        if (!std::isfinite(ev.objectives(j)) || !ev.measures.col(j).allFinite())
            throw DomainError(domain.name() + ": evaluation produced non-finite values");
    return ev;
}

// ---------------------------------------------------------------- Linear Projection

enum class LpObjective { Sphere, Rastrigin, Flat };

inline constexpr double kLpBound = 5.12;
inline constexpr double kLpShift = 0.4 * kLpBound;           // optimum at 2.048
inline constexpr double kLpWorst = -kLpBound - 0.4 * kLpBound; // -7.168

inline double lp_clip(double x) { return std::abs(x) <= kLpBound ? x : kLpBound / x; }

/// Per-dimension Rastrigin term x^2 - 10 cos(2 pi x) + 10.
inline double rastrigin_term(double x) { return x * x - 10.0 * std::cos(2.0 * std::numbers::pi * x) + 10.0; }

/// Block sums of clipped coordinates: k contiguous blocks of n/k entries.
inline Vec lp_measures(const Vec& theta, std::size_t k) {
    const auto n = static_cast<std::size_t>(theta.size());
    if (k == 0 || n % k != 0)
        throw DomainError("lp_measures: k must divide the solution dimension");
    const std::size_t r = n / k;
    Vec m = Vec::Zero(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = j * r; i < (j + 1) * r; ++i)
            m(static_cast<Eigen::Index>(j)) += lp_clip(theta(static_cast<Eigen::Index>(i)));
    return m;
}

/// Normalized objective in [0, 1] on [-7.168, 7.168]^n, evaluated on raw theta.
inline double lp_objective(const double* theta, std::size_t n, LpObjective kind) {
    if (kind == LpObjective::Flat)
        return 1.0;
    const double worst = kLpWorst - kLpShift;
    double raw = 0.0;
    if (kind == LpObjective::Sphere) {
        for (std::size_t i = 0; i < n; ++i)
            raw += (theta[i] - kLpShift) * (theta[i] - kLpShift);
        return 1.0 - raw / (static_cast<double>(n) * worst * worst);
    }
    for (std::size_t i = 0; i < n; ++i)
        raw += rastrigin_term(theta[i] - kLpShift);
    return 1.0 - raw / (static_cast<double>(n) * rastrigin_term(worst));
}

inline double lp_objective(const Vec& theta, LpObjective kind) { return lp_objective(theta.data(), static_cast<std::size_t>(theta.size()), kind); }

inline std::string to_string(LpObjective kind) {
    switch (kind) {
    case LpObjective::Sphere: return "sphere";
    case LpObjective::Rastrigin: return "rastrigin";
    case LpObjective::Flat: return "flat";
    }
    return "?";
}

class LinearProjection final : public Domain {
public:
    LinearProjection(std::size_t n, std::size_t k, LpObjective kind) : n_(n), k_(k), kind_(kind) {
        if (k == 0 || n % k != 0)
            throw DomainError("LinearProjection: k must divide n");
    }

    std::string name() const override { return "lp_" + to_string(kind_) + "_" + std::to_string(k_) + "d"; }
    std::size_t solution_dim() const override { return n_; }
    std::size_t measure_dim() const override { return k_; }
    Vec measure_lower() const override { return Vec::Constant(static_cast<Eigen::Index>(k_), -bound()); }
    Vec measure_upper() const override { return Vec::Constant(static_cast<Eigen::Index>(k_), bound()); }
    Vec initial_solution() const override { return Vec::Zero(static_cast<Eigen::Index>(n_)); }
    LpObjective objective_kind() const { return kind_; }

    double evaluate(const double* theta, double* measures, std::size_t*) const override {
        const std::size_t r = n_ / k_;
        for (std::size_t j = 0; j < k_; ++j) {
            double s = 0.0;
            for (std::size_t i = j * r; i < (j + 1) * r; ++i)
                s += lp_clip(theta[i]);
            measures[j] = s;
        }
        return lp_objective(theta, n_, kind_);
    }

private:
    double bound() const { return kLpBound * static_cast<double>(n_ / k_); }

    std::size_t n_, k_;
    LpObjective kind_;
};

// ---------------------------------------------------------------- Arm Repertoire

inline double clamp_angle(double a) { return std::clamp(a, -std::numbers::pi, std::numbers::pi); }

/// End-effector position of a planar arm with unit links (angles clamped).
inline std::array<double, 2> arm_fk(const double* theta, std::size_t n) {
    double angle = 0.0, x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        angle += clamp_angle(theta[i]);
        x += std::cos(angle);
        y += std::sin(angle);
    }
    return {x, y};
}

inline std::array<double, 2> arm_fk(const Vec& theta) { return arm_fk(theta.data(), static_cast<std::size_t>(theta.size())); }

/// 1 - population variance of the clamped joint angles.
inline double arm_objective(const double* theta, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        mean += clamp_angle(theta[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = clamp_angle(theta[i]) - mean;
        var += d * d;
    }
    return 1.0 - var / static_cast<double>(n);
}

inline double arm_objective(const Vec& theta) { return arm_objective(theta.data(), static_cast<std::size_t>(theta.size())); }

class ArmRepertoire final : public Domain {
public:
    explicit ArmRepertoire(std::size_t n = 100) : n_(n) {
        if (n == 0)
            throw DomainError("ArmRepertoire: need at least one joint");
    }

    std::string name() const override { return "arm"; }
    std::size_t solution_dim() const override { return n_; }
    std::size_t measure_dim() const override { return 2; }
    Vec measure_lower() const override { return Vec::Constant(2, -static_cast<double>(n_)); }
    Vec measure_upper() const override { return Vec::Constant(2, static_cast<double>(n_)); }
    Vec initial_solution() const override { return Vec::Zero(static_cast<Eigen::Index>(n_)); }

    double evaluate(const double* theta, double* measures, std::size_t*) const override {
        const auto [x, y] = arm_fk(theta, n_);
        measures[0] = x;
        measures[1] = y;
        return arm_objective(theta, n_);
    }

private:
    std::size_t n_;
};

// ---------------------------------------------------------------- Triangle Arrangement

inline constexpr std::size_t kTriangleParams = 8;

/// Paints triangles (x0,y0,x1,y1,x2,y2,brightness,alpha per triangle, all
/// clamped to [0,1]) onto a black row-major canvas. A pixel is painted when
/// its centre lies inside the triangle or on an edge.
inline void render_triangles(const double* params, std::size_t triangles, std::size_t width, std::size_t height, double* image) {
    std::fill(image, image + width * height, 0.0);
    const double w = static_cast<double>(width), h = static_cast<double>(height);
    for (std::size_t t = 0; t < triangles; ++t) {
        const double* p = params + t * kTriangleParams;
        std::array<std::array<double, 2>, 3> v;
        for (int i = 0; i < 3; ++i)
            v[static_cast<std::size_t>(i)] = {std::clamp(p[2 * i], 0.0, 1.0) * w, std::clamp(p[2 * i + 1], 0.0, 1.0) * h};
        // Fixed vertex order makes the result independent of how the caller listed them.
        std::sort(v.begin(), v.end());
        const double brightness = std::clamp(p[6], 0.0, 1.0);
        const double alpha = std::clamp(p[7], 0.0, 1.0);
        const double area = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
        if (area == 0.0 || alpha == 0.0)
            continue;
        const double sign = area > 0.0 ? 1.0 : -1.0;
        const double xmin = std::min({v[0][0], v[1][0], v[2][0]}), xmax = std::max({v[0][0], v[1][0], v[2][0]});
        const double ymin = std::min({v[0][1], v[1][1], v[2][1]}), ymax = std::max({v[0][1], v[1][1], v[2][1]});
        const auto px0 = static_cast<std::size_t>(std::max(0.0, std::ceil(xmin - 0.5)));
        const auto px1 = static_cast<std::size_t>(std::clamp(std::floor(xmax - 0.5), -1.0, w - 1.0) + 1.0);
        const auto py0 = static_cast<std::size_t>(std::max(0.0, std::ceil(ymin - 0.5)));
        const auto py1 = static_cast<std::size_t>(std::clamp(std::floor(ymax - 0.5), -1.0, h - 1.0) + 1.0);
        const double paint = alpha * brightness;
        for (std::size_t py = py0; py < py1; ++py) {
            const double cy = static_cast<double>(py) + 0.5;
            for (std::size_t px = px0; px < px1; ++px) {
                const double cx = static_cast<double>(px) + 0.5;
                bool inside = true;
                for (int e = 0; e < 3 && inside; ++e) {
                    const auto& a = v[static_cast<std::size_t>(e)];
                    const auto& b = v[static_cast<std::size_t>((e + 1) % 3)];
                    const double edge = (b[0] - a[0]) * (cy - a[1]) - (b[1] - a[1]) * (cx - a[0]);
                    inside = sign * edge >= 0.0;
                }
                if (inside) {
                    double& pixel = image[py * width + px];
                    pixel = paint + (1.0 - alpha) * pixel;
                }
            }
        }
    }
}

inline Vec render_triangles(const Vec& params, std::size_t width = 28, std::size_t height = 28) {
    if (params.size() % static_cast<Eigen::Index>(kTriangleParams) != 0)
        throw DomainError("render_triangles: parameter count must be a multiple of 8");
    Vec image(static_cast<Eigen::Index>(width * height));
    render_triangles(params.data(), static_cast<std::size_t>(params.size()) / kTriangleParams, width, height, image.data());
    return image;
}

/// 1 - mean squared pixel error.
inline double ta_objective(const Eigen::Ref<const Vec>& image, const Eigen::Ref<const Vec>& centroid) {
    if (image.size() != centroid.size())
        throw DomainError("ta_objective: image shapes differ");
    return 1.0 - (image - centroid).squaredNorm() / static_cast<double>(image.size());
}

/// IDX image file (magic 0x00000803, big-endian sizes, unsigned bytes) as one
/// image per column with pixels scaled to [0, 1].
inline Mat load_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    auto read_u32 = [&]() {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4))
            throw IoError(path + ": truncated IDX header");
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
    };
    if (read_u32() != 0x00000803u)
        throw IoError(path + ": not an IDX image file (bad magic)");
    const std::uint32_t count = read_u32(), rows = read_u32(), cols = read_u32();
    const std::size_t pixels = std::size_t{rows} * cols;
    if (count == 0 || pixels == 0)
        throw IoError(path + ": empty IDX file");
    std::vector<unsigned char> bytes(pixels * count);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw IoError(path + ": truncated IDX data");
    Mat images(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(count));
    for (std::size_t j = 0; j < count; ++j)
        for (std::size_t i = 0; i < pixels; ++i)
            images(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = bytes[j * pixels + i] / 255.0;
    return images;
}

/// `count` distinct columns of `images`, chosen without replacement.
inline Mat subsample_images(const Mat& images, std::size_t count, RngStream& rng) {
    const auto picks = sample_without_replacement(static_cast<std::size_t>(images.cols()), count, rng);
    Mat out(images.rows(), static_cast<Eigen::Index>(picks.size()));
    for (std::size_t i = 0; i < picks.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = images.col(static_cast<Eigen::Index>(picks[i]));
    return out;
}

/// Solutions are triangle parameters, measures are the rendered image, and
/// the objective is 1 - MSE to the nearest dataset image (the archive cell).
class TriangleArrangement final : public Domain {
public:
    TriangleArrangement(Mat centroid_images, std::size_t width = 28, std::size_t height = 28, std::size_t triangles = 30)
        : width_(width), height_(height), triangles_(triangles),
          tess_(std::make_shared<const Tessellation>(cvt_from_dataset(centroid_images))) {
        if (static_cast<std::size_t>(centroid_images.rows()) != width * height)
            throw DomainError("TriangleArrangement: dataset images must have width * height pixels");
    }

    std::string name() const override { return "triangles"; }
    std::size_t solution_dim() const override { return triangles_ * kTriangleParams; }
    std::size_t measure_dim() const override { return width_ * height_; }
    Vec measure_lower() const override { return Vec::Zero(static_cast<Eigen::Index>(measure_dim())); }
    Vec measure_upper() const override { return Vec::Ones(static_cast<Eigen::Index>(measure_dim())); }
    Vec initial_solution() const override { return Vec::Constant(static_cast<Eigen::Index>(solution_dim()), 0.5); }
    bool cells_known() const override { return true; }
    std::shared_ptr<const Tessellation> tessellation() const override { return tess_; }

    double evaluate(const double* theta, double* measures, std::size_t* cell) const override {
        render_triangles(theta, triangles_, width_, height_, measures);
        const Eigen::Map<const Vec> image(measures, static_cast<Eigen::Index>(measure_dim()));
        const std::size_t c = tess_->index_of(image);
        if (cell)
            *cell = c;
        return ta_objective(image, tess_->centroids().col(static_cast<Eigen::Index>(c)));
    }

private:
    std::size_t width_, height_, triangles_;
    std::shared_ptr<const Tessellation> tess_;
};

} // namespace qd
