#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "qd/csv.hpp"
#include "qd/kdtree.hpp"
#include "qd/numerics.hpp"

namespace qd {

enum class TessellationKind { Grid, Cvt };
enum class NnBackend { KdTree, BruteForce };

/// Partition of measure space into cells: an axis-aligned grid or a
/// centroidal Voronoi tessellation given by its centroid list.
class Tessellation {
public:
    /// k-d trees lose to a linear scan in high dimension.
    static constexpr std::size_t kMaxKdTreeDim = 20;

    static Tessellation grid(Vec lower, Vec upper, std::vector<int> resolution) {
        if (lower.size() == 0 || lower.size() != upper.size() || static_cast<std::size_t>(lower.size()) != resolution.size())
            throw ArchiveError("grid: bounds and resolution must have the same positive length");
        Tessellation t;
        t.kind_ = TessellationKind::Grid;
        t.dim_ = static_cast<std::size_t>(lower.size());
        t.cells_ = 1;
        for (Eigen::Index j = 0; j < lower.size(); ++j) {
            if (!(lower(j) < upper(j)) || !std::isfinite(lower(j)) || !std::isfinite(upper(j)))
                throw ArchiveError("grid: need finite lower < upper in every dimension");
            if (resolution[static_cast<std::size_t>(j)] < 1)
                throw ArchiveError("grid: resolutions must be >= 1");
            t.cells_ *= static_cast<std::size_t>(resolution[static_cast<std::size_t>(j)]);
        }
        t.lower_ = std::move(lower);
        t.upper_ = std::move(upper);
        t.resolution_ = std::move(resolution);
        return t;
    }

    /// CVT over the given centroids (one per column). Without an explicit
    /// backend a k-d tree is used up to kMaxKdTreeDim measure dimensions.
    static Tessellation cvt(Mat centroids, std::optional<NnBackend> backend = std::nullopt) {
        if (centroids.cols() < 1 || centroids.rows() < 1)
            throw ArchiveError("cvt: need at least one centroid");
        if (!centroids.allFinite())
            throw ArchiveError("cvt: centroids must be finite");
        Tessellation t;
        t.kind_ = TessellationKind::Cvt;
        t.dim_ = static_cast<std::size_t>(centroids.rows());
        t.cells_ = static_cast<std::size_t>(centroids.cols());
        t.backend_ = backend.value_or(t.dim_ <= kMaxKdTreeDim ? NnBackend::KdTree : NnBackend::BruteForce);
        t.lower_ = centroids.rowwise().minCoeff();
        t.upper_ = centroids.rowwise().maxCoeff();
        if (t.backend_ == NnBackend::KdTree)
            t.tree_ = std::make_shared<const KdTree>(centroids);
        t.centroids_ = std::move(centroids);
        return t;
    }

    Tessellation with_backend(NnBackend backend) const {
        if (kind_ != TessellationKind::Cvt)
            throw ArchiveError("with_backend: only CVT tessellations have a nearest-neighbour backend");
        return cvt(centroids_, backend);
    }

    TessellationKind kind() const { return kind_; }
    NnBackend backend() const { return backend_; }
    std::size_t measure_dim() const { return dim_; }
    std::size_t cell_count() const { return cells_; }
    const Mat& centroids() const { return centroids_; }
    const std::vector<int>& resolution() const { return resolution_; }
    /// Grid bounds, or the bounding box of the centroids for a CVT.
    const Vec& lower() const { return lower_; }
    const Vec& upper() const { return upper_; }

    std::size_t index_of(const Eigen::Ref<const Vec>& measures) const {
        if (static_cast<std::size_t>(measures.size()) != dim_)
            throw ArchiveError("index_of: expected " + std::to_string(dim_) + " measures, got " + std::to_string(measures.size()));
        if (!measures.allFinite())
            throw ArchiveError("index_of: non-finite measures");
        if (kind_ == TessellationKind::Grid) {
            std::size_t index = 0;
            for (std::size_t j = 0; j < dim_; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                const int res = resolution_[j];
                const double pos = (measures(jj) - lower_(jj)) / (upper_(jj) - lower_(jj)) * res;
                const int i = static_cast<int>(std::clamp(std::floor(pos), 0.0, static_cast<double>(res - 1)));
                index = index * static_cast<std::size_t>(res) + static_cast<std::size_t>(i);
            }
            return index;
        }
        // Ref<const Vec> has unit inner stride, so data() is contiguous.
        if (backend_ == NnBackend::KdTree)
            return tree_->nearest(measures.data());
        return brute_force_nearest(centroids_, measures.data());
    }

    /// Geometric centre of a grid cell, or the centroid of a CVT cell.
    Vec center(std::size_t cell) const {
        if (cell >= cells_)
            throw ArchiveError("center: cell index out of range");
        if (kind_ == TessellationKind::Cvt)
            return centroids_.col(static_cast<Eigen::Index>(cell));
        Vec c(static_cast<Eigen::Index>(dim_));
        for (std::size_t j = dim_; j-- > 0;) {
            const auto jj = static_cast<Eigen::Index>(j);
            const auto res = static_cast<std::size_t>(resolution_[j]);
            const std::size_t i = cell % res;
            cell /= res;
            c(jj) = lower_(jj) + (static_cast<double>(i) + 0.5) * (upper_(jj) - lower_(jj)) / static_cast<double>(res);
        }
        return c;
    }

private:
    TessellationKind kind_ = TessellationKind::Grid;
    NnBackend backend_ = NnBackend::BruteForce;
    std::size_t dim_ = 0;
    std::size_t cells_ = 0;
    Vec lower_, upper_;
    std::vector<int> resolution_;
    Mat centroids_;
    std::shared_ptr<const KdTree> tree_;
};

struct CvtOptions {
    std::size_t samples = 100'000;
    int lloyd_iterations = 10;
};

/// k-means (k-means++ seeding, then Lloyd iterations) on uniform samples drawn
/// inside the bounds. Centroids come back in seeding order.
inline Tessellation cvt_from_samples(const Vec& lower, const Vec& upper, std::size_t cells, RngStream& rng, CvtOptions opts = {}) {
    if (cells < 1)
        throw ArchiveError("cvt_from_samples: need at least one cell");
    if (cells > opts.samples)
        throw ArchiveError("cvt_from_samples: more cells (" + std::to_string(cells) + ") than samples (" + std::to_string(opts.samples) + ")");
    if (lower.size() == 0 || lower.size() != upper.size() || !((upper - lower).array() > 0.0).all())
        throw ArchiveError("cvt_from_samples: invalid bounds");

    const Eigen::Index k = lower.size();
    const auto n = static_cast<Eigen::Index>(opts.samples);
    const auto m = static_cast<Eigen::Index>(cells);
    Mat samples(k, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index d = 0; d < k; ++d)
            samples(d, j) = rng.uniform(lower(d), upper(d));

    // k-means++ seeding.
    Mat centroids(k, m);
    centroids.col(0) = samples.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    std::vector<double> min_d2(static_cast<std::size_t>(n));
    const auto kk = static_cast<std::size_t>(k);
    for (Eigen::Index j = 0; j < n; ++j)
        min_d2[static_cast<std::size_t>(j)] = squared_distance(samples.col(j).data(), centroids.col(0).data(), kk);
    for (Eigen::Index c = 1; c < m; ++c) {
        double total = 0.0;
        for (double d : min_d2)
            total += d;
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            pick = n - 1;
            for (Eigen::Index j = 0; j < n; ++j) {
                target -= min_d2[static_cast<std::size_t>(j)];
                if (target < 0.0) {
                    pick = j;
                    break;
                }
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centroids.col(c) = samples.col(pick);
        const double* cp = centroids.col(c).data();
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d = squared_distance(samples.col(j).data(), cp, kk);
            auto& slot = min_d2[static_cast<std::size_t>(j)];
            if (d < slot)
                slot = d;
        }
    }

    // Lloyd iterations; an empty cluster keeps its previous centroid.
    for (int it = 0; it < opts.lloyd_iterations; ++it) {
        const Tessellation current = Tessellation::cvt(centroids);
        Mat sums = Mat::Zero(k, m);
        std::vector<std::size_t> counts(static_cast<std::size_t>(m), 0);
        for (Eigen::Index j = 0; j < n; ++j) {
            const std::size_t c = current.index_of(samples.col(j));
            sums.col(static_cast<Eigen::Index>(c)) += samples.col(j);
            ++counts[c];
        }
        for (Eigen::Index c = 0; c < m; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                centroids.col(c) = sums.col(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    return Tessellation::cvt(std::move(centroids));
}

/// CVT whose centroids are the dataset points, in order (one point per column).
inline Tessellation cvt_from_dataset(const Mat& points, std::optional<NnBackend> backend = std::nullopt) {
    if (points.cols() == 0)
        throw ArchiveError("cvt_from_dataset: empty dataset");
    return Tessellation::cvt(points, backend);
}

enum class InsertStatus { Rejected = 0, ImprovedElite = 1, NewElite = 2 };

inline bool improved_archive(InsertStatus s) { return s != InsertStatus::Rejected; }

struct InsertResult {
    InsertStatus status = InsertStatus::Rejected;
    std::size_t cell_index = 0;
    double value_delta = 0.0;
};

/// Threshold annealing t <- (1 - alpha) t + alpha f. Callers gate on f > t.
inline double update_threshold(double threshold, double objective, double alpha) {
    return (1.0 - alpha) * threshold + alpha * objective;
}

/// One elite per cell, plus optional per-cell acceptance thresholds.
class ArchiveStore {
public:
    ArchiveStore(std::shared_ptr<const Tessellation> tessellation, std::size_t solution_dim, double f_min = 0.0, bool with_thresholds = false)
        : tess_(std::move(tessellation)), solution_dim_(solution_dim), f_min_(f_min) {
        if (!tess_)
            throw ArchiveError("ArchiveStore: null tessellation");
        const auto m = static_cast<Eigen::Index>(tess_->cell_count());
        solutions_ = Mat::Zero(static_cast<Eigen::Index>(solution_dim_), m);
        measures_ = Mat::Zero(static_cast<Eigen::Index>(tess_->measure_dim()), m);
        objectives_ = Vec::Zero(m);
        occupied_.assign(tess_->cell_count(), 0);
        if (with_thresholds)
            thresholds_.assign(tess_->cell_count(), f_min_);
    }

    const Tessellation& tessellation() const { return *tess_; }
    std::shared_ptr<const Tessellation> tessellation_ptr() const { return tess_; }
    std::size_t cell_count() const { return tess_->cell_count(); }
    std::size_t solution_dim() const { return solution_dim_; }
    std::size_t measure_dim() const { return tess_->measure_dim(); }
    double f_min() const { return f_min_; }
    std::size_t size() const { return occupied_list_.size(); }
    bool empty() const { return occupied_list_.empty(); }
    bool occupied(std::size_t cell) const { return occupied_.at(cell) != 0; }
    /// Occupied cells in the order they were first filled.
    const std::vector<std::size_t>& occupied_cells() const { return occupied_list_; }

    double objective(std::size_t cell) const { return objectives_(static_cast<Eigen::Index>(cell)); }
    auto solution(std::size_t cell) const { return solutions_.col(static_cast<Eigen::Index>(cell)); }
    auto measures(std::size_t cell) const { return measures_.col(static_cast<Eigen::Index>(cell)); }

    /// `cell_hint` skips the nearest-centroid search when the caller already
    /// located the cell with the same tessellation.
    InsertResult insert(const Eigen::Ref<const Vec>& solution, double objective, const Eigen::Ref<const Vec>& measures,
                        std::optional<std::size_t> cell_hint = std::nullopt) {
        if (!std::isfinite(objective))
            throw ArchiveError("insert: non-finite objective");
        if (static_cast<std::size_t>(solution.size()) != solution_dim_)
            throw ArchiveError("insert: solution dimension mismatch");
        const std::size_t cell = cell_hint ? *cell_hint : tess_->index_of(measures);
        if (cell >= cell_count())
            throw ArchiveError("insert: cell hint out of range");
        const auto c = static_cast<Eigen::Index>(cell);
        InsertResult res;
        res.cell_index = cell;
        if (!occupied_[cell]) {
            res.status = InsertStatus::NewElite;
            res.value_delta = objective - f_min_;
            occupied_[cell] = 1;
            occupied_list_.push_back(cell);
        } else if (objective > objectives_(c)) {
            res.status = InsertStatus::ImprovedElite;
            res.value_delta = objective - objectives_(c);
        } else {
            res.status = InsertStatus::Rejected;
            res.value_delta = objective - objectives_(c);
            return res;
        }
        objectives_(c) = objective;
        solutions_.col(c) = solution;
        measures_.col(c) = measures;
        return res;
    }

    bool has_thresholds() const { return !thresholds_.empty(); }

    double threshold(std::size_t cell) const {
        if (thresholds_.empty())
            throw ArchiveError("threshold: archive was created without thresholds");
        return thresholds_.at(cell);
    }

    /// Anneals the cell's threshold toward `objective` when objective > t_e.
    /// Returns whether the threshold moved.
    bool anneal_threshold(std::size_t cell, double objective, double alpha) {
        if (thresholds_.empty())
            throw ArchiveError("anneal_threshold: archive was created without thresholds");
        double& t = thresholds_.at(cell);
        if (!(objective > t))
            return false;
        t = update_threshold(t, objective, alpha);
        return true;
    }

    double qd_score() const {
        double total = 0.0;
        for (std::size_t i = 0; i < occupied_.size(); ++i)
            if (occupied_[i])
                total += objectives_(static_cast<Eigen::Index>(i));
        return total;
    }

    double coverage() const { return 100.0 * static_cast<double>(size()) / static_cast<double>(cell_count()); }

    /// Uniform draws (with replacement) over occupied cells, one solution per
    /// column; an empty archive yields copies of `fallback`.
    Mat sample_elites(std::size_t count, RngStream& rng, const Vec& fallback) const {
        Mat out(static_cast<Eigen::Index>(solution_dim_), static_cast<Eigen::Index>(count));
        for (std::size_t i = 0; i < count; ++i) {
            if (occupied_list_.empty()) {
                out.col(static_cast<Eigen::Index>(i)) = fallback;
            } else {
                const std::size_t cell = occupied_list_[rng.below(occupied_list_.size())];
                out.col(static_cast<Eigen::Index>(i)) = solutions_.col(static_cast<Eigen::Index>(cell));
            }
        }
        return out;
    }

    /// Up to `count` distinct unoccupied cells (without replacement); returns
    /// their centres as columns. All of them when fewer are available.
    Mat sample_unoccupied_centers(std::size_t count, RngStream& rng) const {
        std::vector<std::size_t> free_cells;
        free_cells.reserve(cell_count() - size());
        for (std::size_t i = 0; i < occupied_.size(); ++i)
            if (!occupied_[i])
                free_cells.push_back(i);
        const auto picks = sample_without_replacement(free_cells.size(), count, rng);
        Mat out(static_cast<Eigen::Index>(measure_dim()), static_cast<Eigen::Index>(picks.size()));
        for (std::size_t i = 0; i < picks.size(); ++i)
            out.col(static_cast<Eigen::Index>(i)) = tess_->center(free_cells[picks[i]]);
        return out;
    }

    /// Snapshot CSV: cell_index, objective, measure_*, [solution_*].
    void write_csv(std::ostream& out, bool with_solutions) const {
        out << "cell_index,objective";
        for (std::size_t j = 0; j < measure_dim(); ++j)
            out << ",measure_" << j;
        if (with_solutions)
            for (std::size_t j = 0; j < solution_dim_; ++j)
                out << ",solution_" << j;
        out << '\n';
        for (std::size_t i = 0; i < occupied_.size(); ++i) {
            if (!occupied_[i])
                continue;
            const auto c = static_cast<Eigen::Index>(i);
            out << i << ',' << csv::format(objectives_(c));
            for (Eigen::Index j = 0; j < measures_.rows(); ++j)
                out << ',' << csv::format(measures_(j, c));
            if (with_solutions)
                for (Eigen::Index j = 0; j < solutions_.rows(); ++j)
                    out << ',' << csv::format(solutions_(j, c));
            out << '\n';
        }
    }

private:
    std::shared_ptr<const Tessellation> tess_;
    std::size_t solution_dim_;
    double f_min_;
    Mat solutions_;
    Mat measures_;
    Vec objectives_;
    std::vector<char> occupied_;
    std::vector<std::size_t> occupied_list_;
    std::vector<double> thresholds_;
};

/// Number of distinct cells hit by a batch of measures (one per column).
inline std::size_t unique_cells(const Mat& measures, const Tessellation& t) {
    std::vector<std::size_t> cells;
    cells.reserve(static_cast<std::size_t>(measures.cols()));
    for (Eigen::Index j = 0; j < measures.cols(); ++j)
        cells.push_back(t.index_of(measures.col(j)));
    std::sort(cells.begin(), cells.end());
    return static_cast<std::size_t>(std::unique(cells.begin(), cells.end()) - cells.begin());
}

inline std::size_t unique_cells(const std::vector<std::size_t>& cells) {
    std::vector<std::size_t> sorted = cells;
    std::sort(sorted.begin(), sorted.end());
    return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

} // namespace qd
