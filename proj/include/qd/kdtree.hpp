#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "qd/numerics.hpp"

namespace qd {

/// Squared Euclidean distance with a fixed summation order (four interleaved
/// partial sums). Every nearest-neighbour backend goes through this function
/// so that their results agree bit for bit.
inline double squared_distance(const double* a, const double* b, std::size_t k) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t i = 0;
    for (; i + 4 <= k; i += 4) {
        const double d0 = a[i] - b[i];
        const double d1 = a[i + 1] - b[i + 1];
        const double d2 = a[i + 2] - b[i + 2];
        const double d3 = a[i + 3] - b[i + 3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    for (std::size_t j = 0; i < k; ++i, ++j) {
        const double d = a[i] - b[i];
        acc[j] += d * d;
    }
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

/// Exact nearest neighbour by linear scan; ties go to the lowest index.
/// `points` holds one point per column.
inline std::size_t brute_force_nearest(const Mat& points, const double* query) {
    const auto k = static_cast<std::size_t>(points.rows());
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < points.cols(); ++c) {
        const double d = squared_distance(points.col(c).data(), query, k);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(c);
        }
    }
    return best;
}

/// Static k-d tree over a fixed point set (one point per column).
/// nearest() is exact and breaks distance ties toward the lowest point index,
/// matching brute_force_nearest().
class KdTree {
public:
    KdTree() = default;

    explicit KdTree(Mat points, std::size_t leaf_size = 8) : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
        order_.resize(static_cast<std::size_t>(points_.cols()));
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (!order_.empty())
            build(0, order_.size());
    }

    std::size_t size() const { return order_.size(); }

    std::size_t nearest(const double* query) const {
        Best best;
        if (!nodes_.empty())
            search(0, query, best);
        return best.index;
    }

private:
    struct Node {
        int dim = -1; // -1 marks a leaf
        double split = 0.0;
        std::size_t left = 0, right = 0;
        std::size_t begin = 0, end = 0;
    };

    struct Best {
        double dist = std::numeric_limits<double>::infinity();
        std::size_t index = std::numeric_limits<std::size_t>::max();

        void offer(double d, std::size_t i) {
            if (d < dist || (d == dist && i < index)) {
                dist = d;
                index = i;
            }
        }
    };

    std::size_t build(std::size_t begin, std::size_t end) {
        const std::size_t id = nodes_.size();
        nodes_.push_back(Node{});
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        if (end - begin <= leaf_size_)
            return id;

        // Split on the dimension of largest spread, at the median.
        const Eigen::Index k = points_.rows();
        int dim = 0;
        double spread = -1.0;
        for (Eigen::Index d = 0; d < k; ++d) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = begin; i < end; ++i) {
                const double v = points_(d, static_cast<Eigen::Index>(order_[i]));
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > spread) {
                spread = hi - lo;
                dim = static_cast<int>(d);
            }
        }
        if (spread <= 0.0)
            return id; // all points coincide

        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                             return points_(dim, static_cast<Eigen::Index>(a)) < points_(dim, static_cast<Eigen::Index>(b));
                         });
        const double split = points_(dim, static_cast<Eigen::Index>(order_[mid]));
        const std::size_t left = build(begin, mid);
        const std::size_t right = build(mid, end);
        nodes_[id].dim = dim;
        nodes_[id].split = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    // Left subtree coordinates are <= split, right subtree coordinates are >= split.
    void search(std::size_t id, const double* q, Best& best) const {
        const Node& node = nodes_[id];
        if (node.dim < 0) {
            const auto k = static_cast<std::size_t>(points_.rows());
            for (std::size_t i = node.begin; i < node.end; ++i) {
                const std::size_t p = order_[i];
                best.offer(squared_distance(points_.col(static_cast<Eigen::Index>(p)).data(), q, k), p);
            }
            return;
        }
        const double diff = q[node.dim] - node.split;
        const std::size_t near = diff < 0.0 ? node.left : node.right;
        const std::size_t far = diff < 0.0 ? node.right : node.left;
        search(near, q, best);
        // Equal bounds must still be visited so lower-index ties are found.
        if (diff * diff <= best.dist)
            search(far, q, best);
    }

    Mat points_;
    std::size_t leaf_size_ = 8;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

} // namespace qd
