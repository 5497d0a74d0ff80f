#pragma once

#include <memory>
#include <vector>

#include "qd/archive.hpp"
#include "qd/discount_model.hpp"

namespace qd::testing {

// Exact per-cell discount: one value per archive cell, updated by replaying
// the threshold rule over each iteration's dataset in order. With this
// source DMS should make exactly the decisions CMA-MAE makes.
class LookupTableDiscount {
public:
    LookupTableDiscount(std::shared_ptr<const Tessellation> tess, double alpha, double f_min)
        : tess_(std::move(tess)), alpha_(alpha), f_min_(f_min), table_(tess_->cell_count(), f_min) {}

    void initialize(RngStream&) { std::fill(table_.begin(), table_.end(), f_min_); }

    Vec evaluate(const Mat& measures) const {
        Vec out(measures.cols());
        for (Eigen::Index j = 0; j < measures.cols(); ++j)
            out(j) = table_[tess_->index_of(measures.col(j))];
        return out;
    }

    double fit(const DiscountDataset& data, RngStream&) {
        for (const auto& s : data) {
            if (s.empty_point)
                continue;
            double& t = table_[tess_->index_of(s.measures)];
            if (s.objective > t)
                t = update_threshold(t, s.objective, alpha_);
        }
        return 0.0;
    }

    double value(std::size_t cell) const { return table_[cell]; }

private:
    std::shared_ptr<const Tessellation> tess_;
    double alpha_;
    double f_min_;
    std::vector<double> table_;
};

} // namespace qd::testing
