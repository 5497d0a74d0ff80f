#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "qd/errors.hpp"
#include "qd/kdtree.hpp"
#include "qd/numerics.hpp"

namespace qd {

/// FIFO buffer of visited measures with an unnormalized Gaussian KDE.
class DensityBuffer {
public:
    DensityBuffer(std::size_t measure_dim, std::size_t capacity, double bandwidth)
        : dim_(measure_dim), capacity_(capacity), bandwidth_(bandwidth), data_(measure_dim * capacity) {
        if (measure_dim == 0 || capacity == 0)
            throw std::invalid_argument("DensityBuffer: dimension and capacity must be positive");
        if (!(bandwidth > 0.0))
            throw std::invalid_argument("DensityBuffer: bandwidth must be positive");
    }

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    double bandwidth() const { return bandwidth_; }

    void push(const Eigen::Ref<const Vec>& measures) {
        if (static_cast<std::size_t>(measures.size()) != dim_)
            throw std::invalid_argument("DensityBuffer::push: dimension mismatch");
        std::copy(measures.data(), measures.data() + dim_, data_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
        head_ = (head_ + 1) % capacity_;
        if (size_ < capacity_)
            ++size_;
    }

    /// Stored entry `i`, oldest first.
    Vec entry(std::size_t i) const {
        const std::size_t slot = (head_ + capacity_ - size_ + i) % capacity_;
        return Eigen::Map<const Vec>(data_.data() + slot * dim_, static_cast<Eigen::Index>(dim_));
    }

    /// Mean of exp(-|q - s|^2 / (2 h^2)) over the buffer; 0 when empty.
    double density(const Eigen::Ref<const Vec>& query) const {
        if (static_cast<std::size_t>(query.size()) != dim_)
            throw std::invalid_argument("DensityBuffer::density: dimension mismatch");
        if (size_ == 0)
            return 0.0;
        const double scale = -1.0 / (2.0 * bandwidth_ * bandwidth_);
        double total = 0.0;
        // Slots 0..size-1 are the live entries whether or not the ring wrapped.
        for (std::size_t i = 0; i < size_; ++i)
            total += std::exp(scale * squared_distance(query.data(), data_.data() + i * dim_, dim_));
        return total / static_cast<double>(size_);
    }

private:
    std::size_t dim_;
    std::size_t capacity_;
    double bandwidth_;
    std::vector<double> data_;
    std::size_t head_ = 0;
    std::size_t size_ = 0;
};

} // namespace qd
