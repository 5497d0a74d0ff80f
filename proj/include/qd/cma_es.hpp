#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "qd/archive.hpp"
#include "qd/numerics.hpp"

namespace qd {

enum class SelectionRule { Mu, Filter };

struct RestartRule {
    enum class Kind { Basic, FixedInterval, NoImprovement };
    Kind kind = Kind::Basic;
    int interval = 0;

    static RestartRule basic() { return {Kind::Basic, 0}; }
    static RestartRule fixed_interval(int r) {
        if (r < 1)
            throw std::invalid_argument("restart interval must be >= 1");
        return {Kind::FixedInterval, r};
    }
    static RestartRule no_improvement() { return {Kind::NoImprovement, 0}; }

    bool operator==(const RestartRule&) const = default;
};

/// Recombination weights and learning rates for `num_parents` parents in
/// dimension n (default CMA-ES settings).
struct CmaParameters {
    Vec weights;
    double mueff = 0.0;
    double cc = 0.0;
    double cs = 0.0;
    double c1 = 0.0;
    double cmu = 0.0;
    double damps = 0.0;

    static CmaParameters make(Eigen::Index n, Eigen::Index num_parents) {
        CmaParameters p;
        const double nd = static_cast<double>(n);
        p.weights.resize(num_parents);
        for (Eigen::Index i = 0; i < num_parents; ++i)
            p.weights(i) = std::log(static_cast<double>(num_parents) + 0.5) - std::log(static_cast<double>(i + 1));
        p.weights /= p.weights.sum();
        p.mueff = 1.0 / p.weights.squaredNorm();
        p.cc = (4.0 + p.mueff / nd) / (nd + 4.0 + 2.0 * p.mueff / nd);
        p.cs = (p.mueff + 2.0) / (nd + p.mueff + 5.0);
        p.c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + p.mueff);
        p.cmu = std::min(1.0 - p.c1, 2.0 * (p.mueff - 2.0 + 1.0 / p.mueff) / ((nd + 2.0) * (nd + 2.0) + p.mueff));
        p.damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((p.mueff - 1.0) / (nd + 1.0)) - 1.0) + p.cs;
        return p;
    }
};

struct CmaOptions {
    /// Recompute the eigensystem only after enough evaluations have passed
    /// for the covariance to change appreciably.
    bool lazy_eigen = true;
    double max_condition = 1e14;
    double min_area_ratio = 1e-12;
    double flat_tolerance = 1e-12;
};

/// One CMA-ES instance. The sampling covariance is sigma^2 * C.
class CmaState {
public:
    CmaState(Vec mean, double sigma0, Eigen::Index batch_size, CmaOptions opts = {})
        : n_(mean.size()), batch_size_(batch_size), sigma0_(sigma0), opts_(opts) {
        if (batch_size < 2)
            throw std::invalid_argument("CmaState: batch size must be >= 2");
        if (!(sigma0 > 0.0))
            throw std::invalid_argument("CmaState: sigma0 must be positive");
        const CmaParameters p = CmaParameters::make(n_, batch_size_ / 2);
        lazy_gap_evals_ = 0.5 * static_cast<double>(n_) * static_cast<double>(batch_size_) / (p.c1 + p.cmu) /
                          (static_cast<double>(n_) * static_cast<double>(n_));
        reset(std::move(mean), sigma0);
    }

    Eigen::Index dim() const { return n_; }
    Eigen::Index batch_size() const { return batch_size_; }
    const Vec& mean() const { return mean_; }
    double sigma() const { return sigma_; }
    double sigma0() const { return sigma0_; }
    const Mat& covariance() const { return cov_; }
    const Vec& path_sigma() const { return ps_; }
    const Vec& path_c() const { return pc_; }
    const Eigendecomposition& eigensystem() const { return eig_; }
    /// Generations (tell calls) since the last reset.
    long generation() const { return generation_; }
    bool restart_pending() const { return restart_pending_; }

    double condition_number() const {
        const double lo = eig_.values.minCoeff();
        return lo > 0.0 ? eig_.values.maxCoeff() / lo : std::numeric_limits<double>::infinity();
    }

    /// Draws a batch (one solution per column) from N(mean, sigma^2 C).
    Mat ask(RngStream& rng) {
        refresh_eigensystem(false);
        return sample_mvn_batch(mean_, eig_, sigma_, batch_size_, rng);
    }

    /// Adapts the distribution from a best-first ranking of `solutions`.
    /// Only the ranking (and, for Filter, the statuses) is used.
    void tell(const Mat& solutions, std::span<const std::size_t> ranking, SelectionRule selection,
              std::span<const InsertStatus> statuses = {}) {
        const auto lambda = solutions.cols();
        if (static_cast<Eigen::Index>(ranking.size()) != lambda || solutions.rows() != n_)
            throw std::invalid_argument("CmaState::tell: ranking/solutions size mismatch");
        evals_ += static_cast<double>(lambda);
        ++generation_;

        std::vector<std::size_t> parents;
        if (selection == SelectionRule::Mu) {
            parents.assign(ranking.begin(), ranking.begin() + lambda / 2);
        } else {
            if (static_cast<Eigen::Index>(statuses.size()) != lambda)
                throw std::invalid_argument("CmaState::tell: Filter selection needs one status per solution");
            for (std::size_t idx : ranking)
                if (improved_archive(statuses[idx]))
                    parents.push_back(idx);
        }
        if (parents.empty()) {
            restart_pending_ = true;
            return;
        }

        const auto mu = static_cast<Eigen::Index>(parents.size());
        const CmaParameters p = CmaParameters::make(n_, mu);
        const double nd = static_cast<double>(n_);

        Mat ys(n_, mu);
        for (Eigen::Index i = 0; i < mu; ++i)
            ys.col(i) = solutions.col(static_cast<Eigen::Index>(parents[static_cast<std::size_t>(i)])) - mean_;
        const Vec y = ys * p.weights; // new mean - old mean
        mean_ += y;

        const Vec z = invsqrt_ * y;
        ps_ = (1.0 - p.cs) * ps_ + (std::sqrt(p.cs * (2.0 - p.cs) * p.mueff) / sigma_) * z;
        const double left = ps_.squaredNorm() / nd / (1.0 - std::pow(1.0 - p.cs, 2.0 * evals_ / static_cast<double>(batch_size_)));
        const double hsig = left < 2.0 + 4.0 / (nd + 1.0) ? 1.0 : 0.0;
        pc_ = (1.0 - p.cc) * pc_ + hsig * std::sqrt(p.cc * (2.0 - p.cc) * p.mueff) * y / sigma_;

        const double c1a = p.c1 * (1.0 - (1.0 - hsig * hsig) * p.cc * (2.0 - p.cc));
        const Mat weighted = ys * p.weights.asDiagonal();
        Mat rank_mu = weighted * ys.transpose();
        cov_ = cov_ * (1.0 - c1a - p.cmu * p.weights.sum()) + p.c1 * (pc_ * pc_.transpose()) + (p.cmu / (sigma_ * sigma_)) * rank_mu;
        const Mat sym = 0.5 * (cov_ + cov_.transpose());
        cov_ = sym;

        sigma_ *= std::exp(std::min(1.0, (p.cs / p.damps) * (ps_.squaredNorm() / nd - 1.0) / 2.0));

        if (!opts_.lazy_eigen)
            refresh_eigensystem(true);
    }

    /// Default termination tests plus the rule's own trigger. `ranked_values`
    /// are the batch's ranking values best-first (used for the flat-fitness test).
    bool should_restart(const RestartRule& rule, std::span<const InsertStatus> statuses = {},
                        std::span<const double> ranked_values = {}) const {
        if (converged(ranked_values))
            return true;
        switch (rule.kind) {
        case RestartRule::Kind::Basic:
            return false;
        case RestartRule::Kind::FixedInterval:
            return generation_ > 0 && generation_ % rule.interval == 0;
        case RestartRule::Kind::NoImprovement:
            return std::none_of(statuses.begin(), statuses.end(), improved_archive);
        }
        return false;
    }

    bool converged(std::span<const double> ranked_values = {}) const {
        if (restart_pending_)
            return true;
        if (!mean_.allFinite() || !std::isfinite(sigma_) || !cov_.allFinite())
            return true;
        if (condition_number() > opts_.max_condition)
            return true;
        if (sigma_ * std::sqrt(std::max(eig_.values.maxCoeff(), 0.0)) < opts_.min_area_ratio * sigma0_)
            return true;
        bool no_effect = true;
        for (Eigen::Index i = 0; i < n_ && no_effect; ++i)
            no_effect = mean_(i) == mean_(i) + 0.2 * sigma_ * std::sqrt(std::max(cov_(i, i), 0.0));
        if (no_effect)
            return true;
        if (ranked_values.size() >= 2 && std::abs(ranked_values.front() - ranked_values.back()) < opts_.flat_tolerance)
            return true;
        return false;
    }

    void reset(Vec mean, double sigma0) {
        if (!(sigma0 > 0.0))
            throw std::invalid_argument("CmaState::reset: sigma0 must be positive");
        if (mean.size() != n_)
            throw std::invalid_argument("CmaState::reset: mean dimension mismatch");
        mean_ = std::move(mean);
        sigma0_ = sigma0;
        sigma_ = sigma0;
        cov_ = Mat::Identity(n_, n_);
        ps_ = Vec::Zero(n_);
        pc_ = Vec::Zero(n_);
        eig_.values = Vec::Ones(n_);
        eig_.vectors = Mat::Identity(n_, n_);
        invsqrt_ = Mat::Identity(n_, n_);
        evals_ = 0.0;
        eig_evals_ = 0.0;
        generation_ = 0;
        restart_pending_ = false;
    }

private:
    void refresh_eigensystem(bool force) {
        if (!force && evals_ <= eig_evals_ + lazy_gap_evals_)
            return;
        eig_evals_ = evals_;
        try {
            eig_ = sym_eig(SymMatrix(cov_), EigenMethod::Tridiagonal);
        } catch (const NumericError&) {
            restart_pending_ = true;
            return;
        }
        const Vec sd = clamped_sqrt_eigenvalues(eig_.values);
        invsqrt_ = eig_.vectors * sd.cwiseInverse().asDiagonal() * eig_.vectors.transpose();
    }

    Eigen::Index n_;
    Eigen::Index batch_size_;
    double sigma0_;
    CmaOptions opts_;
    double lazy_gap_evals_ = 0.0;

    Vec mean_;
    double sigma_ = 1.0;
    Mat cov_;
    Vec ps_, pc_;
    Eigendecomposition eig_;
    Mat invsqrt_;
    double evals_ = 0.0;
    double eig_evals_ = 0.0;
    long generation_ = 0;
    bool restart_pending_ = false;
};

/// Batch indices sorted by objective - discount, descending; ties keep the
/// lower index first.
inline std::vector<std::size_t> rank_improvement(std::span<const double> objectives, std::span<const double> discounts) {
    if (objectives.size() != discounts.size())
        throw std::invalid_argument("rank_improvement: length mismatch");
    std::vector<double> delta(objectives.size());
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = objectives[i] - discounts[i];
    std::vector<std::size_t> order(delta.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return delta[a] > delta[b]; });
    return order;
}

/// Indices sorted by `values` descending (ties: lower index first).
inline std::vector<std::size_t> rank_descending(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return order;
}

/// Indices sorted by `values` ascending (ties: lower index first).
inline std::vector<std::size_t> rank_ascending(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    return order;
}

} // namespace qd
