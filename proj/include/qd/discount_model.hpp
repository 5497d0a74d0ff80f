#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "qd/archive.hpp"
#include "qd/numerics.hpp"

namespace qd {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Maps measures into [-1, 1]^k using the measure-space bounds.
class MeasureNormalizer {
public:
    MeasureNormalizer() = default;
    MeasureNormalizer(Vec lower, Vec upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
        if (lower_.size() != upper_.size() || lower_.size() == 0)
            throw ModelError("MeasureNormalizer: bounds must have the same positive length");
        if (!lower_.allFinite() || !upper_.allFinite() || !((upper_ - lower_).array() > 0.0).all())
            throw ModelError("MeasureNormalizer: need finite lower < upper");
        scale_ = 2.0 / (upper_ - lower_).array();
    }

    Eigen::Index dim() const { return lower_.size(); }
    const Vec& lower() const { return lower_; }
    const Vec& upper() const { return upper_; }

    /// Columns of `measures` mapped to 2 (s - lo) / (hi - lo) - 1, clamped to [-1, 1].
    Mat normalize(const Mat& measures) const {
        if (measures.rows() != dim())
            throw ModelError("normalize: measure dimension mismatch");
        Mat out = ((measures.colwise() - lower_).array().colwise() * scale_.array()) - 1.0;
        return out.cwiseMax(-1.0).cwiseMin(1.0);
    }

    Vec normalize(const Vec& s) const { return normalize(Mat(s)).col(0); }

private:
    Vec lower_, upper_;
    Vec scale_;
};

/// Fully connected network with ReLU after every layer but the last. All
/// parameters live in one flat vector: per layer, the weight matrix
/// (out x in, row-major) followed by the bias.
class Mlp {
public:
    Mlp() = default;

    explicit Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2 || std::any_of(sizes_.begin(), sizes_.end(), [](std::size_t s) { return s == 0; }))
            throw ModelError("Mlp: need at least two positive layer sizes");
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            offsets_.push_back(off);
            off += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
        }
        params_ = Vec::Zero(static_cast<Eigen::Index>(off));
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    Mlp(std::vector<std::size_t> sizes, RngStream& rng) : Mlp(std::move(sizes)) { initialize(rng); }

    void initialize(RngStream& rng) {
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
            const std::size_t count = sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
            for (std::size_t i = 0; i < count; ++i)
                params_(static_cast<Eigen::Index>(offsets_[l] + i)) = rng.uniform(-bound, bound);
        }
    }

    const std::vector<std::size_t>& sizes() const { return sizes_; }
    std::size_t input_dim() const { return sizes_.front(); }
    std::size_t layers() const { return sizes_.size() - 1; }
    const Vec& parameters() const { return params_; }
    Vec& parameters() { return params_; }

    Eigen::Map<const RowMat> weight(std::size_t l) const {
        return {params_.data() + offsets_[l], static_cast<Eigen::Index>(sizes_[l + 1]), static_cast<Eigen::Index>(sizes_[l])};
    }
    Eigen::Map<const Vec> bias(std::size_t l) const {
        return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], static_cast<Eigen::Index>(sizes_[l + 1])};
    }

    /// One output per input column.
    Vec forward(const Mat& inputs) const {
        check_inputs(inputs);
        Mat h = inputs;
        for (std::size_t l = 0; l < layers(); ++l) {
            Mat z = weight(l) * h;
            z.colwise() += bias(l);
            if (l + 1 < layers())
                z = z.cwiseMax(0.0);
            h = std::move(z);
        }
        return h.row(0).transpose();
    }

    /// Mean squared error against `targets`; fills `grad` (same layout as the
    /// parameters) with its gradient.
    double loss_and_gradient(const Mat& inputs, const Vec& targets, Vec& grad) const {
        check_inputs(inputs);
        const Eigen::Index batch = inputs.cols();
        if (targets.size() != batch)
            throw ModelError("loss_and_gradient: target count mismatch");
        std::vector<Mat> acts; // acts[l] is the input of layer l (post-activation)
        acts.reserve(layers() + 1);
        acts.push_back(inputs);
        for (std::size_t l = 0; l < layers(); ++l) {
            Mat z = weight(l) * acts.back();
            z.colwise() += bias(l);
            if (l + 1 < layers())
                z = z.cwiseMax(0.0);
            acts.push_back(std::move(z));
        }
        const Eigen::RowVectorXd err = acts.back().row(0) - targets.transpose();
        const double loss = err.squaredNorm() / static_cast<double>(batch);

        grad.setZero(params_.size());
        Mat delta = (2.0 / static_cast<double>(batch)) * err;
        for (std::size_t l = layers(); l-- > 0;) {
            const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
            const auto in = static_cast<Eigen::Index>(sizes_[l]);
            Eigen::Map<RowMat> gw(grad.data() + offsets_[l], out, in);
            Eigen::Map<Vec> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], out);
            gw.noalias() = delta * acts[l].transpose();
            gb = delta.rowwise().sum();
            if (l > 0) {
                Mat back = weight(l).transpose() * delta;
                // ReLU derivative: zero where the unit was inactive.
                delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
            }
        }
        return loss;
    }

    double loss(const Mat& inputs, const Vec& targets) const { return (forward(inputs) - targets).squaredNorm() / static_cast<double>(targets.size()); }

private:
    void check_inputs(const Mat& inputs) const {
        if (static_cast<std::size_t>(inputs.rows()) != input_dim())
            throw ModelError("Mlp: expected " + std::to_string(input_dim()) + " inputs, got " + std::to_string(inputs.rows()));
    }

    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
    Vec params_;
};

struct AdamState {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    Vec m, v;

    void step_update(Vec& params, const Vec& grad) {
        if (m.size() != params.size()) {
            m = Vec::Zero(params.size());
            v = Vec::Zero(params.size());
        }
        ++step;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        params.array() -= learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + epsilon);
    }
};

/// One regression entry: measures s with discount target t. `objective` is
/// the raw objective that produced the entry (f_min for empty points).
struct DiscountSample {
    Vec measures;
    double target = 0.0;
    double objective = 0.0;
    bool empty_point = false;
};

using DiscountDataset = std::vector<DiscountSample>;

/// Discount target for a solution with objective f at a point whose current
/// discount is d: d when f <= d, else (1 - alpha) d + alpha f.
inline double compute_target(double objective, double discount, double alpha) {
    if (objective <= discount)
        return discount;
    return (1.0 - alpha) * discount + alpha * objective;
}

struct TrainOptions {
    std::size_t batch_size = 32;
    int max_epochs = 5;
    double cutoff_loss = 0.05;
};

/// Minibatch MSE training with Adam. Each epoch reshuffles the data; training
/// stops once the full-dataset MSE reaches the cutoff. Returns that MSE after
/// every epoch.
inline std::vector<double> train(Mlp& model, AdamState& adam, const DiscountDataset& data, const MeasureNormalizer& norm, RngStream& rng,
                                 const TrainOptions& opts = {}) {
    std::vector<double> trace;
    if (data.empty())
        return trace;
    const auto n = static_cast<Eigen::Index>(data.size());
    Mat raw(norm.dim(), n);
    Vec targets(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        raw.col(j) = data[static_cast<std::size_t>(j)].measures;
        targets(j) = data[static_cast<std::size_t>(j)].target;
    }
    const Mat inputs = norm.normalize(raw);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Vec grad;
    for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
        shuffle(std::span<Eigen::Index>(order), rng);
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t stop = std::min(order.size(), start + opts.batch_size);
            const auto b = static_cast<Eigen::Index>(stop - start);
            Mat xb(inputs.rows(), b);
            Vec tb(b);
            for (Eigen::Index i = 0; i < b; ++i) {
                xb.col(i) = inputs.col(order[start + static_cast<std::size_t>(i)]);
                tb(i) = targets(order[start + static_cast<std::size_t>(i)]);
            }
            model.loss_and_gradient(xb, tb, grad);
            adam.step_update(model.parameters(), grad);
        }
        const double loss = model.loss(inputs, targets);
        if (!std::isfinite(loss))
            throw ModelError("train: non-finite loss");
        trace.push_back(loss);
        if (loss <= opts.cutoff_loss)
            break;
    }
    return trace;
}

/// Regresses the model to f_min at the centres of `n_init` cells drawn from
/// the tessellation (without replacement, or with replacement when n_init
/// exceeds the number of cells).
inline std::vector<double> init_regress(Mlp& model, AdamState& adam, const Tessellation& tess, std::size_t n_init, double f_min,
                                        const MeasureNormalizer& norm, RngStream& rng, const TrainOptions& opts = {}) {
    if (n_init < 1)
        throw ModelError("init_regress: n_init must be >= 1");
    std::vector<std::size_t> cells;
    if (n_init <= tess.cell_count()) {
        cells = sample_without_replacement(tess.cell_count(), n_init, rng);
    } else {
        cells.reserve(n_init);
        for (std::size_t i = 0; i < n_init; ++i)
            cells.push_back(rng.below(tess.cell_count()));
    }
    DiscountDataset data;
    data.reserve(cells.size());
    for (std::size_t c : cells)
        data.push_back({tess.center(c), f_min, f_min, true});
    return train(model, adam, data, norm, rng, opts);
}

/// Relative error between the analytic directional derivative of the MSE
/// loss (along `direction` in parameter space) and a central difference.
inline double grad_check(const Mlp& model, const Mat& inputs, const Vec& targets, const Vec& direction, double h = 1e-5) {
    if (direction.size() != model.parameters().size())
        throw ModelError("grad_check: direction must match the parameter count");
    Vec grad;
    model.loss_and_gradient(inputs, targets, grad);
    const double analytic = grad.dot(direction);
    Mlp plus = model, minus = model;
    plus.parameters() += h * direction;
    minus.parameters() -= h * direction;
    const double numeric = (plus.loss(inputs, targets) - minus.loss(inputs, targets)) / (2.0 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / scale;
}

// Snapshot layout (little-endian): "QDMLP001", u64 layer-size count L,
// L x u64 sizes, k x (f64 lower, f64 upper) normalizer bounds, f64 parameters.
namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw IoError("model snapshot: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& in) {
    const std::uint64_t v = get_u64(in);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

constexpr char kSnapshotMagic[8] = {'Q', 'D', 'M', 'L', 'P', '0', '0', '1'};

} // namespace detail

struct ModelSnapshot {
    Mlp model;
    MeasureNormalizer normalizer;
};

inline void write_snapshot(const std::string& path, const Mlp& model, const MeasureNormalizer& norm) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path);
    out.write(detail::kSnapshotMagic, 8);
    detail::put_u64(out, model.sizes().size());
    for (std::size_t s : model.sizes())
        detail::put_u64(out, s);
    for (Eigen::Index j = 0; j < norm.dim(); ++j) {
        detail::put_f64(out, norm.lower()(j));
        detail::put_f64(out, norm.upper()(j));
    }
    for (Eigen::Index i = 0; i < model.parameters().size(); ++i)
        detail::put_f64(out, model.parameters()(i));
}

inline ModelSnapshot read_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, detail::kSnapshotMagic, 8) != 0)
        throw IoError(path + ": not a model snapshot");
    const std::uint64_t count = detail::get_u64(in);
    if (count < 2 || count > 64)
        throw IoError(path + ": bad layer count");
    std::vector<std::size_t> sizes;
    for (std::uint64_t i = 0; i < count; ++i)
        sizes.push_back(static_cast<std::size_t>(detail::get_u64(in)));
    Vec lo(static_cast<Eigen::Index>(sizes.front())), hi(static_cast<Eigen::Index>(sizes.front()));
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
        lo(j) = detail::get_f64(in);
        hi(j) = detail::get_f64(in);
    }
    ModelSnapshot snap{Mlp(sizes), MeasureNormalizer(lo, hi)};
    for (Eigen::Index i = 0; i < snap.model.parameters().size(); ++i)
        snap.model.parameters()(i) = detail::get_f64(in);
    return snap;
}

struct MlpDiscountOptions {
    std::vector<std::size_t> hidden = {128, 128};
    TrainOptions training;
    std::size_t n_init = 1000;
    double f_min = 0.0;
};

/// Discount function backed by an MLP over normalized measures, with one
/// Adam state kept for the whole run.
class MlpDiscount {
public:
    MlpDiscount(std::shared_ptr<const Tessellation> tess, MeasureNormalizer norm, MlpDiscountOptions opts = {})
        : tess_(std::move(tess)), norm_(std::move(norm)), opts_(std::move(opts)) {
        std::vector<std::size_t> sizes{static_cast<std::size_t>(norm_.dim())};
        sizes.insert(sizes.end(), opts_.hidden.begin(), opts_.hidden.end());
        sizes.push_back(1);
        model_ = Mlp(sizes);
    }

    /// Fresh weights, then regression to f_min at sampled cell centres.
    std::vector<double> initialize(RngStream& rng) {
        model_.initialize(rng);
        adam_ = AdamState{};
        return init_regress(model_, adam_, *tess_, opts_.n_init, opts_.f_min, norm_, rng, opts_.training);
    }

    Vec evaluate(const Mat& measures) const { return model_.forward(norm_.normalize(measures)); }

    /// Returns the final full-dataset loss (NaN for an empty dataset).
    double fit(const DiscountDataset& data, RngStream& rng) {
        const auto trace = train(model_, adam_, data, norm_, rng, opts_.training);
        return trace.empty() ? std::numeric_limits<double>::quiet_NaN() : trace.back();
    }

    const Mlp& model() const { return model_; }
    Mlp& model() { return model_; }
    const AdamState& optimizer() const { return adam_; }
    const MeasureNormalizer& normalizer() const { return norm_; }

private:
    std::shared_ptr<const Tessellation> tess_;
    MeasureNormalizer norm_;
    MlpDiscountOptions opts_;
    Mlp model_;
    AdamState adam_;
};

} // namespace qd
