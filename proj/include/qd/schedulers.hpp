#pragma once

#include <chrono>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qd/archive.hpp"
#include "qd/cma_es.hpp"
#include "qd/density.hpp"
#include "qd/discount_model.hpp"
#include "qd/domains.hpp"
#include "qd/numerics.hpp"

namespace qd {

enum class Algorithm { Dms, CmaMae, MapElites, MapElitesLine, Dds };

inline std::string to_string(Algorithm a) {
    switch (a) {
    case Algorithm::Dms: return "dms";
    case Algorithm::CmaMae: return "cma_mae";
    case Algorithm::MapElites: return "map_elites";
    case Algorithm::MapElitesLine: return "map_elites_line";
    case Algorithm::Dds: return "dds";
    }
    return "?";
}

inline bool uses_emitters(Algorithm a) { return a != Algorithm::MapElites && a != Algorithm::MapElitesLine; }

struct AlgoConfig {
    Algorithm algorithm = Algorithm::Dms;
    long iterations = 10'000;
    std::size_t emitters = 15;
    std::size_t batch_size = 36;
    double sigma0 = 0.5;
    double alpha = 0.1;
    RestartRule restart = RestartRule::basic();
    SelectionRule selection = SelectionRule::Mu;
    double f_min = 0.0;
    // DMS
    std::size_t n_init = 1000;
    std::size_t n_empty = 100;
    std::vector<std::size_t> hidden = {128, 128};
    TrainOptions training;
    // MAP-Elites and MAP-Elites (line)
    double me_sigma = 0.5;
    double line_sigma1 = 0.5;
    double line_sigma2 = 0.2;
    // DDS
    double bandwidth = 25.6;
    std::size_t buffer_capacity = 10'000;

    std::optional<Vec> theta0;
    int eval_workers = 1;

    /// Solutions evaluated per iteration.
    std::size_t evaluations_per_iteration() const { return uses_emitters(algorithm) ? emitters * batch_size : batch_size; }
};

struct IterationLog {
    long iteration = 0;
    double qd_score = 0.0;
    double coverage = 0.0;
    std::size_t unique_cells = 0;
    long evaluations = 0;
    double wallclock_s = 0.0;
    /// Discount-model loss after this iteration's training (NaN when unused).
    double discount_loss = std::numeric_limits<double>::quiet_NaN();
    std::vector<long> restarts;
};

/// Optional observers, called on the scheduler thread.
struct RunHooks {
    std::function<void(long iteration, std::size_t emitter, std::span<const std::size_t> ranking)> on_ranking;
    std::function<void(long iteration, std::size_t emitter, std::span<const InsertResult> results)> on_inserts;
    std::function<void(const IterationLog&)> on_iteration;
    /// DMS only: the dataset regressed at the end of an iteration.
    std::function<void(long iteration, const DiscountDataset&)> on_dataset;
};

struct RunResult {
    ArchiveStore archive;
    std::vector<IterationLog> logs;
    double wallclock_s = 0.0;
};

// Child stream indices under a trial's root stream.
namespace streams {
inline constexpr std::uint64_t kEmitterBase = 0;
inline constexpr std::uint64_t kRestart = 1000;
inline constexpr std::uint64_t kModel = 2000;
inline constexpr std::uint64_t kEmptyPoints = 3000;
inline constexpr std::uint64_t kOperators = 4000;
} // namespace streams

/// Source of discount values for DMS: evaluate() must not change state;
/// fit() consumes one iteration's dataset and returns a loss (or NaN).
template <typename D>
concept DiscountSource = requires(D d, const D cd, const Mat& m, const DiscountDataset& ds, RngStream& rng) {
    { cd.evaluate(m) } -> std::convertible_to<Vec>;
    { d.fit(ds, rng) } -> std::convertible_to<double>;
    d.initialize(rng);
};

namespace detail {

inline std::shared_ptr<const Tessellation> require_tessellation(const Domain& domain, std::shared_ptr<const Tessellation> tess) {
    if (!tess)
        tess = domain.tessellation();
    if (!tess)
        throw ArchiveError(domain.name() + ": no tessellation given");
    if (tess->measure_dim() != domain.measure_dim())
        throw ArchiveError(domain.name() + ": tessellation dimension does not match the measures");
    return tess;
}

inline std::vector<std::size_t> locate_cells(const Evaluation& ev, const Tessellation& tess) {
    if (!ev.cells.empty())
        return ev.cells;
    std::vector<std::size_t> cells(static_cast<std::size_t>(ev.measures.cols()));
    for (Eigen::Index j = 0; j < ev.measures.cols(); ++j)
        cells[static_cast<std::size_t>(j)] = tess.index_of(ev.measures.col(j));
    return cells;
}

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

/// Hooks a ranking policy into the shared emitter loop. `Policy` provides:
///   begin(iteration, archive, ev, cells) -> per-solution ranking values (higher is better);
///   after_insert(archive, column, objective, result);
///   end(iteration, archive, ev, cells, log).
template <typename Policy>
RunResult run_emitter_loop(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                           bool thresholds, Policy& policy, const RunHooks& hooks) {
    const auto start = Clock::now();
    if (cfg.emitters < 1 || cfg.batch_size < 2)
        throw std::invalid_argument("need at least one emitter and a batch size of at least 2");
    ArchiveStore archive(tess, domain.solution_dim(), cfg.f_min, thresholds);
    const Vec theta0 = cfg.theta0.value_or(domain.initial_solution());
    const std::size_t w_count = cfg.emitters;
    const auto lambda = static_cast<Eigen::Index>(cfg.batch_size);

    std::vector<CmaState> emitters;
    std::vector<RngStream> emitter_rngs;
    for (std::size_t w = 0; w < w_count; ++w) {
        emitters.emplace_back(theta0, cfg.sigma0, lambda);
        emitter_rngs.push_back(root.spawn(streams::kEmitterBase + w));
    }
    RngStream restart_rng = root.spawn(streams::kRestart);
    std::vector<long> restarts(w_count, 0);

    RunResult result{std::move(archive), {}, 0.0};
    ArchiveStore& a = result.archive;
    Mat batch(static_cast<Eigen::Index>(domain.solution_dim()), static_cast<Eigen::Index>(w_count) * lambda);
    std::vector<InsertResult> inserts(static_cast<std::size_t>(lambda));
    std::vector<InsertStatus> statuses(static_cast<std::size_t>(lambda));
    std::vector<double> ranked_values(static_cast<std::size_t>(lambda));

    for (long it = 1; it <= cfg.iterations; ++it) {
        for (std::size_t w = 0; w < w_count; ++w)
            batch.middleCols(static_cast<Eigen::Index>(w) * lambda, lambda) = emitters[w].ask(emitter_rngs[w]);
        const Evaluation ev = evaluate_batch(domain, batch, cfg.eval_workers);
        const std::vector<std::size_t> cells = locate_cells(ev, *tess);
        const std::vector<double> values = policy.begin(it, a, ev, cells);

        for (std::size_t w = 0; w < w_count; ++w) {
            const Eigen::Index off = static_cast<Eigen::Index>(w) * lambda;
            for (Eigen::Index i = 0; i < lambda; ++i) {
                const Eigen::Index col = off + i;
                const auto ci = static_cast<std::size_t>(col);
                inserts[static_cast<std::size_t>(i)] = a.insert(batch.col(col), ev.objectives(col), ev.measures.col(col), cells[ci]);
                statuses[static_cast<std::size_t>(i)] = inserts[static_cast<std::size_t>(i)].status;
                policy.after_insert(a, ci, ev.objectives(col), inserts[static_cast<std::size_t>(i)]);
            }
            const std::span<const double> own(values.data() + off, static_cast<std::size_t>(lambda));
            const std::vector<std::size_t> ranking = rank_descending(own);
            for (std::size_t r = 0; r < ranking.size(); ++r)
                ranked_values[r] = own[ranking[r]];
            if (hooks.on_inserts)
                hooks.on_inserts(it, w, inserts);
            if (hooks.on_ranking)
                hooks.on_ranking(it, w, ranking);

            const Mat own_batch = batch.middleCols(off, lambda);
            emitters[w].tell(own_batch, ranking, cfg.selection, statuses);
            if (emitters[w].should_restart(cfg.restart, statuses, ranked_values)) {
                emitters[w].reset(a.sample_elites(1, restart_rng, theta0).col(0), cfg.sigma0);
                ++restarts[w];
            }
        }

        IterationLog log;
        log.iteration = it;
        log.unique_cells = unique_cells(cells);
        policy.end(it, a, ev, cells, log);
        log.qd_score = a.qd_score();
        log.coverage = a.coverage();
        log.evaluations = it * static_cast<long>(cfg.evaluations_per_iteration());
        log.restarts = restarts;
        log.wallclock_s = seconds_since(start);
        if (hooks.on_iteration)
            hooks.on_iteration(log);
        result.logs.push_back(std::move(log));
    }
    result.wallclock_s = seconds_since(start);
    return result;
}

template <typename D>
struct DmsPolicy {
    const AlgoConfig& cfg;
    D& discount;
    RngStream& model_rng;
    RngStream& empty_rng;
    const RunHooks& hooks;
    DiscountDataset dataset;

    std::vector<double> begin(long, const ArchiveStore&, const Evaluation& ev, const std::vector<std::size_t>&) {
        // One frozen forward pass serves both the improvement and the targets.
        const Vec d = discount.evaluate(ev.measures);
        const auto count = static_cast<std::size_t>(ev.objectives.size());
        std::vector<double> delta(count);
        dataset.clear();
        dataset.reserve(count + cfg.n_empty);
        for (std::size_t j = 0; j < count; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            delta[j] = ev.objectives(jj) - d(jj);
            dataset.push_back({ev.measures.col(jj), compute_target(ev.objectives(jj), d(jj), cfg.alpha), ev.objectives(jj), false});
        }
        return delta;
    }

    void after_insert(ArchiveStore&, std::size_t, double, const InsertResult&) {}

    void end(long it, ArchiveStore& a, const Evaluation&, const std::vector<std::size_t>&, IterationLog& log) {
        const Mat empties = a.sample_unoccupied_centers(cfg.n_empty, empty_rng);
        for (Eigen::Index j = 0; j < empties.cols(); ++j)
            dataset.push_back({empties.col(j), cfg.f_min, cfg.f_min, true});
        if (hooks.on_dataset)
            hooks.on_dataset(it, dataset);
        log.discount_loss = discount.fit(dataset, model_rng);
    }
};

struct CmaMaePolicy {
    const AlgoConfig& cfg;

    std::vector<double> begin(long, const ArchiveStore& archive, const Evaluation& ev, const std::vector<std::size_t>& cells) const {
        // Thresholds as they stood before this iteration's inserts.
        std::vector<double> delta(cells.size());
        for (std::size_t j = 0; j < cells.size(); ++j)
            delta[j] = ev.objectives(static_cast<Eigen::Index>(j)) - archive.threshold(cells[j]);
        return delta;
    }

    void after_insert(ArchiveStore& a, std::size_t, double objective, const InsertResult& r) { a.anneal_threshold(r.cell_index, objective, cfg.alpha); }

    void end(long, ArchiveStore&, const Evaluation&, const std::vector<std::size_t>&, IterationLog&) {}
};

struct DdsPolicy {
    DensityBuffer buffer;

    std::vector<double> begin(long, const ArchiveStore&, const Evaluation& ev, const std::vector<std::size_t>&) const {
        // Lower density ranks first.
        std::vector<double> score(static_cast<std::size_t>(ev.measures.cols()));
        for (Eigen::Index j = 0; j < ev.measures.cols(); ++j)
            score[static_cast<std::size_t>(j)] = -buffer.density(ev.measures.col(j));
        return score;
    }

    void after_insert(ArchiveStore&, std::size_t, double, const InsertResult&) {}

    void end(long, ArchiveStore&, const Evaluation& ev, const std::vector<std::size_t>&, IterationLog&) {
        for (Eigen::Index j = 0; j < ev.measures.cols(); ++j)
            buffer.push(ev.measures.col(j));
    }
};

} // namespace detail

/// Discount Model Search with any discount source (normally MlpDiscount).
template <DiscountSource D>
RunResult run_dms(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, D& discount, const RngStream& root,
                  const RunHooks& hooks = {}) {
    tess = detail::require_tessellation(domain, std::move(tess));
    RngStream model_rng = root.spawn(streams::kModel);
    RngStream empty_rng = root.spawn(streams::kEmptyPoints);
    discount.initialize(model_rng);
    detail::DmsPolicy<D> policy{cfg, discount, model_rng, empty_rng, hooks, {}};
    return detail::run_emitter_loop(cfg, domain, tess, root, false, policy, hooks);
}

/// DMS with the MLP discount model described by `cfg`. The trained model is
/// left in `model_out` when given.
inline RunResult run_dms(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                         const RunHooks& hooks = {}, std::shared_ptr<MlpDiscount>* model_out = nullptr) {
    tess = detail::require_tessellation(domain, std::move(tess));
    MlpDiscountOptions opts;
    opts.hidden = cfg.hidden;
    opts.training = cfg.training;
    opts.n_init = cfg.n_init;
    opts.f_min = cfg.f_min;
    auto model = std::make_shared<MlpDiscount>(tess, MeasureNormalizer(domain.measure_lower(), domain.measure_upper()), opts);
    if (model_out)
        *model_out = model;
    return run_dms(cfg, domain, tess, *model, root, hooks);
}

inline RunResult run_cma_mae(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                             const RunHooks& hooks = {}) {
    tess = detail::require_tessellation(domain, std::move(tess));
    detail::CmaMaePolicy policy{cfg};
    return detail::run_emitter_loop(cfg, domain, tess, root, true, policy, hooks);
}

inline RunResult run_dds(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                         const RunHooks& hooks = {}) {
    tess = detail::require_tessellation(domain, std::move(tess));
    detail::DdsPolicy policy{DensityBuffer(domain.measure_dim(), cfg.buffer_capacity, cfg.bandwidth)};
    return detail::run_emitter_loop(cfg, domain, tess, root, false, policy, hooks);
}

namespace detail {

template <typename Mutate>
RunResult run_mutation_loop(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                            const RunHooks& hooks, Mutate mutate) {
    const auto start = Clock::now();
    tess = require_tessellation(domain, std::move(tess));
    RunResult result{ArchiveStore(tess, domain.solution_dim(), cfg.f_min), {}, 0.0};
    ArchiveStore& a = result.archive;
    const Vec theta0 = cfg.theta0.value_or(domain.initial_solution());
    RngStream rng = root.spawn(streams::kOperators);
    std::vector<InsertResult> inserts(cfg.batch_size);

    for (long it = 1; it <= cfg.iterations; ++it) {
        const Mat offspring = mutate(a, theta0, rng);
        const Evaluation ev = evaluate_batch(domain, offspring, cfg.eval_workers);
        const std::vector<std::size_t> cells = locate_cells(ev, *tess);
        for (Eigen::Index j = 0; j < offspring.cols(); ++j)
            inserts[static_cast<std::size_t>(j)] = a.insert(offspring.col(j), ev.objectives(j), ev.measures.col(j), cells[static_cast<std::size_t>(j)]);
        if (hooks.on_inserts)
            hooks.on_inserts(it, 0, inserts);
        IterationLog log;
        log.iteration = it;
        log.unique_cells = unique_cells(cells);
        log.qd_score = a.qd_score();
        log.coverage = a.coverage();
        log.evaluations = it * static_cast<long>(cfg.batch_size);
        log.wallclock_s = seconds_since(start);
        if (hooks.on_iteration)
            hooks.on_iteration(log);
        result.logs.push_back(std::move(log));
    }
    result.wallclock_s = seconds_since(start);
    return result;
}

} // namespace detail

/// MAP-Elites with isotropic Gaussian mutation of uniformly chosen elites.
inline RunResult run_map_elites(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                                const RunHooks& hooks = {}) {
    const auto count = cfg.batch_size;
    return detail::run_mutation_loop(cfg, domain, std::move(tess), root, hooks, [&](const ArchiveStore& a, const Vec& theta0, RngStream& rng) {
        Mat children = a.sample_elites(count, rng, theta0);
        for (Eigen::Index j = 0; j < children.cols(); ++j)
            for (Eigen::Index i = 0; i < children.rows(); ++i)
                children(i, j) += cfg.me_sigma * rng.normal();
        return children;
    });
}

/// MAP-Elites with the Iso+LineDD operator:
/// theta1 + sigma1 N(0, I) + sigma2 N(0, 1) (theta2 - theta1).
inline RunResult run_map_elites_line(const AlgoConfig& cfg, const Domain& domain, std::shared_ptr<const Tessellation> tess, const RngStream& root,
                                     const RunHooks& hooks = {}) {
    const auto count = cfg.batch_size;
    return detail::run_mutation_loop(cfg, domain, std::move(tess), root, hooks, [&](const ArchiveStore& a, const Vec& theta0, RngStream& rng) {
        Mat first = a.sample_elites(count, rng, theta0);
        const Mat second = a.sample_elites(count, rng, theta0);
        for (Eigen::Index j = 0; j < first.cols(); ++j) {
            const double line = cfg.line_sigma2 * rng.normal();
            for (Eigen::Index i = 0; i < first.rows(); ++i)
                first(i, j) += cfg.line_sigma1 * rng.normal() + line * (second(i, j) - first(i, j));
        }
        return first;
    });
}

} // namespace qd
