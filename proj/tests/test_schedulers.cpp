#include <gtest/gtest.h>

#include "lookup_table.hpp"
#include "qd/schedulers.hpp"

using namespace qd;

namespace {

struct Trace {
    std::vector<std::vector<std::size_t>> rankings;
    std::vector<std::vector<InsertResult>> inserts;

    RunHooks hooks() {
        RunHooks h;
        h.on_ranking = [this](long, std::size_t, std::span<const std::size_t> r) { rankings.emplace_back(r.begin(), r.end()); };
        h.on_inserts = [this](long, std::size_t, std::span<const InsertResult> r) { inserts.emplace_back(r.begin(), r.end()); };
        return h;
    }
};

std::shared_ptr<const Tessellation> lp_grid(const Domain& d, int res = 100) {
    return std::make_shared<const Tessellation>(Tessellation::grid(d.measure_lower(), d.measure_upper(), {res, res}));
}

AlgoConfig small_config(Algorithm a, long iterations) {
    AlgoConfig c;
    c.algorithm = a;
    c.iterations = iterations;
    c.emitters = 3;
    c.batch_size = 12;
    c.hidden = {16, 16};
    c.n_init = 200;
    c.n_empty = 20;
    return c;
}

void expect_same_logs(const RunResult& a, const RunResult& b) {
    ASSERT_EQ(a.logs.size(), b.logs.size());
    for (std::size_t i = 0; i < a.logs.size(); ++i) {
        EXPECT_EQ(a.logs[i].qd_score, b.logs[i].qd_score);
        EXPECT_EQ(a.logs[i].coverage, b.logs[i].coverage);
        EXPECT_EQ(a.logs[i].unique_cells, b.logs[i].unique_cells);
        EXPECT_EQ(a.logs[i].restarts, b.logs[i].restarts);
    }
}

void expect_equivalent(std::size_t emitters, long iterations, RestartRule restart) {
    const LinearProjection d(100, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d);
    AlgoConfig c;
    c.iterations = iterations;
    c.emitters = emitters;
    c.restart = restart;
    c.algorithm = Algorithm::CmaMae;
    Trace mae, dms;
    const RngStream root(42);
    const auto r1 = run_cma_mae(c, d, tess, root, mae.hooks());
    c.algorithm = Algorithm::Dms;
    qd::testing::LookupTableDiscount table(tess, c.alpha, c.f_min);
    const auto r2 = run_dms(c, d, tess, table, root, dms.hooks());

    ASSERT_EQ(mae.rankings.size(), dms.rankings.size());
    for (std::size_t i = 0; i < mae.rankings.size(); ++i) {
        ASSERT_EQ(mae.rankings[i], dms.rankings[i]) << "batch " << i;
        ASSERT_EQ(mae.inserts[i].size(), dms.inserts[i].size());
        for (std::size_t j = 0; j < mae.inserts[i].size(); ++j) {
            ASSERT_EQ(mae.inserts[i][j].status, dms.inserts[i][j].status);
            ASSERT_EQ(mae.inserts[i][j].cell_index, dms.inserts[i][j].cell_index);
            ASSERT_EQ(mae.inserts[i][j].value_delta, dms.inserts[i][j].value_delta);
        }
    }
    expect_same_logs(r1, r2);
    for (std::size_t cell = 0; cell < tess->cell_count(); ++cell)
        ASSERT_EQ(r1.archive.threshold(cell), table.value(cell)) << "cell " << cell;
}

} // namespace

TEST(OracleEquivalence, LookupTableDmsMatchesCmaMaeOneEmitter) {
    expect_equivalent(1, 50, RestartRule::basic());
}

TEST(OracleEquivalence, LookupTableDmsMatchesCmaMaeManyEmitters) {
    expect_equivalent(4, 40, RestartRule::fixed_interval(7));
}

TEST(Dms, DatasetHoldsBatchPlusEmptyPoints) {
    const LinearProjection d(20, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d, 20);
    AlgoConfig c = small_config(Algorithm::Dms, 5);
    std::vector<DiscountDataset> seen;
    RunHooks h;
    h.on_dataset = [&](long, const DiscountDataset& ds) { seen.push_back(ds); };
    const auto r = run_dms(c, d, tess, RngStream(1), h);
    ASSERT_EQ(seen.size(), 5u);
    for (const auto& ds : seen) {
        ASSERT_EQ(ds.size(), c.emitters * c.batch_size + c.n_empty);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            EXPECT_EQ(ds[i].empty_point, i >= c.emitters * c.batch_size);
            if (ds[i].empty_point)
                EXPECT_EQ(ds[i].target, c.f_min);
        }
    }
    for (const auto& log : r.logs)
        EXPECT_TRUE(std::isfinite(log.discount_loss));
}

TEST(Dms, EmptyPointsAreUnoccupiedCellCentres) {
    const LinearProjection d(20, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d, 20);
    AlgoConfig c = small_config(Algorithm::Dms, 3);
    std::vector<std::size_t> empty_cells;
    RunHooks h;
    long last = 0;
    h.on_dataset = [&](long it, const DiscountDataset& ds) {
        last = it;
        empty_cells.clear();
        for (const auto& s : ds)
            if (s.empty_point) {
                const std::size_t cell = tess->index_of(s.measures);
                EXPECT_TRUE(s.measures.isApprox(tess->center(cell)));
                empty_cells.push_back(cell);
            }
    };
    const auto r = run_dms(c, d, tess, RngStream(2), h);
    ASSERT_EQ(last, 3);
    for (std::size_t cell : empty_cells)
        EXPECT_FALSE(r.archive.occupied(cell));
}

TEST(Dms, DeterministicGivenSeed) {
    const LinearProjection d(20, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d, 20);
    const AlgoConfig c = small_config(Algorithm::Dms, 10);
    const auto a = run_dms(c, d, tess, RngStream(3));
    const auto b = run_dms(c, d, tess, RngStream(3));
    expect_same_logs(a, b);
    for (std::size_t i = 0; i < a.logs.size(); ++i)
        EXPECT_EQ(a.logs[i].discount_loss, b.logs[i].discount_loss);
}

TEST(Dms, ModelOutIsTheTrainedModel) {
    const LinearProjection d(20, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d, 20);
    std::shared_ptr<MlpDiscount> model;
    run_dms(small_config(Algorithm::Dms, 2), d, tess, RngStream(4), {}, &model);
    ASSERT_TRUE(model);
    EXPECT_EQ(model->model().sizes(), (std::vector<std::size_t>{2, 16, 16, 1}));
    EXPECT_GT(model->optimizer().step, 0);
}

TEST(CmaMae, ThresholdsNeverDecreaseAndStayBelowElites) {
    const LinearProjection d(20, 2, LpObjective::Rastrigin);
    const auto tess = lp_grid(d, 20);
    const auto r = run_cma_mae(small_config(Algorithm::CmaMae, 30), d, tess, RngStream(5));
    for (std::size_t cell = 0; cell < tess->cell_count(); ++cell) {
        EXPECT_GE(r.archive.threshold(cell), 0.0);
        if (r.archive.occupied(cell))
            EXPECT_LE(r.archive.threshold(cell), r.archive.objective(cell));
    }
}

TEST(Logs, CountersAndMonotoneMetrics) {
    const LinearProjection d(20, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d, 20);
    for (Algorithm a : {Algorithm::Dms, Algorithm::CmaMae, Algorithm::Dds, Algorithm::MapElites, Algorithm::MapElitesLine}) {
        const AlgoConfig c = small_config(a, 8);
        RunResult r = [&] {
            switch (a) {
            case Algorithm::Dms: return run_dms(c, d, tess, RngStream(6));
            case Algorithm::CmaMae: return run_cma_mae(c, d, tess, RngStream(6));
            case Algorithm::Dds: return run_dds(c, d, tess, RngStream(6));
            case Algorithm::MapElites: return run_map_elites(c, d, tess, RngStream(6));
            case Algorithm::MapElitesLine: return run_map_elites_line(c, d, tess, RngStream(6));
            }
            throw std::logic_error("unreachable");
        }();
        ASSERT_EQ(r.logs.size(), 8u) << to_string(a);
        for (std::size_t i = 0; i < r.logs.size(); ++i) {
            EXPECT_EQ(r.logs[i].iteration, static_cast<long>(i) + 1);
            EXPECT_EQ(r.logs[i].evaluations, static_cast<long>((i + 1) * c.evaluations_per_iteration()));
            EXPECT_GE(r.logs[i].unique_cells, 1u);
            if (i > 0) {
                EXPECT_GE(r.logs[i].qd_score, r.logs[i - 1].qd_score);
                EXPECT_GE(r.logs[i].coverage, r.logs[i - 1].coverage);
            }
        }
        EXPECT_EQ(r.logs.back().restarts.size(), uses_emitters(a) ? c.emitters : 0u);
    }
}

TEST(MapElites, FirstIterationMutatesTheStartingPoint) {
    const LinearProjection d(4, 2, LpObjective::Sphere);
    const auto tess = lp_grid(d, 10);
    AlgoConfig c = small_config(Algorithm::MapElites, 1);
    c.batch_size = 5;
    c.me_sigma = 1e-9;
    c.theta0 = Vec::Constant(4, 1.0);
    const auto r = run_map_elites(c, d, tess, RngStream(7));
    EXPECT_EQ(r.archive.coverage(), 1.0);
    EXPECT_NEAR(r.archive.qd_score(), lp_objective(Vec::Constant(4, 1.0), LpObjective::Sphere), 1e-8);
}

TEST(Dds, PrefersSparseRegions) {
    const LinearProjection d(20, 2, LpObjective::Flat);
    const auto tess = lp_grid(d, 20);
    AlgoConfig c = small_config(Algorithm::Dds, 20);
    c.bandwidth = 5.12;
    const auto r = run_dds(c, d, tess, RngStream(8));
    const auto mae = run_cma_mae(small_config(Algorithm::CmaMae, 20), d, tess, RngStream(8));
    EXPECT_GE(r.archive.coverage(), mae.archive.coverage());
}

TEST(Schedulers, RejectsBadConfig) {
    const LinearProjection d(4, 2, LpObjective::Sphere);
    AlgoConfig c = small_config(Algorithm::CmaMae, 1);
    c.batch_size = 1;
    EXPECT_THROW(run_cma_mae(c, d, lp_grid(d, 4), RngStream(9)), std::invalid_argument);
    const auto wrong = std::make_shared<const Tessellation>(Tessellation::grid(Vec::Zero(3), Vec::Ones(3), {2, 2, 2}));
    EXPECT_THROW(run_cma_mae(small_config(Algorithm::CmaMae, 1), d, wrong, RngStream(9)), ArchiveError);
    EXPECT_THROW(run_cma_mae(small_config(Algorithm::CmaMae, 1), d, nullptr, RngStream(9)), ArchiveError);
}
