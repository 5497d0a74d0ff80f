// DMS on 2D LP (Sphere) with the default settings, printing progress every
// 100 iterations. Usage: demo_sphere_dms [iterations] [seed]

#include <cstdlib>
#include <iostream>

#include "qd/qd.hpp"

int main(int argc, char** argv) {
    const long iterations = argc > 1 ? std::atol(argv[1]) : 1000;
    const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;

    qd::ExperimentConfig c = *qd::find_preset("dms_lp_sphere_2d");
    c.algo.iterations = iterations;
    const qd::ExperimentSetup setup = qd::build_setup(c);

    qd::RunHooks hooks;
    hooks.on_iteration = [](const qd::IterationLog& log) {
        if (log.iteration % 100 == 0)
            std::cout << "iteration " << log.iteration << "  qd " << log.qd_score << "  coverage " << log.coverage << "%  loss "
                      << log.discount_loss << '\n';
    };
    const qd::TrialOutput out = qd::run_trial(c, setup, seed, hooks);
    std::cout << "final qd " << out.result.archive.qd_score() << ", coverage " << out.result.archive.coverage() << "%, "
              << out.result.wallclock_s << " s\n";
}
