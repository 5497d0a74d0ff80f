// All five algorithms on one LP preset family at a reduced budget.
// Usage: demo_compare_lp [objective=sphere] [k=2] [iterations=500]

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "qd/qd.hpp"

int main(int argc, char** argv) {
    const std::string objective = argc > 1 ? argv[1] : "sphere";
    const std::string k = argc > 2 ? argv[2] : "2";
    const long iterations = argc > 3 ? std::atol(argv[3]) : 500;

    std::cout << std::left << std::setw(10) << "algorithm" << std::right << std::setw(12) << "qd_score" << std::setw(11) << "coverage"
              << std::setw(10) << "seconds" << '\n';
    for (const char* tag : {"dms", "cmamae", "dds", "meline", "me"}) {
        const std::string name = std::string(tag) + "_lp_" + objective + "_" + k + "d";
        auto c = qd::find_preset(name);
        if (!c) {
            std::cerr << "no preset " << name << '\n';
            return 2;
        }
        c->algo.iterations = iterations;
        const qd::ExperimentSetup setup = qd::build_setup(*c);
        const qd::TrialOutput out = qd::run_trial(*c, setup, c->seed);
        const auto& a = out.result.archive;
        std::cout << std::left << std::setw(10) << tag << std::right << std::fixed << std::setprecision(2) << std::setw(12) << a.qd_score()
                  << std::setw(10) << a.coverage() << '%' << std::setw(10) << std::setprecision(1) << out.result.wallclock_s << '\n';
    }
}
