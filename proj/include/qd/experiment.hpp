#pragma once

#include <nlohmann/json.hpp>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qd/archive.hpp"
#include "qd/csv.hpp"
#include "qd/discount_model.hpp"
#include "qd/domains.hpp"
#include "qd/errors.hpp"
#include "qd/schedulers.hpp"

namespace qd {

enum class DomainKind { Lp, Arm, Triangles };

struct DomainSpec {
    DomainKind kind = DomainKind::Lp;
    LpObjective objective = LpObjective::Sphere;
    std::size_t solution_dim = 100;
    std::size_t measure_dim = 2;
    /// IDX image file for the triangle domain.
    std::string dataset;
    std::size_t dataset_size = 1000;
};

struct ArchiveSpec {
    TessellationKind kind = TessellationKind::Grid;
    int resolution = 100;
    std::size_t cells = 10'000;
    std::size_t cvt_samples = 100'000;
    int lloyd_iterations = 10;
    std::uint64_t cvt_seed = 0;
    /// Centroid CSV reused when present, written after building otherwise.
    std::string centroid_cache;
};

struct ExperimentConfig {
    std::string name = "custom";
    DomainSpec domain;
    ArchiveSpec archive;
    AlgoConfig algo;
    int trials = 1;
    std::uint64_t seed = 0;
    std::string output;
    long log_every = 1;
    bool save_solutions = false;
    bool save_model = false;
    bool log_unique_cells = true;
    int workers = 1;

    std::string output_dir() const { return output.empty() ? "runs/" + name : output; }
};

// ---------------------------------------------------------------- presets

namespace detail {

inline ExperimentConfig lp_preset(Algorithm algo, LpObjective obj, std::size_t k) {
    ExperimentConfig c;
    c.domain.kind = DomainKind::Lp;
    c.domain.objective = obj;
    c.domain.measure_dim = k;
    if (k == 2) {
        c.archive.kind = TessellationKind::Grid;
        c.archive.resolution = 100;
    } else {
        c.archive.kind = TessellationKind::Cvt;
        c.archive.cells = 10'000;
    }
    AlgoConfig& a = c.algo;
    a.algorithm = algo;
    switch (algo) {
    case Algorithm::Dms:
        a.alpha = 0.1;
        a.restart = k == 2 ? RestartRule::basic() : RestartRule::fixed_interval(100);
        break;
    case Algorithm::CmaMae:
        a.alpha = 0.01;
        break;
    case Algorithm::Dds:
        a.sigma0 = 1.5;
        a.bandwidth = k == 2 ? 25.6 : 5.12;
        a.restart = RestartRule::no_improvement();
        a.selection = SelectionRule::Filter;
        break;
    case Algorithm::MapElites:
    case Algorithm::MapElitesLine:
        a.batch_size = 540;
        break;
    }
    c.trials = 20;
    return c;
}

inline ExperimentConfig arm_preset(Algorithm algo) {
    ExperimentConfig c;
    c.domain.kind = DomainKind::Arm;
    c.domain.solution_dim = 100;
    c.domain.measure_dim = 2;
    c.archive.kind = TessellationKind::Grid;
    c.archive.resolution = 100;
    AlgoConfig& a = c.algo;
    a.algorithm = algo;
    switch (algo) {
    case Algorithm::Dms:
        a.sigma0 = 0.2;
        a.alpha = 0.001;
        break;
    case Algorithm::CmaMae:
        a.sigma0 = 0.2;
        a.alpha = 0.01;
        break;
    case Algorithm::Dds:
        a.sigma0 = 0.5;
        a.bandwidth = 10.0;
        a.restart = RestartRule::no_improvement();
        a.selection = SelectionRule::Filter;
        break;
    case Algorithm::MapElites:
    case Algorithm::MapElitesLine:
        a.batch_size = 540;
        break;
    }
    c.trials = 20;
    return c;
}

inline ExperimentConfig triangles_preset(Algorithm algo, bool fashion) {
    ExperimentConfig c;
    c.domain.kind = DomainKind::Triangles;
    c.domain.solution_dim = 240;
    c.domain.measure_dim = 784;
    c.domain.dataset = fashion ? "data/fashion-mnist-images-idx3-ubyte" : "data/mnist5k-images-idx3-ubyte";
    c.domain.dataset_size = 1000;
    c.archive.kind = TessellationKind::Cvt;
    c.archive.cells = 1000;
    AlgoConfig& a = c.algo;
    a.algorithm = algo;
    a.emitters = 5;
    a.sigma0 = 0.1;
    a.me_sigma = 0.1;
    a.line_sigma1 = 0.1;
    a.batch_size = uses_emitters(algo) ? 36 : 180;
    a.alpha = fashion ? 0.1 : 0.001;
    if (uses_emitters(algo))
        a.restart = RestartRule::fixed_interval(50);
    c.trials = 5;
    return c;
}

inline std::string alpha_suffix(double alpha) {
    if (alpha == 0.0)
        return "alpha0";
    if (alpha == 1.0)
        return "alpha1";
    std::string s = csv::format(alpha);
    for (char& ch : s)
        if (ch == '.')
            ch = 'p';
    return "alpha" + s;
}

inline const std::map<std::string, ExperimentConfig>& preset_table() {
    static const std::map<std::string, ExperimentConfig> table = [] {
        std::map<std::string, ExperimentConfig> t;
        const std::vector<std::pair<Algorithm, std::string>> algos = {{Algorithm::Dms, "dms"},
                                                                      {Algorithm::CmaMae, "cmamae"},
                                                                      {Algorithm::Dds, "dds"},
                                                                      {Algorithm::MapElitesLine, "meline"},
                                                                      {Algorithm::MapElites, "me"}};
        auto add = [&](ExperimentConfig c, const std::string& name) {
            c.name = name;
            t[name] = std::move(c);
        };
        for (const auto& [algo, tag] : algos) {
            for (LpObjective obj : {LpObjective::Sphere, LpObjective::Rastrigin, LpObjective::Flat})
                for (std::size_t k : {2, 10, 20, 50})
                    add(lp_preset(algo, obj, k), tag + "_lp_" + to_string(obj) + "_" + std::to_string(k) + "d");
            add(arm_preset(algo), tag + "_arm");
            if (algo != Algorithm::Dds) {
                add(triangles_preset(algo, false), tag + "_ta_mnist");
                add(triangles_preset(algo, true), tag + "_ta_fmnist");
            }
        }
        // Ablation grids for DMS on the benchmark domains.
        std::vector<std::string> bases;
        for (const auto& [name, cfg] : t)
            if (cfg.algo.algorithm == Algorithm::Dms && cfg.domain.kind != DomainKind::Triangles)
                bases.push_back(name);
        for (const auto& base : bases) {
            const ExperimentConfig& b = t.at(base);
            for (double alpha : {0.0, 0.001, 0.01, 0.1, 1.0}) {
                ExperimentConfig c = b;
                c.algo.alpha = alpha;
                add(c, base + "_" + alpha_suffix(alpha));
            }
            for (std::size_t n : {0, 10, 100, 1000}) {
                ExperimentConfig c = b;
                c.algo.n_empty = n;
                add(c, base + "_nempty" + std::to_string(n));
            }
            ExperimentConfig basic = b;
            basic.algo.restart = RestartRule::basic();
            add(basic, base + "_restartbasic");
            ExperimentConfig fixed = b;
            fixed.algo.restart = RestartRule::fixed_interval(100);
            add(fixed, base + "_restart100");
        }
        return t;
    }();
    return table;
}

} // namespace detail

inline std::vector<std::string> list_presets() {
    std::vector<std::string> names;
    for (const auto& [name, cfg] : detail::preset_table())
        names.push_back(name);
    return names;
}

inline std::optional<ExperimentConfig> find_preset(const std::string& name) {
    const auto& t = detail::preset_table();
    const auto it = t.find(name);
    if (it == t.end())
        return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------- YAML config

inline std::string to_string(DomainKind k) {
    switch (k) {
    case DomainKind::Lp: return "lp";
    case DomainKind::Arm: return "arm";
    case DomainKind::Triangles: return "triangles";
    }
    return "?";
}

inline std::string restart_to_string(const RestartRule& r) {
    switch (r.kind) {
    case RestartRule::Kind::Basic: return "basic";
    case RestartRule::Kind::NoImprovement: return "no_improvement";
    case RestartRule::Kind::FixedInterval: return std::to_string(r.interval);
    }
    return "?";
}

inline std::string to_yaml(const ExperimentConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << c.name;
    out << YAML::Key << "domain" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << to_string(c.domain.kind);
    if (c.domain.kind == DomainKind::Lp)
        out << YAML::Key << "objective" << YAML::Value << to_string(c.domain.objective);
    out << YAML::Key << "solution_dim" << YAML::Value << c.domain.solution_dim;
    out << YAML::Key << "measure_dim" << YAML::Value << c.domain.measure_dim;
    if (c.domain.kind == DomainKind::Triangles) {
        out << YAML::Key << "dataset" << YAML::Value << c.domain.dataset;
        out << YAML::Key << "dataset_size" << YAML::Value << c.domain.dataset_size;
    }
    out << YAML::EndMap;
    out << YAML::Key << "archive" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << (c.archive.kind == TessellationKind::Grid ? "grid" : "cvt");
    if (c.archive.kind == TessellationKind::Grid) {
        out << YAML::Key << "resolution" << YAML::Value << c.archive.resolution;
    } else if (c.domain.kind != DomainKind::Triangles) {
        out << YAML::Key << "cells" << YAML::Value << c.archive.cells;
        out << YAML::Key << "cvt_samples" << YAML::Value << c.archive.cvt_samples;
        out << YAML::Key << "lloyd_iterations" << YAML::Value << c.archive.lloyd_iterations;
        out << YAML::Key << "cvt_seed" << YAML::Value << c.archive.cvt_seed;
        out << YAML::Key << "centroid_cache" << YAML::Value << c.archive.centroid_cache;
    }
    out << YAML::EndMap;
    const AlgoConfig& a = c.algo;
    out << YAML::Key << "algorithm" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << to_string(a.algorithm);
    out << YAML::Key << "iterations" << YAML::Value << a.iterations;
    out << YAML::Key << "batch_size" << YAML::Value << a.batch_size;
    out << YAML::Key << "f_min" << YAML::Value << a.f_min;
    if (uses_emitters(a.algorithm)) {
        out << YAML::Key << "emitters" << YAML::Value << a.emitters;
        out << YAML::Key << "sigma0" << YAML::Value << a.sigma0;
        out << YAML::Key << "restart" << YAML::Value << restart_to_string(a.restart);
        out << YAML::Key << "selection" << YAML::Value << (a.selection == SelectionRule::Mu ? "mu" : "filter");
    }
    if (a.algorithm == Algorithm::Dms || a.algorithm == Algorithm::CmaMae)
        out << YAML::Key << "alpha" << YAML::Value << a.alpha;
    if (a.algorithm == Algorithm::Dms) {
        out << YAML::Key << "n_init" << YAML::Value << a.n_init;
        out << YAML::Key << "n_empty" << YAML::Value << a.n_empty;
    }
    if (a.algorithm == Algorithm::Dds) {
        out << YAML::Key << "bandwidth" << YAML::Value << a.bandwidth;
        out << YAML::Key << "buffer_capacity" << YAML::Value << a.buffer_capacity;
    }
    if (a.algorithm == Algorithm::MapElites)
        out << YAML::Key << "me_sigma" << YAML::Value << a.me_sigma;
    if (a.algorithm == Algorithm::MapElitesLine) {
        out << YAML::Key << "line_sigma1" << YAML::Value << a.line_sigma1;
        out << YAML::Key << "line_sigma2" << YAML::Value << a.line_sigma2;
    }
    out << YAML::Key << "eval_workers" << YAML::Value << a.eval_workers;
    out << YAML::EndMap;
    out << YAML::Key << "experiment" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "trials" << YAML::Value << c.trials;
    out << YAML::Key << "seed" << YAML::Value << c.seed;
    out << YAML::Key << "output" << YAML::Value << c.output_dir();
    out << YAML::Key << "log_every" << YAML::Value << c.log_every;
    out << YAML::Key << "save_solutions" << YAML::Value << c.save_solutions;
    out << YAML::Key << "save_model" << YAML::Value << c.save_model;
    out << YAML::Key << "log_unique_cells" << YAML::Value << c.log_unique_cells;
    out << YAML::Key << "workers" << YAML::Value << c.workers;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

template <typename T>
T scalar(const YAML::Node& n, const std::string& key) {
    if (!n.IsScalar())
        throw ConfigError("'" + key + "' must be a scalar", line_of(n));
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("'" + key + "' has an invalid value '" + n.Scalar() + "'", line_of(n));
    }
}

template <typename T>
T positive(const YAML::Node& n, const std::string& key) {
    const T v = scalar<T>(n, key);
    if (!(v > T{0}))
        throw ConfigError("'" + key + "' must be positive", line_of(n));
    return v;
}

inline std::size_t count(const YAML::Node& n, const std::string& key, bool allow_zero = false) {
    const auto v = scalar<long long>(n, key);
    if (v < 0 || (!allow_zero && v == 0))
        throw ConfigError("'" + key + "' must be " + (allow_zero ? "non-negative" : "positive"), line_of(n));
    return static_cast<std::size_t>(v);
}

inline void for_each_key(const YAML::Node& map, const std::string& section, const std::function<bool(const std::string&, const YAML::Node&)>& fn) {
    if (!map.IsMap())
        throw ConfigError("'" + section + "' must be a mapping", line_of(map));
    for (const auto& kv : map) {
        const auto key = kv.first.as<std::string>();
        if (!fn(key, kv.second))
            throw ConfigError("unknown key '" + key + "' in " + section, line_of(kv.first));
    }
}

inline void apply_domain(DomainSpec& d, const YAML::Node& node) {
    for_each_key(node, "domain", [&](const std::string& k, const YAML::Node& v) {
        if (k == "kind") {
            const auto s = scalar<std::string>(v, k);
            if (s == "lp")
                d.kind = DomainKind::Lp;
            else if (s == "arm")
                d.kind = DomainKind::Arm;
            else if (s == "triangles")
                d.kind = DomainKind::Triangles;
            else
                throw ConfigError("domain kind must be lp, arm or triangles", line_of(v));
        } else if (k == "objective") {
            const auto s = scalar<std::string>(v, k);
            if (s == "sphere")
                d.objective = LpObjective::Sphere;
            else if (s == "rastrigin")
                d.objective = LpObjective::Rastrigin;
            else if (s == "flat")
                d.objective = LpObjective::Flat;
            else
                throw ConfigError("objective must be sphere, rastrigin or flat", line_of(v));
        } else if (k == "solution_dim") {
            d.solution_dim = count(v, k);
        } else if (k == "measure_dim") {
            d.measure_dim = count(v, k);
        } else if (k == "dataset") {
            d.dataset = scalar<std::string>(v, k);
        } else if (k == "dataset_size") {
            d.dataset_size = count(v, k);
        } else {
            return false;
        }
        return true;
    });
}

inline void apply_archive(ArchiveSpec& a, const YAML::Node& node) {
    for_each_key(node, "archive", [&](const std::string& k, const YAML::Node& v) {
        if (k == "kind") {
            const auto s = scalar<std::string>(v, k);
            if (s == "grid")
                a.kind = TessellationKind::Grid;
            else if (s == "cvt")
                a.kind = TessellationKind::Cvt;
            else
                throw ConfigError("archive kind must be grid or cvt", line_of(v));
        } else if (k == "resolution") {
            a.resolution = static_cast<int>(positive<long long>(v, k));
        } else if (k == "cells") {
            a.cells = count(v, k);
        } else if (k == "cvt_samples") {
            a.cvt_samples = count(v, k);
        } else if (k == "lloyd_iterations") {
            a.lloyd_iterations = static_cast<int>(count(v, k, true));
        } else if (k == "cvt_seed") {
            a.cvt_seed = scalar<std::uint64_t>(v, k);
        } else if (k == "centroid_cache") {
            a.centroid_cache = scalar<std::string>(v, k);
        } else {
            return false;
        }
        return true;
    });
}

inline void apply_algorithm(AlgoConfig& a, const YAML::Node& node) {
    for_each_key(node, "algorithm", [&](const std::string& k, const YAML::Node& v) {
        if (k == "name") {
            const auto s = scalar<std::string>(v, k);
            if (s == "dms")
                a.algorithm = Algorithm::Dms;
            else if (s == "cma_mae")
                a.algorithm = Algorithm::CmaMae;
            else if (s == "dds")
                a.algorithm = Algorithm::Dds;
            else if (s == "map_elites")
                a.algorithm = Algorithm::MapElites;
            else if (s == "map_elites_line")
                a.algorithm = Algorithm::MapElitesLine;
            else
                throw ConfigError("algorithm must be dms, cma_mae, dds, map_elites or map_elites_line", line_of(v));
        } else if (k == "iterations") {
            a.iterations = static_cast<long>(count(v, k));
        } else if (k == "emitters") {
            a.emitters = count(v, k);
        } else if (k == "batch_size") {
            a.batch_size = count(v, k);
            if (a.batch_size < 2)
                throw ConfigError("batch_size must be at least 2", line_of(v));
        } else if (k == "sigma0") {
            a.sigma0 = positive<double>(v, k);
        } else if (k == "alpha") {
            a.alpha = scalar<double>(v, k);
            if (!(a.alpha >= 0.0 && a.alpha <= 1.0))
                throw ConfigError("alpha must lie in [0, 1]", line_of(v));
        } else if (k == "restart") {
            const auto s = scalar<std::string>(v, k);
            if (s == "basic") {
                a.restart = RestartRule::basic();
            } else if (s == "no_improvement") {
                a.restart = RestartRule::no_improvement();
            } else {
                a.restart = RestartRule::fixed_interval(static_cast<int>(positive<long long>(v, k)));
            }
        } else if (k == "selection") {
            const auto s = scalar<std::string>(v, k);
            if (s == "mu")
                a.selection = SelectionRule::Mu;
            else if (s == "filter")
                a.selection = SelectionRule::Filter;
            else
                throw ConfigError("selection must be mu or filter", line_of(v));
        } else if (k == "f_min") {
            a.f_min = scalar<double>(v, k);
        } else if (k == "n_init") {
            a.n_init = count(v, k);
        } else if (k == "n_empty") {
            a.n_empty = count(v, k, true);
        } else if (k == "me_sigma") {
            a.me_sigma = scalar<double>(v, k);
        } else if (k == "line_sigma1") {
            a.line_sigma1 = scalar<double>(v, k);
        } else if (k == "line_sigma2") {
            a.line_sigma2 = scalar<double>(v, k);
        } else if (k == "bandwidth") {
            a.bandwidth = positive<double>(v, k);
        } else if (k == "buffer_capacity") {
            a.buffer_capacity = count(v, k);
        } else if (k == "eval_workers") {
            a.eval_workers = static_cast<int>(count(v, k));
        } else {
            return false;
        }
        return true;
    });
}

inline void apply_experiment(ExperimentConfig& c, const YAML::Node& node) {
    for_each_key(node, "experiment", [&](const std::string& k, const YAML::Node& v) {
        if (k == "trials")
            c.trials = static_cast<int>(count(v, k));
        else if (k == "seed")
            c.seed = scalar<std::uint64_t>(v, k);
        else if (k == "output")
            c.output = scalar<std::string>(v, k);
        else if (k == "log_every")
            c.log_every = static_cast<long>(count(v, k));
        else if (k == "save_solutions")
            c.save_solutions = scalar<bool>(v, k);
        else if (k == "save_model")
            c.save_model = scalar<bool>(v, k);
        else if (k == "log_unique_cells")
            c.log_unique_cells = scalar<bool>(v, k);
        else if (k == "workers")
            c.workers = static_cast<int>(count(v, k));
        else
            return false;
        return true;
    });
}

} // namespace detail

/// Cross-field checks shared by presets and parsed files.
inline void validate(const ExperimentConfig& c) {
    if (c.domain.kind == DomainKind::Lp && c.domain.solution_dim % c.domain.measure_dim != 0)
        throw ConfigError("measure_dim must divide solution_dim for lp domains", 0);
    if (c.domain.kind == DomainKind::Arm && c.domain.measure_dim != 2)
        throw ConfigError("the arm domain has two measures", 0);
    if (c.domain.kind == DomainKind::Triangles) {
        if (c.domain.dataset.empty())
            throw ConfigError("the triangles domain needs a dataset path", 0);
        if (c.domain.solution_dim % kTriangleParams != 0)
            throw ConfigError("triangle solution_dim must be a multiple of 8", 0);
        if (c.archive.kind != TessellationKind::Cvt)
            throw ConfigError("the triangles domain uses a CVT archive built from the dataset", 0);
    }
    if (c.archive.kind == TessellationKind::Cvt && c.domain.kind != DomainKind::Triangles && c.archive.cells > c.archive.cvt_samples)
        throw ConfigError("cvt cells exceed cvt_samples", 0);
}

/// Parses a YAML config. An optional top-level `preset` key supplies the
/// defaults that the remaining sections override.
inline ExperimentConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(e.msg, e.mark.line + 1);
    }
    if (!root.IsMap())
        throw ConfigError("config must be a mapping", detail::line_of(root));
    ExperimentConfig c;
    if (const auto p = root["preset"]) {
        const auto name = detail::scalar<std::string>(p, "preset");
        const auto preset = find_preset(name);
        if (!preset)
            throw ConfigError("unknown preset '" + name + "'", detail::line_of(p));
        c = *preset;
    }
    detail::for_each_key(root, "config", [&](const std::string& k, const YAML::Node& v) {
        if (k == "preset")
            return true;
        if (k == "name")
            c.name = detail::scalar<std::string>(v, k);
        else if (k == "domain")
            detail::apply_domain(c.domain, v);
        else if (k == "archive")
            detail::apply_archive(c.archive, v);
        else if (k == "algorithm")
            detail::apply_algorithm(c.algo, v);
        else if (k == "experiment")
            detail::apply_experiment(c, v);
        else
            return false;
        return true;
    });
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open " + path, 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// A preset name or a path to a YAML config.
inline ExperimentConfig resolve_config(const std::string& name_or_path) {
    if (auto preset = find_preset(name_or_path))
        return *preset;
    if (!std::filesystem::exists(name_or_path))
        throw ConfigError("'" + name_or_path + "' is neither a preset nor a config file", 0);
    return load_config(name_or_path);
}

// ---------------------------------------------------------------- setup

struct ExperimentSetup {
    std::unique_ptr<Domain> domain;
    std::shared_ptr<const Tessellation> tessellation;
};

/// Builds the domain and the tessellation shared by all trials. CVTs are
/// cached as centroid CSVs when a cache path is configured.
inline ExperimentSetup build_setup(const ExperimentConfig& c) {
    ExperimentSetup s;
    const DomainSpec& d = c.domain;
    switch (d.kind) {
    case DomainKind::Lp:
        s.domain = std::make_unique<LinearProjection>(d.solution_dim, d.measure_dim, d.objective);
        break;
    case DomainKind::Arm:
        s.domain = std::make_unique<ArmRepertoire>(d.solution_dim);
        break;
    case DomainKind::Triangles: {
        const Mat images = load_idx(d.dataset);
        if (static_cast<std::size_t>(images.rows()) != d.measure_dim)
            throw ConfigError("dataset images have " + std::to_string(images.rows()) + " pixels, measure_dim is " + std::to_string(d.measure_dim), 0);
        RngStream pick = RngStream(c.seed).spawn(6000);
        const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(images.rows()))));
        s.domain = std::make_unique<TriangleArrangement>(subsample_images(images, d.dataset_size, pick), side, side, d.solution_dim / kTriangleParams);
        s.tessellation = s.domain->tessellation();
        return s;
    }
    }
    const Vec lo = s.domain->measure_lower(), hi = s.domain->measure_upper();
    if (c.archive.kind == TessellationKind::Grid) {
        s.tessellation = std::make_shared<const Tessellation>(Tessellation::grid(lo, hi, std::vector<int>(d.measure_dim, c.archive.resolution)));
        return s;
    }
    const std::string& cache = c.archive.centroid_cache;
    if (!cache.empty() && std::filesystem::exists(cache)) {
        Mat centroids = csv::read_points(cache);
        if (static_cast<std::size_t>(centroids.rows()) != d.measure_dim || static_cast<std::size_t>(centroids.cols()) != c.archive.cells)
            throw IoError(cache + ": cached centroids do not match the configured archive");
        s.tessellation = std::make_shared<const Tessellation>(Tessellation::cvt(std::move(centroids)));
        return s;
    }
    RngStream rng(c.archive.cvt_seed);
    s.tessellation = std::make_shared<const Tessellation>(
        cvt_from_samples(lo, hi, c.archive.cells, rng, CvtOptions{c.archive.cvt_samples, c.archive.lloyd_iterations}));
    if (!cache.empty()) {
        const auto parent = std::filesystem::path(cache).parent_path();
        if (!parent.empty())
            std::filesystem::create_directories(parent);
        csv::write_points(cache, s.tessellation->centroids());
    }
    return s;
}

// ---------------------------------------------------------------- trials

struct TrialOutput {
    RunResult result;
    std::shared_ptr<MlpDiscount> model;
};

/// Runs one trial with root stream RngStream(seed). For DMS, a non-empty
/// `init_snapshot` receives the discount model right after its initial
/// regression.
inline TrialOutput run_trial(const ExperimentConfig& c, const ExperimentSetup& s, std::uint64_t seed, RunHooks hooks = {},
                             const std::string& init_snapshot = {}) {
    const RngStream root(seed);
    auto wrap = [](RunResult r) { return TrialOutput{std::move(r), nullptr}; };
    switch (c.algo.algorithm) {
    case Algorithm::Dms: {
        MlpDiscountOptions mo;
        mo.hidden = c.algo.hidden;
        mo.training = c.algo.training;
        mo.n_init = c.algo.n_init;
        mo.f_min = c.algo.f_min;
        auto model = std::make_shared<MlpDiscount>(s.tessellation, MeasureNormalizer(s.domain->measure_lower(), s.domain->measure_upper()), mo);
        if (!init_snapshot.empty()) {
            // Iteration 1 reports its dataset before the first training step.
            auto user = hooks.on_dataset;
            hooks.on_dataset = [model, init_snapshot, user](long it, const DiscountDataset& ds) {
                if (it == 1)
                    write_snapshot(init_snapshot, model->model(), model->normalizer());
                if (user)
                    user(it, ds);
            };
        }
        TrialOutput out{run_dms(c.algo, *s.domain, s.tessellation, *model, root, hooks), model};
        return out;
    }
    case Algorithm::CmaMae:
        return wrap(run_cma_mae(c.algo, *s.domain, s.tessellation, root, hooks));
    case Algorithm::Dds:
        return wrap(run_dds(c.algo, *s.domain, s.tessellation, root, hooks));
    case Algorithm::MapElites:
        return wrap(run_map_elites(c.algo, *s.domain, s.tessellation, root, hooks));
    case Algorithm::MapElitesLine:
        return wrap(run_map_elites_line(c.algo, *s.domain, s.tessellation, root, hooks));
    }
    throw ConfigError("unknown algorithm");
}

/// Iteration log CSV. Wallclock is kept out so that logs of identical runs
/// are byte-identical; it goes to the JSON summary instead.
inline void write_iteration_csv(std::ostream& out, const std::vector<IterationLog>& logs, std::size_t emitters, long every, bool unique) {
    out << "iteration,qd_score,coverage,unique_cells,evaluations,discount_loss";
    for (std::size_t w = 0; w < emitters; ++w)
        out << ",restarts_" << w;
    out << '\n';
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const IterationLog& l = logs[i];
        if (l.iteration % every != 0 && i + 1 != logs.size())
            continue;
        out << l.iteration << ',' << csv::format(l.qd_score) << ',' << csv::format(l.coverage) << ',';
        if (unique)
            out << l.unique_cells;
        out << ',' << l.evaluations << ',';
        if (!std::isnan(l.discount_loss))
            out << csv::format(l.discount_loss);
        for (std::size_t w = 0; w < emitters; ++w)
            out << ',' << (w < l.restarts.size() ? l.restarts[w] : 0);
        out << '\n';
    }
}

struct TrialSummary {
    int trial = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double qd_score = 0.0;
    double coverage = 0.0;
    long evaluations = 0;
    double wallclock_s = 0.0;
    std::vector<IterationLog> logs;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

/// Standard error of the mean with the n - 1 sample variance (0 for n = 1).
inline double sem_of(const std::vector<double>& v) {
    if (v.size() < 2)
        return v.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v)
        ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

} // namespace detail

/// Mean and SEM of qd_score, coverage and unique_cells per logged iteration
/// over the successful trials.
inline void write_aggregate_csv(std::ostream& out, const std::vector<TrialSummary>& trials, long every) {
    out << "iteration,trials,qd_score_mean,qd_score_sem,coverage_mean,coverage_sem,unique_cells_mean,unique_cells_sem\n";
    std::vector<const TrialSummary*> ok;
    for (const auto& t : trials)
        if (t.ok)
            ok.push_back(&t);
    if (ok.empty())
        return;
    const std::size_t rows = ok.front()->logs.size();
    for (std::size_t i = 0; i < rows; ++i) {
        const long iteration = ok.front()->logs[i].iteration;
        if (iteration % every != 0 && i + 1 != rows)
            continue;
        std::vector<double> qd, cov, uc;
        for (const auto* t : ok) {
            if (i >= t->logs.size())
                continue;
            qd.push_back(t->logs[i].qd_score);
            cov.push_back(t->logs[i].coverage);
            uc.push_back(static_cast<double>(t->logs[i].unique_cells));
        }
        out << iteration << ',' << qd.size() << ',' << csv::format(detail::mean_of(qd)) << ',' << csv::format(detail::sem_of(qd)) << ','
            << csv::format(detail::mean_of(cov)) << ',' << csv::format(detail::sem_of(cov)) << ',' << csv::format(detail::mean_of(uc)) << ','
            << csv::format(detail::sem_of(uc)) << '\n';
    }
}

struct ExperimentResult {
    std::filesystem::path output;
    std::vector<TrialSummary> trials;
    bool all_ok() const {
        return std::all_of(trials.begin(), trials.end(), [](const TrialSummary& t) { return t.ok; });
    }
};

/// Runs every trial (seed = base seed + trial index) and writes
///   <out>/config.yaml, <out>/aggregate.csv, [<out>/centroids.csv],
///   <out>/trial_XXX/{iterations.csv, archive.csv, summary.json, [model_init.bin, model.bin]}.
/// A failing trial is recorded in its summary; the others still run.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const std::function<void(const std::string&)>& progress = {}) {
    validate(c);
    namespace fs = std::filesystem;
    const fs::path out = c.output_dir();
    fs::create_directories(out);
    detail::write_text(out / "config.yaml", to_yaml(c));
    const ExperimentSetup setup = build_setup(c);
    if (setup.tessellation->kind() == TessellationKind::Cvt) {
        std::ofstream cf(out / "centroids.csv");
        csv::write_points(cf, setup.tessellation->centroids());
    }

    ExperimentResult res{out, std::vector<TrialSummary>(static_cast<std::size_t>(c.trials))};
    std::mutex progress_mutex;
    const std::size_t restart_columns = uses_emitters(c.algo.algorithm) ? c.algo.emitters : 0;

    auto one = [&](int t) {
        TrialSummary& sum = res.trials[static_cast<std::size_t>(t)];
        sum.trial = t;
        sum.seed = c.seed + static_cast<std::uint64_t>(t);
        char dirname[32];
        std::snprintf(dirname, sizeof(dirname), "trial_%03d", t);
        const fs::path dir = out / dirname;
        nlohmann::json js;
        try {
            fs::create_directories(dir);
            const std::string init_path = c.save_model ? (dir / "model_init.bin").string() : std::string{};
            const TrialOutput trial = run_trial(c, setup, sum.seed, {}, init_path);
            const RunResult& r = trial.result;
            {
                std::ofstream f(dir / "iterations.csv", std::ios::binary);
                write_iteration_csv(f, r.logs, restart_columns, c.log_every, c.log_unique_cells);
            }
            {
                std::ofstream f(dir / "archive.csv", std::ios::binary);
                r.archive.write_csv(f, c.save_solutions);
            }
            if (c.save_model && trial.model)
                write_snapshot((dir / "model.bin").string(), trial.model->model(), trial.model->normalizer());
            sum.ok = true;
            sum.qd_score = r.archive.qd_score();
            sum.coverage = r.archive.coverage();
            sum.evaluations = r.logs.empty() ? 0 : r.logs.back().evaluations;
            sum.wallclock_s = r.wallclock_s;
            sum.logs = r.logs;
            js = {{"status", "ok"}, {"qd_score", sum.qd_score}, {"coverage", sum.coverage}, {"evaluations", sum.evaluations},
                  {"wallclock_s", sum.wallclock_s}, {"seed", sum.seed}};
        } catch (const std::exception& e) {
            sum.ok = false;
            sum.error = e.what();
            js = {{"status", "failed"}, {"error", sum.error}, {"seed", sum.seed}};
        }
        try {
            fs::create_directories(dir);
            detail::write_text(dir / "summary.json", js.dump(2) + "\n");
        } catch (const std::exception&) {
        }
        if (progress) {
            std::lock_guard lock(progress_mutex);
            std::ostringstream msg;
            if (sum.ok)
                msg << dirname << ": qd_score " << sum.qd_score << ", coverage " << sum.coverage << "%, " << std::fixed << std::setprecision(1)
                    << sum.wallclock_s << " s";
            else
                msg << dirname << ": failed: " << sum.error;
            progress(msg.str());
        }
    };

    if (c.workers <= 1 || c.trials == 1) {
        for (int t = 0; t < c.trials; ++t)
            one(t);
    } else {
        tbb::task_arena arena(c.workers);
        arena.execute([&] { tbb::parallel_for(0, c.trials, one); });
    }
    std::ofstream agg(out / "aggregate.csv", std::ios::binary);
    write_aggregate_csv(agg, res.trials, c.log_every);
    return res;
}

// ---------------------------------------------------------------- discount grid

/// Discount values of a snapshot over a resolution x resolution grid of cell
/// centres spanning [lower, upper] (defaults to the snapshot's measure bounds).
/// Rows: m0, m1, discount with m1 varying fastest.
inline void export_discount_grid(const ModelSnapshot& snap, int resolution, std::ostream& out, std::optional<Vec> lower = std::nullopt,
                                 std::optional<Vec> upper = std::nullopt) {
    if (snap.normalizer.dim() != 2)
        throw CliError("discount grids need a model over 2 measures, this one has " + std::to_string(snap.normalizer.dim()));
    if (resolution < 1)
        throw CliError("resolution must be positive");
    const Vec lo = lower.value_or(snap.normalizer.lower());
    const Vec hi = upper.value_or(snap.normalizer.upper());
    if (lo.size() != 2 || hi.size() != 2 || !(lo.array() < hi.array()).all())
        throw CliError("grid bounds must be two increasing intervals");
    if ((lo.array() < snap.normalizer.lower().array()).any() || (hi.array() > snap.normalizer.upper().array()).any())
        throw CliError("requested grid lies outside the model's measure bounds");
    const auto r = static_cast<Eigen::Index>(resolution);
    Mat points(2, r * r);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j) {
            points(0, i * r + j) = lo(0) + (static_cast<double>(i) + 0.5) * (hi(0) - lo(0)) / static_cast<double>(r);
            points(1, i * r + j) = lo(1) + (static_cast<double>(j) + 0.5) * (hi(1) - lo(1)) / static_cast<double>(r);
        }
    const Vec values = snap.model.forward(snap.normalizer.normalize(points));
    out << "m0,m1,discount\n";
    for (Eigen::Index c = 0; c < points.cols(); ++c)
        out << csv::format(points(0, c)) << ',' << csv::format(points(1, c)) << ',' << csv::format(values(c)) << '\n';
}

} // namespace qd
