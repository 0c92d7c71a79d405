// thinobs: batch runner for thin obstacle scenarios.
//
//   thinobs solve <config> [--out DIR]
//   thinobs diagnose <config> [--out DIR] [--seed S]
//   thinobs sweep <config> [--out DIR]
//   thinobs report <dir>
//   thinobs oracle-compare <config>
//
// <config> is a scenario file or the name of a builtin scenario. Failures
// print a JSON error record on stderr and exit with status 2.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "thinobs/scenario.hpp"

using namespace thinobs;

namespace {

struct Options {
    std::string config;
    std::string out = "runs";
    int threads = 1;
    std::uint64_t seed = 0;
    std::string format = "json";
    int resolution = 0;
};

struct Loaded {
    Scenario scenario;
    std::string bytes;
};

Loaded load(const Options& opt) {
    std::string bytes;
    fs::path base;
    if (fs::is_regular_file(opt.config)) {
        std::ifstream is(opt.config, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        bytes = ss.str();
        base = fs::path(opt.config).parent_path();
    } else {
        bytes = builtin_scenario_text(opt.config, opt.resolution > 0 ? opt.resolution : 65);
    }
    Scenario sc = parse_scenario(bytes, base);
    if (opt.resolution > 0 && opt.resolution != sc.grid.resolution) {
        sc.grid.resolution = opt.resolution;
        sc.grid.validate();
        bytes += "\n# N override " + std::to_string(opt.resolution) + "\n";
    }
    sc.control.threads = opt.threads;
    return {std::move(sc), std::move(bytes)};
}

fs::path run_dir(const Options& opt, const Loaded& l) {
    const fs::path dir = fs::path(opt.out) / config_key(l.bytes);
    fs::create_directories(dir);
    write_atomic(dir / "config.ini", l.bytes);
    return dir;
}

void print(const json& j, const Options& opt) {
    if (opt.format == "csv" && j.is_object()) {
        std::cout << "key,value\n";
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.value().is_primitive()) std::cout << it.key() << ',' << dump_json(it.value());
        }
        return;
    }
    std::cout << dump_json(j);
}

json diagnose(const Options& opt, const Loaded& l, const fs::path& dir, const SolvedScenario& solved) {
    const DiagnosticsOutput d = diagnose_stage(l.scenario, solved, opt.seed);
    write_atomic(dir / "regularity_report.json", dump_json(d.regularity.to_json()));
    write_atomic(dir / "checks.json", dump_json(d.checks));
    write_atomic(dir / "diagnostics.json", dump_json(d.details));
    const int n = l.scenario.grid.dimension;
    if (d.details.contains("sigma_profile")) {
        write_atomic(dir / "sigma_profile.csv", sigma_profile_csv(d.details["sigma_profile"], n));
    }
    if (d.details.contains("flatness_table")) {
        write_atomic(dir / "flatness_table.csv", flatness_table_csv(d.details["flatness_table"], n));
    }
    json out = d.regularity.to_json();
    out["checks"] = d.checks;
    return out;
}

int run_solve(const Options& opt) {
    const Loaded l = load(opt);
    const fs::path dir = run_dir(opt, l);
    const SolvedScenario s = solve_stage(l.scenario, dir);
    json out = s.report.to_json();
    out.erase("active_set");
    out["output_dir"] = dir.string();
    out["cached"] = s.from_cache;
    // The sweep stays behind its own subcommand; it costs one solve per epsilon.
    out["regularity_report"] = diagnose(opt, l, dir, s);
    emit_report(dir);
    print(out, opt);
    return 0;
}

int run_diagnose(const Options& opt) {
    const Loaded l = load(opt);
    const fs::path dir = run_dir(opt, l);
    const SolvedScenario s = solve_stage(l.scenario, dir);
    json out = diagnose(opt, l, dir, s);
    out["output_dir"] = dir.string();
    emit_report(dir);
    print(out, opt);
    return 0;
}

int run_sweep(const Options& opt) {
    const Loaded l = load(opt);
    const fs::path dir = run_dir(opt, l);
    const SolvedScenario s = solve_stage(l.scenario, dir);
    const auto rows = sweep_stage(l.scenario, s);
    const json table = sweep_rows_json(rows);
    write_atomic(dir / "sweep.json", dump_json(table));
    write_atomic(dir / "eps_sweep.csv", sweep_table_csv(table));
    write_atomic(dir / "sweep_checks.json", dump_json(sweep_checks(rows, l.scenario.control.tol)));
    emit_report(dir);
    if (opt.format == "csv") {
        std::cout << sweep_table_csv(table);
    } else {
        std::cout << dump_json({{"output_dir", dir.string()}, {"sweep", table}});
    }
    return 0;
}

int run_report(const Options& opt) {
    const json summary = emit_report(opt.config);
    print(summary, opt);
    return summary.at("all_pass").get<bool>() ? 0 : 1;
}

/// Compares the solver with an independent reference: exhaustive enumeration
/// on tiny linear grids, the closed form for the 2D benchmark, otherwise the
/// relaxation path.
int run_oracle_compare(const Options& opt) {
    const Loaded l = load(opt);
    const Scenario& sc = l.scenario;
    const Instance inst = build_instance(sc);
    const ThinObstacleSpec spec = inst.spec(sc.control);
    const auto [u, report] = solve_thin_obstacle(spec);
    const Grid& g = *inst.grid;

    json out;
    ScalarField ref(inst.grid, 0.0);
    double region = 1.0;
    if (inst.normalized.transformed.size() == 1 && g.nodes(NodeClass::thin).size() <= 12) {
        out["oracle"] = "brute-force";
        ref = brute_force_thin_obstacle(spec);
    } else if (sc.boundary.kind == BoundarySource::Kind::exact_signorini && sc.family_builtin == "laplacian" &&
               sc.family_file.empty() && sc.obstacle.kind == ObstacleSource::Kind::zero) {
        out["oracle"] = "exact-signorini";
        ref = exact_signorini_field(inst.grid);
        region = 0.5;
    } else {
        out["oracle"] = "relaxation";
        SolveControl ctl = sc.control;
        ctl.method = SolverMethod::relaxation;
        ref = solve_thin_obstacle({spec.family, spec.obstacle, spec.boundary, ctl}).first;
    }
    double diff = 0.0;
    for (Index x = 0; x < g.size(); ++x) {
        if (g.inside(x) && g.radius(x) <= region) diff = std::max(diff, std::abs(u[x] - ref[x]));
    }
    out["max_abs_difference"] = diff;
    out["region_radius"] = region;
    out["solver_iterations"] = report.iterations;
    print(out, opt);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thinobs: fully nonlinear thin obstacle experiments"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub, const char* what) {
        sub->add_option(what, opt.config)->required();
        sub->add_option("--out", opt.out, "output root directory");
        sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", opt.seed, "seed for randomized sampling");
        sub->add_option("--format", opt.format, "stdout format")->check(CLI::IsMember({"json", "csv"}));
        sub->add_option("-N,--resolution", opt.resolution, "override the grid resolution");
    };
    CLI::App* solve = app.add_subcommand("solve", "solve a scenario and run its diagnostics");
    CLI::App* sweep = app.add_subcommand("sweep", "penalization epsilon sweep");
    CLI::App* diag = app.add_subcommand("diagnose", "regularity diagnostics on the cached solve");
    CLI::App* report = app.add_subcommand("report", "merge a run directory into summary.json");
    CLI::App* oracle = app.add_subcommand("oracle-compare", "compare against an independent reference");
    add_common(solve, "config");
    add_common(sweep, "config");
    add_common(diag, "config");
    add_common(report, "dir");
    add_common(oracle, "config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*solve) return run_solve(opt);
        if (*sweep) return run_sweep(opt);
        if (*diag) return run_diagnose(opt);
        if (*report) return run_report(opt);
        if (*oracle) return run_oracle_compare(opt);
    } catch (const Error& e) {
        std::cerr << dump_json({{"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
        return 2;
    } catch (const std::exception& e) {
        std::cerr << dump_json({{"error", "io-error"}, {"message", e.what()}});
        return 2;
    }
    return 0;
}
