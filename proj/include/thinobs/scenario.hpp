#pragma once

// Batch experiment pipeline: scenario configs, cached solves, diagnostics,
// the penalization sweep and the consolidated summary.
//
// Artifacts of one scenario live in <out>/<key>, where key is the first 16
// hex digits of SHA-256(config bytes + code version). Files are written to a
// temporary name and renamed into place.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "thinobs/error.hpp"
#include "thinobs/grid.hpp"
#include "thinobs/operators.hpp"
#include "thinobs/oracle.hpp"
#include "thinobs/regularity.hpp"
#include "thinobs/solver.hpp"

namespace thinobs {

inline constexpr const char* kCodeVersion = "thinobs-0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Builtin families

/// Members I + e_k e_k^T, one per axis (lambda = 1, Lambda = 2).
inline BellmanFamily pucci_family(int n) {
    std::vector<LinearOperator> members;
    for (int k = 0; k < n; ++k) {
        Matrix M = Matrix::Identity(n, n);
        M(k, k) = 2.0;
        members.push_back({M, 0.0});
    }
    return BellmanFamily(std::move(members), Ellipticity{1.0, 2.0});
}

/// Three members with mixed-sign off-diagonal couplings, including the
/// tangential/normal one, so the coordinate change is non-trivial.
inline BellmanFamily anisotropic_family(int n) {
    Matrix a(n, n), b(n, n), c(n, n);
    if (n == 2) {
        a << 1.0, 0.3, 0.3, 1.0;
        b << 1.5, -0.4, -0.4, 1.0;
        c << 1.0, 0.0, 0.0, 2.0;
        return BellmanFamily({{a, 0.0}, {b, 0.0}, {c, 0.0}}, Ellipticity{0.7, 2.0});
    }
    a << 1.0, 0.0, 0.3, 0.0, 1.0, 0.2, 0.3, 0.2, 1.2;
    b << 1.5, -0.3, 0.0, -0.3, 1.2, 0.1, 0.0, 0.1, 1.0;
    c << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0;
    return BellmanFamily({{a, 0.0}, {b, 0.0}, {c, 0.0}}, Ellipticity{0.6, 2.0});
}

inline BellmanFamily builtin_family(const std::string& name, int n) {
    if (name == "laplacian") return BellmanFamily::laplacian(n);
    if (name == "pucci") return pucci_family(n);
    if (name == "anisotropic") return anisotropic_family(n);
    throw Error(ErrorKind::invalid_config, "unknown builtin family '" + name + "'");
}

// ---------------------------------------------------------------------------
// Scenario

struct ObstacleSource {
    enum class Kind { zero, paraboloid, custom } kind = Kind::zero;
    double a = 0.0;  // paraboloid phi = a - b |x'|^2
    double b = 0.0;
    std::string file;
};

struct BoundarySource {
    enum class Kind { exact_signorini, constant, custom } kind = Kind::constant;
    double c = 0.0;
    std::string file;
};

struct DiagnosticsConfig {
    std::vector<std::string> run;
    double contact_tol = 1e-6;
    double region_radius = 0.75;
    int barrier_samples = 10;
    Cylinder cylinder{};
    std::vector<double> radii;  // empty selects default_radii
    std::vector<double> gap_etas{0.4, 0.2, 0.1, 0.05};

    [[nodiscard]] bool wants(const std::string& what) const {
        return std::find(run.begin(), run.end(), what) != run.end();
    }
};

struct Scenario {
    std::string name;
    GridSpec grid;
    std::string family_builtin = "laplacian";
    std::string family_file;
    std::size_t pivot = 0;
    ObstacleSource obstacle;
    BoundarySource boundary;
    SolveControl control;
    DiagnosticsConfig diagnostics;
    std::vector<double> epsilon_sweep;
};

inline const std::vector<std::string>& all_diagnostics() {
    static const std::vector<std::string> names{"sigma",       "coincidence", "derivative_bounds", "flatness",
                                                "sigma_holder", "symmetrize",  "barrier",           "extension",
                                                "dirichlet_gap"};
    return names;
}

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n\"'");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n\"'");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cleaned = s;
    cleaned.erase(std::remove(cleaned.begin(), cleaned.end(), '['), cleaned.end());
    cleaned.erase(std::remove(cleaned.begin(), cleaned.end(), ']'), cleaned.end());
    std::stringstream ss(cleaned);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_number(const std::string& s, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::invalid_config, "key '" + key + "' expects a number, got '" + s + "'");
}

inline std::vector<double> to_numbers(const std::string& s, const std::string& key) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(to_number(item, key));
    return out;
}

/// Splits "name(arg1, arg2)" into name and arguments.
inline std::pair<std::string, std::vector<std::string>> call_syntax(const std::string& s) {
    static const std::regex re(R"(^\s*([A-Za-z0-9_\-]+)\s*(?:\((.*)\))?\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw Error(ErrorKind::invalid_config, "cannot parse source '" + s + "'");
    return {m[1].str(), m[2].matched ? split_list(m[2].str()) : std::vector<std::string>{}};
}

inline std::string resolve_path(const std::string& p, const fs::path& base) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path.string() : (base / path).string();
}

}  // namespace detail

/// Parses the INI-style scenario text (`key = value` lines, `[table]`
/// headers). Relative sample/family paths resolve against `base_dir`.
inline Scenario parse_scenario(const std::string& text, const fs::path& base_dir = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::invalid_config, e.what());
    }
    auto get = [&](const std::string& key, const std::string& fallback) {
        return detail::trim(tree.get<std::string>(pt::ptree::path_type(key, '/'), fallback));
    };

    Scenario sc;
    sc.name = get("name", "scenario");
    sc.grid.dimension = static_cast<int>(detail::to_number(get("dimension", "2"), "dimension"));
    sc.grid.resolution = static_cast<int>(detail::to_number(get("N", "65"), "N"));
    sc.grid.validate();

    sc.family_file = get("family_file", "");
    if (!sc.family_file.empty()) sc.family_file = detail::resolve_path(sc.family_file, base_dir);
    sc.family_builtin = get("family", "laplacian");
    sc.pivot = static_cast<std::size_t>(detail::to_number(get("pivot", "0"), "pivot"));

    {
        const auto [kind, args] = detail::call_syntax(get("obstacle", "zero"));
        if (kind == "zero") {
            sc.obstacle.kind = ObstacleSource::Kind::zero;
        } else if (kind == "paraboloid") {
            if (args.size() != 2) throw Error(ErrorKind::invalid_config, "paraboloid(a, b) takes two arguments");
            sc.obstacle = {ObstacleSource::Kind::paraboloid, detail::to_number(args[0], "obstacle"),
                           detail::to_number(args[1], "obstacle"), {}};
        } else if (kind == "custom") {
            if (args.size() != 1) throw Error(ErrorKind::invalid_config, "custom(path) takes one argument");
            sc.obstacle = {ObstacleSource::Kind::custom, 0.0, 0.0, detail::resolve_path(args[0], base_dir)};
        } else {
            throw Error(ErrorKind::invalid_config, "unknown obstacle source '" + kind + "'");
        }
    }
    {
        const auto [kind, args] = detail::call_syntax(get("boundary", "constant(0)"));
        if (kind == "exact-signorini") {
            sc.boundary.kind = BoundarySource::Kind::exact_signorini;
        } else if (kind == "constant") {
            if (args.size() != 1) throw Error(ErrorKind::invalid_config, "constant(c) takes one argument");
            sc.boundary = {BoundarySource::Kind::constant, detail::to_number(args[0], "boundary"), {}};
        } else if (kind == "custom") {
            if (args.size() != 1) throw Error(ErrorKind::invalid_config, "custom(path) takes one argument");
            sc.boundary = {BoundarySource::Kind::custom, 0.0, detail::resolve_path(args[0], base_dir)};
        } else {
            throw Error(ErrorKind::invalid_config, "unknown boundary source '" + kind + "'");
        }
    }

    sc.control.tol = detail::to_number(get("tol", "1e-8"), "tol");
    sc.control.max_iters = static_cast<long>(detail::to_number(get("max_iters", "0"), "max_iters"));
    const std::string sweep = get("sweep_mode", "gauss_seidel");
    if (sweep == "jacobi") {
        sc.control.sweep_mode = SweepMode::jacobi;
    } else if (sweep == "gauss_seidel") {
        sc.control.sweep_mode = SweepMode::gauss_seidel;
    } else {
        throw Error(ErrorKind::invalid_config, "sweep_mode must be jacobi or gauss_seidel");
    }
    const std::string method = get("method", "policy_iteration");
    if (method == "policy_iteration") {
        sc.control.method = SolverMethod::policy_iteration;
    } else if (method == "relaxation") {
        sc.control.method = SolverMethod::relaxation;
    } else {
        throw Error(ErrorKind::invalid_config, "method must be policy_iteration or relaxation");
    }

    DiagnosticsConfig& d = sc.diagnostics;
    const std::string run = get("diagnostics/run", "all");
    d.run = run == "all" ? all_diagnostics() : detail::split_list(run);
    for (const auto& r : d.run) {
        if (std::find(all_diagnostics().begin(), all_diagnostics().end(), r) == all_diagnostics().end()) {
            throw Error(ErrorKind::invalid_config, "unknown diagnostic '" + r + "'");
        }
    }
    d.contact_tol = detail::to_number(get("diagnostics/contact_tol", "1e-6"), "contact_tol");
    d.region_radius = detail::to_number(get("diagnostics/region_radius", "0.75"), "region_radius");
    d.barrier_samples = static_cast<int>(detail::to_number(get("diagnostics/barrier_samples", "10"), "barrier_samples"));
    const auto cyl = detail::to_numbers(get("diagnostics/cylinder", "0.2, 0.1"), "cylinder");
    if (cyl.size() != 2) throw Error(ErrorKind::invalid_config, "cylinder takes (r_lateral, r_vertical)");
    d.cylinder = {cyl[0], cyl[1]};
    d.radii = detail::to_numbers(get("diagnostics/radii", ""), "radii");
    const std::string etas = get("diagnostics/gap_etas", "");
    if (!etas.empty()) d.gap_etas = detail::to_numbers(etas, "gap_etas");

    sc.epsilon_sweep = detail::to_numbers(get("sweep/epsilons", ""), "epsilons");
    for (double e : sc.epsilon_sweep) {
        if (!(e > 0.0)) throw Error(ErrorKind::invalid_config, "epsilons must be positive");
    }
    return sc;
}

/// Config text of a builtin scenario: signorini-2d, pucci-paraboloid-2d,
/// anisotropic-paraboloid-2d, pucci-signorini-2d, anisotropic-signorini-2d,
/// laplacian-paraboloid-3d.
inline std::string builtin_scenario_text(const std::string& name, int N = 65) {
    struct Builtin {
        const char* name;
        int dim;
        const char* family;
        const char* obstacle;
        const char* boundary;
    };
    static const Builtin table[] = {
        {"signorini-2d", 2, "laplacian", "zero", "exact-signorini"},
        {"laplacian-paraboloid-2d", 2, "laplacian", "paraboloid(0.2, 1)", "constant(0)"},
        {"pucci-paraboloid-2d", 2, "pucci", "paraboloid(0.2, 1)", "constant(0)"},
        {"anisotropic-paraboloid-2d", 2, "anisotropic", "paraboloid(0.2, 1)", "constant(0)"},
        {"pucci-signorini-2d", 2, "pucci", "zero", "exact-signorini"},
        {"anisotropic-signorini-2d", 2, "anisotropic", "zero", "exact-signorini"},
        {"laplacian-paraboloid-3d", 3, "laplacian", "paraboloid(0.2, 1)", "constant(0)"},
    };
    for (const auto& b : table) {
        if (name != b.name) continue;
        std::ostringstream os;
        os << "name = " << b.name << "\n"
           << "dimension = " << b.dim << "\n"
           << "N = " << N << "\n"
           << "family = " << b.family << "\n"
           << "obstacle = " << b.obstacle << "\n"
           << "boundary = " << b.boundary << "\n"
           << "tol = 1e-8\n"
           << "sweep_mode = gauss_seidel\n\n"
           << "[diagnostics]\nrun = all\n\n"
           << "[sweep]\nepsilons = 0.2, 0.1, 0.05, 0.025\n";
        return os.str();
    }
    throw Error(ErrorKind::invalid_config, "unknown builtin scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// Instance construction

struct Instance {
    GridPtr grid;
    BellmanFamily family;            // as configured
    NormalizationResult normalized;  // family actually solved
    ScalarField obstacle;
    ScalarField boundary;

    [[nodiscard]] ThinObstacleSpec spec(const SolveControl& ctl) const {
        return {normalized.transformed, obstacle, boundary, ctl};
    }
};

inline ScalarField load_field_file(const std::string& path, const GridPtr& grid) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::invalid_config, "cannot open sample file '" + path + "'");
    try {
        return read_field_csv(is, grid);
    } catch (const Error& e) {
        throw Error(ErrorKind::invalid_config, "sample file '" + path + "' does not match the grid: " + e.what());
    }
}

inline Instance build_instance(const Scenario& sc) {
    const GridPtr grid = build_grid(sc.grid);
    BellmanFamily family = [&] {
        if (sc.family_file.empty()) return builtin_family(sc.family_builtin, sc.grid.dimension);
        std::ifstream is(sc.family_file);
        if (!is) throw Error(ErrorKind::invalid_config, "cannot open family file '" + sc.family_file + "'");
        json j;
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw Error(ErrorKind::invalid_family, std::string("family file is not JSON: ") + e.what());
        }
        return BellmanFamily::from_json(j);
    }();
    if (family.dimension() != sc.grid.dimension) {
        throw Error(ErrorKind::invalid_family, "family dimension does not match the grid");
    }
    NormalizationResult normalized = normalize_family(family, sc.pivot);

    const int n = sc.grid.dimension;
    ScalarField obstacle = [&] {
        switch (sc.obstacle.kind) {
            case ObstacleSource::Kind::zero: return ScalarField(grid, 0.0);
            case ObstacleSource::Kind::paraboloid:
                return ScalarField::sample(grid, [&](const Point& x) {
                    double r2 = 0.0;
                    for (int a = 0; a < n - 1; ++a) r2 += x[a] * x[a];
                    return sc.obstacle.a - sc.obstacle.b * r2;
                });
            case ObstacleSource::Kind::custom: return load_field_file(sc.obstacle.file, grid);
        }
        return ScalarField(grid, 0.0);
    }();
    ScalarField boundary = [&] {
        switch (sc.boundary.kind) {
            case BoundarySource::Kind::exact_signorini: return exact_signorini_field(grid);
            case BoundarySource::Kind::constant: return ScalarField(grid, sc.boundary.c);
            case BoundarySource::Kind::custom: return load_field_file(sc.boundary.file, grid);
        }
        return ScalarField(grid, 0.0);
    }();
    return {grid, std::move(family), std::move(normalized), std::move(obstacle), std::move(boundary)};
}

// ---------------------------------------------------------------------------
// Files

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

/// Output directory key: identical config bytes give an identical key.
inline std::string config_key(const std::string& config_bytes) {
    return sha256_hex(config_bytes + "\n" + kCodeVersion).substr(0, 16);
}

inline void write_atomic(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error(ErrorKind::io_error, "cannot write " + tmp.string());
        os << content;
        if (!os) throw Error(ErrorKind::io_error, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

/// JSON with every double at 17 significant digits.
inline std::string dump_json(const json& j) {
    std::ostringstream os;
    std::function<void(const json&, int)> emit = [&](const json& v, int depth) {
        const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
        const std::string close(static_cast<std::size_t>(2 * depth), ' ');
        if (v.is_object()) {
            if (v.empty()) {
                os << "{}";
                return;
            }
            os << "{\n";
            bool first = true;
            for (auto it = v.begin(); it != v.end(); ++it) {
                if (!first) os << ",\n";
                first = false;
                os << pad << json(it.key()).dump() << ": ";
                emit(it.value(), depth + 1);
            }
            os << "\n" << close << "}";
        } else if (v.is_array()) {
            os << "[";
            bool first = true;
            for (const auto& e : v) {
                if (!first) os << ", ";
                first = false;
                emit(e, depth + 1);
            }
            os << "]";
        } else if (v.is_number_float()) {
            const double d = v.get<double>();
            if (std::isfinite(d)) {
                os << format_double(d);
            } else {
                os << "null";
            }
        } else {
            os << v.dump();
        }
    };
    emit(j, 0);
    os << "\n";
    return os.str();
}

inline json read_json_file(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw Error(ErrorKind::incomplete_run, "missing artifact " + p.filename().string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::incomplete_run, "unreadable artifact " + p.filename().string() + ": " + e.what());
    }
}

inline std::string field_csv(const ScalarField& f) {
    std::ostringstream os;
    write_field_csv(os, f);
    return os.str();
}

// ---------------------------------------------------------------------------
// Stages

struct SolvedScenario {
    Instance instance;
    ScalarField u;
    SolveReport report;
    bool from_cache = false;
};

/// Normalizes the family and solves the thin obstacle problem, reusing
/// u.csv / solve_report.json from a previous run of the same config.
inline SolvedScenario solve_stage(const Scenario& sc, const fs::path& dir) {
    Instance inst = build_instance(sc);
    write_atomic(dir / "scenario.json",
                 dump_json({{"name", sc.name}, {"dimension", sc.grid.dimension}, {"N", sc.grid.resolution}}));
    const fs::path u_path = dir / "u.csv";
    const fs::path rep_path = dir / "solve_report.json";
    if (fs::exists(u_path) && fs::exists(rep_path)) {
        std::ifstream is(u_path);
        ScalarField u = read_field_csv(is, inst.grid);
        const json j = read_json_file(rep_path);
        SolveReport r;
        r.iterations = j.at("iterations").get<long>();
        r.max_pde_residual = j.at("max_pde_residual").get<double>();
        r.max_supersolution_violation = j.at("max_supersolution_violation").get<double>();
        r.complementarity_gap = j.at("complementarity_gap").get<double>();
        r.active_set = j.at("active_set").get<std::vector<Index>>();
        r.linear_solver = j.at("linear_solver").get<std::string>();
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.converged = j.at("converged").get<bool>();
        return {std::move(inst), std::move(u), std::move(r), true};
    }
    auto [u, report] = solve_thin_obstacle(inst.spec(sc.control));
    json rep = report.to_json();
    rep["scenario"] = sc.name;
    rep["tol"] = sc.control.tol;
    rep["method"] = to_string(sc.control.method);
    rep["sweep_mode"] = to_string(sc.control.sweep_mode);
    write_atomic(dir / "family_normalized.json", dump_json(inst.normalized.transformed.to_json()));
    write_atomic(dir / "obstacle.csv", field_csv(inst.obstacle));
    write_atomic(u_path, field_csv(u));
    write_atomic(rep_path, dump_json(rep));
    return {std::move(inst), std::move(u), std::move(report), false};
}

struct DiagnosticsOutput {
    RegularityReport regularity;
    json checks;   // invariant name -> {pass, value, threshold}
    json details;  // sigma profile, fit table, barrier samples, ...
};

namespace detail {

inline json check(bool pass, double value, double threshold) {
    return {{"pass", pass}, {"value", value}, {"threshold", threshold}};
}

inline double distance_tangential(const Grid& g, Index a, Index b) {
    const Point p = g.position(a), q = g.position(b);
    double d2 = 0.0;
    for (int k = 0; k < g.normal_axis(); ++k) d2 += (p[k] - q[k]) * (p[k] - q[k]);
    return std::sqrt(d2);
}

/// Free-boundary node closest to the origin (the benchmark's free boundary point).
inline std::optional<Index> central_free_boundary(const Grid& g, const Coincidence& cs) {
    std::optional<Index> best;
    double best_r = 0.0;
    for (Index x : cs.free_boundary) {
        if (!best || g.radius(x) < best_r) best = x, best_r = g.radius(x);
    }
    return best;
}

}  // namespace detail

/// Runs the requested regularity diagnostics on a solved scenario.
inline DiagnosticsOutput diagnose_stage(const Scenario& sc, const SolvedScenario& solved, std::uint64_t seed = 0) {
    const DiagnosticsConfig& dc = sc.diagnostics;
    const Grid& g = *solved.instance.grid;
    const ScalarField& u = solved.u;
    const ScalarField& phi = solved.instance.obstacle;
    const BellmanFamily& family = solved.instance.normalized.transformed;
    const double h = g.spacing();
    const double tol = sc.control.tol;
    const double tol_sigma = 10.0 * h;
    const auto radii = dc.radii.empty() ? default_radii(g) : dc.radii;

    DiagnosticsOutput out;
    out.checks = json::object();
    out.details = json::object();
    RegularityReport& rr = out.regularity;
    rr.K0 = scaling_constant_K0(u, phi);

    // Solver invariants.
    {
        const SolveReport& r = solved.report;
        out.checks["complementarity"] = detail::check(r.complementarity_gap <= tol, r.complementarity_gap, tol);
        out.checks["supersolution"] =
            detail::check(r.max_supersolution_violation <= tol, r.max_supersolution_violation, tol);
        out.checks["pde_residual"] = detail::check(r.max_pde_residual <= tol, r.max_pde_residual, tol);
        double slack = std::numeric_limits<double>::infinity();
        for (Index x : g.nodes(NodeClass::thin)) slack = std::min(slack, u[x] - phi[x]);
        out.checks["obstacle_feasible"] = detail::check(slack >= -tol, slack, -tol);
    }

    const SigmaField sigma = compute_sigma(u);
    const Coincidence cs = coincidence_set(u, phi, dc.contact_tol);
    rr.sigma_min = sigma.values.empty() ? 0.0 : sigma.min();

    if (dc.wants("sigma")) {
        const double top = sigma.values.empty() ? 0.0 : *std::max_element(sigma.values.begin(), sigma.values.end());
        out.checks["sigma_nonpositive"] = detail::check(top <= tol_sigma, top, tol_sigma);
        double off = 0.0;
        for (Index x : cs.non_contact) {
            double d = std::numeric_limits<double>::infinity();
            for (Index y : cs.contact) d = std::min(d, detail::distance_tangential(g, x, y));
            if (d >= 4.0 * h - 1e-12) off = std::max(off, std::abs(*sigma.at(x)));
        }
        out.checks["sigma_zero_off_contact"] = detail::check(off <= tol_sigma, off, tol_sigma);
        json profile = json::array();
        for (std::size_t k = 0; k < sigma.nodes.size(); ++k) {
            const Point p = g.position(sigma.nodes[k]);
            json row = json::array();
            for (int a = 0; a < g.normal_axis(); ++a) row.push_back(p[a]);
            row.push_back(sigma.values[k]);
            profile.push_back(row);
        }
        out.details["sigma_profile"] = profile;
    }

    if (dc.wants("symmetrize")) {
        const ScalarField v = symmetrize(u);
        double ident = 0.0;
        for (std::size_t k = 0; k < sigma.nodes.size(); ++k) {
            const double twice = 2.0 * one_sided_normal_derivative(v, sigma.nodes[k], Side::plus);
            ident = std::max(ident, std::abs(sigma.values[k] - twice));
        }
        const double ident_tol = 1e-12 * std::max(1.0, rr.K0) / h;
        out.checks["sigma_symmetrize_identity"] = detail::check(ident <= ident_tol, ident, ident_tol);
        const double pucci = max_pucci_minus(v, family.ellipticity());
        out.checks["pucci_supersolution"] = detail::check(pucci <= tol, pucci, tol);
        double comp = 0.0, low = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < sigma.nodes.size(); ++k) {
            const Index x = sigma.nodes[k];
            low = std::min(low, v[x] - phi[x]);
            comp = std::max(comp, std::abs(std::min(v[x] - phi[x], -sigma.values[k])));
        }
        out.checks["thin_complementarity_v"] =
            detail::check(low >= -tol && comp <= tol_sigma, comp, tol_sigma);
    }

    if (dc.wants("coincidence")) {
        out.details["coincidence"] = {{"contact", cs.contact.size()},
                                      {"free_boundary", cs.free_boundary},
                                      {"non_contact", cs.non_contact.size()}};
    }

    if (dc.wants("derivative_bounds")) {
        const DerivativeBounds b = derivative_bounds(u, dc.region_radius);
        rr.lipschitz = b.lipschitz;
        rr.semiconvexity_min = b.semiconvexity_min;
        rr.semiconcavity_max = b.semiconcavity_max;
    }

    // Coarse grids cannot support a three-radius fit; the fits are then
    // listed as skipped instead of failing the whole run.
    auto center = detail::central_free_boundary(g, cs);
    if (center && (dc.wants("flatness") || dc.wants("sigma_holder"))) {
        try {
            (void)detail::usable_radii(g, radii);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::insufficient_radii) throw;
            out.details["skipped"]["fits"] = e.what();
            center.reset();
        }
    }
    if (dc.wants("flatness") && center) {
        const FlatnessResult fr = flatness_fit(u, *center, radii);
        rr.alpha_u = fr.estimate;
        json table = json::array();
        for (const auto& f : fr.fits) {
            json row = {f.radius, f.sup_residual, f.a};
            for (Eigen::Index k = 0; k < f.b.size(); ++k) row.push_back(f.b[k]);
            table.push_back(row);
        }
        out.details["flatness_table"] = table;
        out.details["flatness_center"] = *center;
        // Adding an affine function must not move the fitted exponent.
        ScalarField shifted = u;
        for (Index x = 0; x < g.size(); ++x) {
            if (g.inside(x)) shifted[x] += 0.7 - 0.4 * g.coordinate(x, 0) + 0.25 * g.coordinate(x, g.normal_axis());
        }
        const FlatnessResult fs2 = flatness_fit(shifted, *center, radii);
        const double drift = fr.estimate.saturated() && fs2.estimate.saturated()
                                 ? 0.0
                                 : std::abs(fs2.estimate.exponent - fr.estimate.exponent);
        out.checks["flatness_affine_invariance"] = detail::check(drift <= 1e-6, drift, 1e-6);
    }
    if (dc.wants("sigma_holder") && center) {
        rr.alpha_sigma = sigma_holder(sigma, *center, radii);
    }

    if (dc.wants("barrier")) {
        std::vector<Index> candidates;
        for (Index x : cs.non_contact) {
            if (g.radius(x) + dc.cylinder.r_lateral < 0.9 && dc.cylinder.r_vertical < 0.5) candidates.push_back(x);
        }
        std::mt19937_64 rng(seed);
        std::shuffle(candidates.begin(), candidates.end(), rng);
        const ScalarField v = symmetrize(u);
        const double kappa = default_kappa(phi);
        json samples = json::array();
        double worst_margin = std::numeric_limits<double>::infinity();
        bool ok = true;
        int taken = 0;
        for (Index x0 : candidates) {
            if (taken >= dc.barrier_samples) break;
            try {
                const BarrierResult br = barrier_check(v, phi, x0, kappa, dc.cylinder, family.ellipticity());
                ++taken;
                worst_margin = std::min(worst_margin, br.value + br.tol_barrier);
                ok = ok && br.value >= -br.tol_barrier;
                samples.push_back({{"node", x0}, {"value", br.value}, {"tol_barrier", br.tol_barrier}});
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::invalid_cylinder) throw;
            }
        }
        out.details["barrier"] = samples;
        if (taken > 0) {
            out.checks["barrier_nonnegative"] = detail::check(ok, worst_margin, 0.0);
        } else {
            out.details["skipped"]["barrier"] = "no cylinder fits the grid around any non-contact node";
        }
    }

    if (dc.wants("extension")) {
        const ThinObstacleSpec spec = solved.instance.spec(sc.control);
        const ScalarField hx = extend_obstacle(spec, a_priori_bound(spec));
        double excess = -std::numeric_limits<double>::infinity();
        for (Index x = 0; x < g.size(); ++x) {
            if (g.inside(x)) excess = std::max(excess, hx[x] - u[x]);
        }
        out.checks["extension_dominated"] = detail::check(excess <= tol, excess, tol);
    }

    if (dc.wants("dirichlet_gap")) {
        json rows = json::array();
        double prev = std::numeric_limits<double>::infinity();
        bool monotone = true;
        const ScalarField base = solve_dirichlet(family, solved.instance.boundary, sc.control);
        for (double eta : dc.gap_etas) {
            ScalarField w = base;
            for (Index x = 0; x < g.size(); ++x) {
                if (g.inside(x)) w[x] += eta * std::abs(g.coordinate(x, g.normal_axis()));
            }
            const DirichletGap dg = dirichlet_gap(w, family, sc.control);
            rows.push_back({{"eta", eta}, {"gap", dg.gap}, {"sigma_norm", dg.sigma_norm}});
            monotone = monotone && dg.gap <= prev + tol;
            prev = dg.gap;
        }
        out.details["dirichlet_gap"] = rows;
        out.checks["dirichlet_gap_monotone"] = detail::check(monotone, prev, 0.0);
    }
    return out;
}

struct SweepRow {
    double epsilon = 0.0;
    double sup_excess = 0.0;   // sup (u_eps - u)
    double min_excess = 0.0;   // inf (u_eps - u)
    double band_width = 0.0;
    long iterations = 0;
};

inline std::vector<SweepRow> sweep_stage(const Scenario& sc, const SolvedScenario& solved) {
    if (sc.epsilon_sweep.empty()) throw Error(ErrorKind::invalid_config, "scenario has no [sweep] epsilons");
    const Grid& g = *solved.instance.grid;
    const ThinObstacleSpec spec = solved.instance.spec(sc.control);
    std::vector<SweepRow> rows;
    for (double eps : sc.epsilon_sweep) {
        const PenalizedResult pr = penalized_solve(spec, eps, solved.u);
        SweepRow row{eps, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                     pr.band_width, pr.report.iterations};
        for (Index x = 0; x < g.size(); ++x) {
            if (!g.inside(x)) continue;
            row.sup_excess = std::max(row.sup_excess, pr.u_eps[x] - solved.u[x]);
            row.min_excess = std::min(row.min_excess, pr.u_eps[x] - solved.u[x]);
        }
        rows.push_back(row);
    }
    return rows;
}

inline json sweep_checks(const std::vector<SweepRow>& rows, double tol) {
    json checks = json::object();
    std::vector<SweepRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const SweepRow& a, const SweepRow& b) { return a.epsilon > b.epsilon; });
    bool strictly = true;
    for (std::size_t k = 1; k < sorted.size(); ++k) strictly = strictly && sorted[k].sup_excess < sorted[k - 1].sup_excess;
    double low = std::numeric_limits<double>::infinity();
    double cmin = std::numeric_limits<double>::infinity(), cmax = 0.0;
    for (const auto& r : rows) {
        low = std::min(low, r.min_excess);
        cmin = std::min(cmin, r.band_width / r.epsilon);
        cmax = std::max(cmax, r.band_width / r.epsilon);
    }
    checks["penalization_monotone"] = detail::check(strictly, sorted.empty() ? 0.0 : sorted.back().sup_excess, 0.0);
    checks["penalization_lower_bound"] = detail::check(low >= -tol, low, -tol);
    const double spread = cmin > 0.0 ? cmax / cmin : std::numeric_limits<double>::infinity();
    checks["penalization_band_linear"] = detail::check(spread < 2.0, spread, 2.0);
    return checks;
}

// ---------------------------------------------------------------------------
// Plot-ready CSVs and the consolidated summary

inline std::string sigma_profile_csv(const json& profile, int n) {
    std::ostringstream os;
    for (int a = 0; a < n - 1; ++a) os << 'x' << a + 1 << ',';
    os << "sigma\n";
    for (const auto& row : profile) {
        for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << format_double(row[k].get<double>());
        os << '\n';
    }
    return os.str();
}

inline std::string flatness_table_csv(const json& table, int n) {
    std::ostringstream os;
    os << "r,E,a";
    for (int a = 0; a < n; ++a) os << ",b" << a + 1;
    os << '\n';
    for (const auto& row : table) {
        for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << format_double(row[k].get<double>());
        os << '\n';
    }
    return os.str();
}

inline std::string sweep_table_csv(const json& rows) {
    std::ostringstream os;
    os << "epsilon,sup_excess,min_excess,band_width,band_over_epsilon,iterations\n";
    for (const auto& r : rows) {
        const double eps = r.at("epsilon").get<double>();
        const double band = r.at("band_width").get<double>();
        os << format_double(eps) << ',' << format_double(r.at("sup_excess").get<double>()) << ','
           << format_double(r.at("min_excess").get<double>()) << ',' << format_double(band) << ','
           << format_double(band / eps) << ',' << r.at("iterations").get<long>() << '\n';
    }
    return os.str();
}

inline json sweep_rows_json(const std::vector<SweepRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"epsilon", r.epsilon},
                       {"sup_excess", r.sup_excess},
                       {"min_excess", r.min_excess},
                       {"band_width", r.band_width},
                       {"iterations", r.iterations}});
    }
    return out;
}

/// Merges the stage artifacts of `dir` into summary.json with one pass flag
/// per invariant, and writes the plot-ready CSVs.
inline json emit_report(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::incomplete_run, "no such run directory " + dir.string());
    const json solve = read_json_file(dir / "solve_report.json");
    if (!fs::exists(dir / "u.csv")) throw Error(ErrorKind::incomplete_run, "missing artifact u.csv");
    const int n = fs::exists(dir / "scenario.json") ? read_json_file(dir / "scenario.json").value("dimension", 2) : 2;

    json summary;
    summary["solve_report"] = solve;
    summary["pass"] = json::object();
    json checks = json::object();
    if (fs::exists(dir / "checks.json")) checks.update(read_json_file(dir / "checks.json"));
    if (fs::exists(dir / "sweep_checks.json")) checks.update(read_json_file(dir / "sweep_checks.json"));
    if (fs::exists(dir / "regularity_report.json")) {
        summary["regularity_report"] = read_json_file(dir / "regularity_report.json");
    }
    if (fs::exists(dir / "diagnostics.json")) {
        const json details = read_json_file(dir / "diagnostics.json");
        if (details.contains("sigma_profile")) {
            write_atomic(dir / "plot_sigma_profile.csv", sigma_profile_csv(details["sigma_profile"], n));
        }
        if (details.contains("flatness_table")) {
            write_atomic(dir / "plot_flatness_table.csv", flatness_table_csv(details["flatness_table"], n));
        }
    }
    if (fs::exists(dir / "sweep.json")) {
        const json rows = read_json_file(dir / "sweep.json");
        summary["sweep"] = rows;
        write_atomic(dir / "plot_eps_sweep.csv", sweep_table_csv(rows));
    }
    if (checks.empty()) {
        const double tol = solve.value("tol", 1e-8);
        checks["complementarity"] = detail::check(solve["complementarity_gap"].get<double>() <= tol,
                                                  solve["complementarity_gap"].get<double>(), tol);
        checks["supersolution"] = detail::check(solve["max_supersolution_violation"].get<double>() <= tol,
                                                solve["max_supersolution_violation"].get<double>(), tol);
        checks["pde_residual"] =
            detail::check(solve["max_pde_residual"].get<double>() <= tol, solve["max_pde_residual"].get<double>(), tol);
    }
    bool all = true;
    for (auto it = checks.begin(); it != checks.end(); ++it) {
        summary["pass"][it.key()] = it.value().at("pass").get<bool>();
        all = all && it.value().at("pass").get<bool>();
    }
    summary["checks"] = checks;
    summary["all_pass"] = all;
    write_atomic(dir / "summary.json", dump_json(summary));
    return summary;
}

}  // namespace thinobs
