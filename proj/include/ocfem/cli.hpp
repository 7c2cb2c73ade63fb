#pragma once

// Command implementations behind the `ocfem` executable. Kept in the
// library so the commands can be driven from tests without a subprocess.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ocfem/errors.hpp"
#include "ocfem/fem.hpp"
#include "ocfem/mesh.hpp"
#include "ocfem/optimizer.hpp"
#include "ocfem/pde.hpp"
#include "ocfem/problem.hpp"
#include "ocfem/quadrature.hpp"
#include "ocfem/study.hpp"

namespace ocfem::cli {

enum ExitCode : int { ok = 0, failure = 1, usage = 2 };

struct RunConfig {
    std::string preset = "paper-sec6";
    std::optional<double> nu, alpha, beta;
    int level = 4;
    int j_min = 3;
    int j_max = 8;
    double kkt_tol = 1e-9;
    double newton_tol = 1e-11;
    double cg_tol = 1e-10;
    std::string out;
    bool emit_fields = true;
};

class UnknownPreset : public ValidationError {
public:
    explicit UnknownPreset(const std::string& name) : ValidationError("unknown preset '" + name + "'") {}
};

/// Parses "A..B".
inline std::pair<int, int> parse_levels(const std::string& text) {
    const auto dots = text.find("..");
    if (dots == std::string::npos) throw ValidationError("levels must look like A..B, got '" + text + "'");
    try {
        std::size_t used_a = 0, used_b = 0;
        const std::string a = text.substr(0, dots), b = text.substr(dots + 2);
        const int lo = std::stoi(a, &used_a), hi = std::stoi(b, &used_b);
        if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument(text);
        if (lo < 0 || lo >= hi) throw ValidationError("levels need 0 <= A < B, got '" + text + "'");
        return {lo, hi};
    } catch (const std::logic_error&) {
        throw ValidationError("levels must look like A..B, got '" + text + "'");
    }
}

namespace detail {
inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& key, const std::string& v) {
    if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::logic_error&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}
}  // namespace detail

/// Flat `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline void apply_config(RunConfig& cfg, std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(lineno) + ": missing '='");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        if (key == "preset") cfg.preset = value;
        else if (key == "nu") cfg.nu = detail::parse_number(key, value);
        else if (key == "alpha") cfg.alpha = detail::parse_number(key, value);
        else if (key == "beta") cfg.beta = detail::parse_number(key, value);
        else if (key == "level") cfg.level = static_cast<int>(detail::parse_number(key, value));
        else if (key == "levels") std::tie(cfg.j_min, cfg.j_max) = parse_levels(value);
        else if (key == "kkt_tol") cfg.kkt_tol = detail::parse_number(key, value);
        else if (key == "newton_tol") cfg.newton_tol = detail::parse_number(key, value);
        else if (key == "cg_tol") cfg.cg_tol = detail::parse_number(key, value);
        else if (key == "out") cfg.out = value;
        else if (key == "emit_fields") cfg.emit_fields = (value == "1" || value == "true" || value == "yes");
        else throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    apply_config(cfg, in);
}

/// Preset with scalar overrides applied and validated.
inline ProblemSpec make_spec(const RunConfig& cfg) {
    auto spec = presets::find(cfg.preset);
    if (!spec) throw UnknownPreset(cfg.preset);
    if (cfg.nu) spec->nu = *cfg.nu;
    if (cfg.alpha) spec->bounds.alpha = *cfg.alpha;
    if (cfg.beta) spec->bounds.beta = *cfg.beta;
    validate(*spec);
    return *spec;
}

inline OcpOptions make_ocp_options(const RunConfig& cfg) {
    OcpOptions o;
    o.tol = cfg.kkt_tol;
    o.cg_tol = cfg.cg_tol;
    o.newton.tol = cfg.newton_tol;
    return o;
}

/// Worker cap from OCFEM_THREADS (defaults to the hardware concurrency).
inline unsigned thread_cap() {
    unsigned cap = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("OCFEM_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) cap = static_cast<unsigned>(v);
    }
    return cap;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9e", v);
    return buf;
}

inline std::string format_opt(const std::optional<double>& v) { return v ? format_sci(*v) : std::string{}; }

inline const char* study_csv_header() {
    return "j,h,e_u,eoc_u,e_y,eoc_y,e_phi,eoc_phi,e_upost,eoc_upost,measure_T1,kkt,iters";
}

inline void write_study_csv(std::ostream& os, const std::vector<StudyRecord>& records) {
    os << study_csv_header() << '\n';
    for (const auto& r : records) {
        os << r.level << ',' << format_sci(r.h) << ',' << format_sci(r.e_u) << ',' << format_opt(r.eoc_u) << ','
           << format_sci(r.e_y) << ',' << format_opt(r.eoc_y) << ',' << format_sci(r.e_phi) << ','
           << format_opt(r.eoc_phi) << ',' << format_sci(r.e_upost) << ',' << format_opt(r.eoc_upost) << ','
           << format_sci(r.measure_T1) << ',' << format_sci(r.kkt_residual) << ',' << r.outer_iterations << '\n';
    }
}

// ---------------------------------------------------------------------------
// Commands

inline int report_error(std::ostream& err, const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return dynamic_cast<const UnknownPreset*>(&e) ? usage : failure;
}

/// Solves one level; writes mesh/field dumps (when enabled) and summary.txt
/// into cfg.out (current directory when empty).
inline int cmd_solve(const RunConfig& cfg, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    ProblemSpec spec;
    try {
        spec = make_spec(cfg);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }
    try {
        const auto mesh = build_unit_square_mesh(cfg.level);
        const PdeContext ctx(spec, mesh);
        const OcpSolution sol = solve_ocp(ctx, std::nullopt, make_ocp_options(cfg));

        const std::filesystem::path dir = cfg.out.empty() ? std::filesystem::path(".") : std::filesystem::path(cfg.out);
        std::filesystem::create_directories(dir);
        if (cfg.emit_fields) {
            std::ofstream m(dir / "mesh.txt"), c(dir / "control.txt"), y(dir / "state.txt"), p(dir / "adjoint.txt");
            write_mesh(m, *mesh);
            write_field(c, sol.control);
            write_field(y, sol.state);
            write_field(p, sol.adjoint);
        }
        std::ofstream summary(dir / "summary.txt");
        summary << "preset = " << spec.name << '\n'
                << "level = " << cfg.level << '\n'
                << "h = " << format_sci(mesh->h()) << '\n'
                << "cost = " << format_sci(sol.cost) << '\n'
                << "kkt_residual = " << format_sci(sol.kkt_residual) << '\n'
                << "outer_iterations = " << sol.outer_iterations << '\n'
                << "converged = " << (sol.converged ? "true" : "false") << '\n';
        int newton = 0;
        for (const auto& s : sol.history) newton += s.state_report.iterations;
        summary << "state_newton_iterations = " << newton << '\n';
        log << "level " << cfg.level << ": cost " << format_sci(sol.cost) << ", kkt " << format_sci(sol.kkt_residual)
            << ", " << sol.outer_iterations << " outer iterations\n";
        return ok;
    } catch (const std::exception& e) {
        return report_error(err, e);
    }
}

/// Runs the convergence study and writes the CSV to cfg.out (stdout when
/// empty or "-"). A failing level leaves the rows computed so far.
inline int cmd_study(const RunConfig& cfg, std::ostream& log = std::cerr, std::ostream& err = std::cerr) {
    ProblemSpec spec;
    try {
        spec = make_spec(cfg);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }
    std::ofstream file;
    std::ostream* csv = &std::cout;
    if (!cfg.out.empty() && cfg.out != "-") {
        if (const auto parent = std::filesystem::path(cfg.out).parent_path(); !parent.empty())
            std::filesystem::create_directories(parent);
        file.open(cfg.out, std::ios::binary);
        if (!file) {
            err << "error: cannot write '" << cfg.out << "'\n";
            return failure;
        }
        csv = &file;
    }
    StudyOptions opts;
    opts.ocp = make_ocp_options(cfg);
    opts.on_level_solved = [&](int j, const OcpSolution& s) {
        log << "level " << j << ": kkt " << format_sci(s.kkt_residual) << ", " << s.outer_iterations
            << " outer iterations\n";
    };
    try {
        const auto result = run_study(spec, cfg.j_min, cfg.j_max, opts);
        write_study_csv(*csv, result.records);
        return ok;
    } catch (const StudyError& e) {
        write_study_csv(*csv, e.records);
        return report_error(err, e);
    } catch (const std::exception& e) {
        return report_error(err, e);
    }
}

// ---------------------------------------------------------------------------
// Verification battery

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace checks {

inline double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

/// Every monomial x^i y^j with i+j <= degree on the unit right triangle.
inline CheckResult quadrature_exactness() {
    double worst = 0.0;
    for (int degree : {4, 6}) {
        const auto rule = triangle_rule(degree);
        for (int i = 0; i <= degree; ++i) {
            for (int j = 0; i + j <= degree; ++j) {
                double q = 0.0;
                for (std::size_t k = 0; k < rule.size(); ++k)
                    q += 0.5 * rule.weights[k] * std::pow(rule.points[k][1], i) * std::pow(rule.points[k][2], j);
                const double exact = factorial(i) * factorial(j) / factorial(i + j + 2);
                worst = std::max(worst, std::abs(q - exact));
            }
        }
    }
    const auto line = gauss_line_rule();
    for (int p = 0; p <= 5; ++p) {
        double q = 0.0;
        for (std::size_t k = 0; k < line.size(); ++k) q += line.weights[k] * std::pow(line.points[k][0], p);
        worst = std::max(worst, std::abs(q - 1.0 / (p + 1)));
    }
    return {"quadrature exactness", worst <= 1e-14, "max monomial error " + format_sci(worst)};
}

/// int (u - Pi_h u) v_h = 0 for P0 v_h, u quadratic.
inline CheckResult projection_orthogonality(const MeshPtr& mesh) {
    const ScalarFn u = [](Point x) { return x.x * x.x - 0.5 * x.x * x.y + 0.25 * x.y * x.y + x.y; };
    const P0Field pu = l2_project_p0(mesh, u);
    QuadPoints qp(mesh, 4);
    const Vector uq = qp.values(u), pq = qp.values(pu);
    double worst = 0.0;
    for (Index t = 0; t < static_cast<Index>(mesh->num_triangles()); ++t) {
        double s = 0.0;
        for (std::size_t q = 0; q < qp.per_element(); ++q) {
            const auto k = t * qp.per_element() + q;
            s += qp.weight(k) * (uq[k] - pq[k]);
        }
        worst = std::max(worst, std::abs(s));
    }
    const P0Field twice = l2_project_p0(mesh, pu);
    const double idem = linf_diff(twice, pu);
    return {"L2 projection orthogonality", worst <= 1e-12 && idem == 0.0,
            "max |int_T (u - Pi u)| = " + format_sci(worst)};
}

inline CheckResult manufactured(const ProblemSpec& spec, const MeshPtr& mesh) {
    const PdeContext ctx(spec, mesh);
    const auto u = P0Field::constant(mesh, *spec.manufactured_control);
    const auto [y, report] = solve_state(ctx, u);
    const double err = linf_diff(y, P1Field(mesh, Vector(mesh->num_vertices(), *spec.exact_state)));
    const double res = norm2(state_residual(ctx, u, y));
    return {"manufactured solution (" + spec.name + ")", err <= 1e-12 && res <= 1e-12,
            "field error " + format_sci(err) + ", residual " + format_sci(res)};
}

/// A smooth admissible control and a direction used by the derivative checks.
inline std::pair<P0Field, P0Field> probe_directions(const ProblemSpec& spec, const MeshPtr& mesh) {
    using std::numbers::pi;
    const Bounds& b = spec.bounds;
    const double mid = b.bounded_above() ? 0.5 * (b.alpha + b.beta) : b.alpha + 1.0;
    const double amp = b.bounded_above() ? 0.4 * (b.beta - b.alpha) : 0.5;
    const P0Field u = l2_project_p0(mesh, [=](Point x) { return mid + amp * std::sin(pi * x.x) * std::cos(pi * x.y); });
    const P0Field v = l2_project_p0(mesh, [](Point x) { return std::cos(2.0 * pi * x.x * x.y) + x.x - 0.3; });
    return {u, v};
}

/// Observed order of finite-difference errors, measured only on steps whose
/// error exceeds the round-off estimate `noise(t)`. When no step does, the
/// difference quotient is exact and no order is measurable.
struct ObservedOrder {
    double lo = 0.0, hi = 0.0;
    int usable = 0;

    bool roundoff() const { return usable == 0; }
    bool within(double a, double b) const { return roundoff() || (usable >= 2 && lo >= a && hi <= b); }
    std::string describe() const {
        if (roundoff()) return "exact to round-off";
        if (usable < 2) return "order not measurable above round-off";
        return "order in [" + format_sci(lo) + ", " + format_sci(hi) + "]";
    }
};

inline ObservedOrder observed_order(const std::vector<double>& ts, const std::vector<double>& errs,
                                    const std::function<double(double)>& noise) {
    ObservedOrder o{1e9, -1e9, 0};
    while (o.usable < static_cast<int>(ts.size()) && errs[o.usable] > noise(ts[o.usable])) ++o.usable;
    for (int i = 0; i + 1 < o.usable; ++i) {
        const double s = std::log(errs[i] / errs[i + 1]) / std::log(ts[i] / ts[i + 1]);
        o.lo = std::min(o.lo, s);
        o.hi = std::max(o.hi, s);
    }
    return o;
}

/// Reduced cost after polishing the state with a few tight Newton steps;
/// keeps the default solve where round-off prevents the polish.
inline double accurate_cost(const PdeContext& ctx, const P0Field& u) {
    P1Field y = solve_state(ctx, u).first;
    NewtonOptions tight;
    tight.tol = 1e-13;
    tight.max_iterations = 3;
    tight.max_halvings = 2;
    try {
        y = solve_state(ctx, u, y, tight).first;
    } catch (const NonconvergenceError&) {
    }
    return cost_at(ctx, u, y);
}

/// Central differences of J vs J'(u)v; reports the error at t = 1e-4 and
/// the observed order over t = 4e-2 ... 5e-3.
inline CheckResult gradient_fd(const PdeContext& ctx) {
    const auto [u, v] = probe_directions(ctx.spec(), ctx.mesh());
    const Linearization lin(ctx, u);
    const double exact = lin.directional_derivative(v);
    auto fd = [&](double t) {
        P0Field up = u, um = u;
        axpy(t, v.values, up.values);
        axpy(-t, v.values, um.values);
        return (accurate_cost(ctx, up) - accurate_cost(ctx, um)) / (2.0 * t);
    };
    const double rel = std::abs(exact - fd(1e-4)) / (1.0 + std::abs(exact));
    const std::vector<double> ts{4e-2, 2e-2, 1e-2, 5e-3};
    std::vector<double> errs;
    for (double t : ts) errs.push_back(std::abs(fd(t) - exact));
    const double j0 = lin.cost();
    const auto order = observed_order(ts, errs, [&](double t) { return 1e-12 * (1.0 + std::abs(j0)) / t; });
    return {"gradient vs central differences", rel <= 1e-5 && order.within(1.8, 2.2),
            "relative error " + format_sci(rel) + " at t=1e-4, " + order.describe()};
}

/// Second differences of J vs J''(u)v^2 over t = 1 ... 0.125, with v scaled
/// so that u +- v stays admissible.
inline CheckResult hessian_fd(const PdeContext& ctx) {
    auto [u, v] = probe_directions(ctx.spec(), ctx.mesh());
    const auto& qp = ctx.qp();
    double margin = std::numeric_limits<double>::infinity(), vmax = 0.0;
    for (std::size_t k = 0; k < qp.size(); ++k)
        margin = std::min(margin, ctx.spec().a0(qp.point(k)) + u.values[k / qp.per_element()]);
    for (double x : v.values) vmax = std::max(vmax, std::abs(x));
    for (double& x : v.values) x *= 0.5 * margin / vmax;
    const Linearization lin(ctx, u);
    const double exact = lin.hessian_z_form(v, v);
    const double j0 = accurate_cost(ctx, u);
    auto sd = [&](double t) {
        P0Field up = u, um = u;
        axpy(t, v.values, up.values);
        axpy(-t, v.values, um.values);
        return (accurate_cost(ctx, up) - 2.0 * j0 + accurate_cost(ctx, um)) / (t * t);
    };
    const std::vector<double> ts{1.0, 0.5, 0.25, 0.125};
    std::vector<double> errs;
    for (double t : ts) errs.push_back(std::abs(sd(t) - exact));
    const auto order = observed_order(ts, errs, [&](double t) { return 4e-13 * (1.0 + std::abs(j0)) / (t * t); });
    return {"Hessian vs second differences", order.within(1.7, 2.3), order.describe()};
}

inline CheckResult hessian_symmetry(const PdeContext& ctx) {
    const auto [u, v] = probe_directions(ctx.spec(), ctx.mesh());
    const P0Field w = l2_project_p0(ctx.mesh(), [](Point x) { return x.y * x.y - x.x; });
    const Linearization lin(ctx, u);
    const double a = lin.hessian_z_form(v, w), b = lin.hessian_z_form(w, v);
    const double rel = std::abs(a - b) / (1.0 + std::abs(a));
    return {"Hessian symmetry (z-form)", rel <= 1e-10, "relative asymmetry " + format_sci(rel)};
}

inline CheckResult hessian_forms_agree(const PdeContext& ctx) {
    const auto [u, v] = probe_directions(ctx.spec(), ctx.mesh());
    const P0Field w = l2_project_p0(ctx.mesh(), [](Point x) { return x.y * x.y - x.x; });
    const Linearization lin(ctx, u);
    double worst = 0.0;
    for (const auto& [a, b] : {std::pair{v, v}, std::pair{v, w}, std::pair{w, v}}) {
        const double z = lin.hessian_z_form(a, b), e = lin.hessian_eta_form(a, b);
        worst = std::max(worst, std::abs(z - e) / std::max(1e-300, std::abs(z)));
    }
    return {"Hessian z-form vs eta-form", worst <= 1e-8, "relative difference " + format_sci(worst)};
}

}  // namespace checks

/// Runs the battery for the configured preset at cfg.level. The
/// admissibility check runs first; when it fails, the data-dependent items
/// are skipped.
inline std::vector<CheckResult> run_checks(const ProblemSpec& spec, int level) {
    const auto mesh = build_unit_square_mesh(level);
    std::vector<CheckResult> results;
    try {
        check_admissibility(spec, mesh);
        results.push_back({"admissibility (a0 + alpha >= 0)", true, "ok"});
    } catch (const AdmissibilityError& e) {
        results.push_back({"admissibility (a0 + alpha >= 0)", false, e.what()});
        return results;
    }

    std::vector<std::function<CheckResult()>> items{
        [] { return checks::quadrature_exactness(); },
        [mesh] { return checks::projection_orthogonality(mesh); },
        [mesh] { return checks::manufactured(presets::manufactured_constant(), mesh); },
        [mesh] { return checks::manufactured(presets::manufactured_reaction(), mesh); },
    };
    if (spec.manufactured_control && spec.name.rfind("manufactured", 0) != 0) {
        items.push_back([spec, mesh] { return checks::manufactured(spec, mesh); });
    }
    auto ctx = std::make_shared<const PdeContext>(spec, mesh);
    items.push_back([ctx] { return checks::gradient_fd(*ctx); });
    items.push_back([ctx] { return checks::hessian_fd(*ctx); });
    items.push_back([ctx] { return checks::hessian_symmetry(*ctx); });
    items.push_back([ctx] { return checks::hessian_forms_agree(*ctx); });

    auto guarded = [](const std::function<CheckResult()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return CheckResult{"(exception)", false, e.what()};
        }
    };
    const unsigned cap = thread_cap();
    for (std::size_t start = 0; start < items.size(); start += cap) {
        const std::size_t end = std::min(items.size(), start + cap);
        if (cap == 1) {
            results.push_back(guarded(items[start]));
            continue;
        }
        std::vector<std::future<CheckResult>> running;
        for (std::size_t i = start; i < end; ++i) running.push_back(std::async(std::launch::async, guarded, items[i]));
        for (auto& f : running) results.push_back(f.get());
    }
    return results;
}

inline int cmd_check(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    ProblemSpec spec;
    try {
        spec = make_spec(cfg);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }
    try {
        bool all = true;
        for (const auto& r : run_checks(spec, cfg.level)) {
            out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
            all = all && r.passed;
        }
        return all ? ok : failure;
    } catch (const std::exception& e) {
        return report_error(err, e);
    }
}

}  // namespace ocfem::cli
