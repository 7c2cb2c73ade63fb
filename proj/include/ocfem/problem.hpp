#pragma once

// Problem data for  A y + a(x,y) + u y = 0 in the domain, d_nA y = g on the
// boundary, with cost  int L(x,y) + nu/2 int u^2  and  alpha <= u <= beta.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ocfem/errors.hpp"
#include "ocfem/fem.hpp"

namespace ocfem {

using PointwiseFn = std::function<double(Point, double)>;

struct Bounds {
    double alpha = -1.0;
    double beta = std::numeric_limits<double>::infinity();

    bool bounded_above() const { return std::isfinite(beta); }
    double clamp(double v) const { return std::min(std::max(v, alpha), beta); }
    bool contains(double v) const { return v >= alpha && v <= beta; }
    void validate() const {
        if (!(alpha < beta)) throw ValidationError("bounds require alpha < beta");
        if (!std::isfinite(alpha)) throw ValidationError("lower bound must be finite");
    }
};

struct ProblemSpec {
    std::string name;
    DiffusionFn diffusion = identity_diffusion;
    PointwiseFn a;      // a(x, y)
    PointwiseFn da;     // da/dy
    PointwiseFn d2a;    // d2a/dy2
    ScalarFn a0;        // lower bound of da/dy
    PointwiseFn L;      // objective integrand
    PointwiseFn dL;
    PointwiseFn d2L;
    ScalarFn g = [](Point) { return 0.0; };
    double nu = 1.0;
    Bounds bounds;

    // Manufactured presets: a control for which the exact discrete state is
    // the constant `exact_state`.
    std::optional<double> manufactured_control;
    std::optional<double> exact_state;
};

/// nu > 0, alpha < beta.
inline void validate(const ProblemSpec& spec) {
    if (!(spec.nu > 0.0)) throw ValidationError("nu must be positive");
    spec.bounds.validate();
    if (!spec.a || !spec.da || !spec.d2a || !spec.a0 || !spec.L || !spec.dL || !spec.d2L || !spec.g) {
        throw ValidationError("problem '" + spec.name + "' is missing a data function");
    }
}

/// a0(x) + alpha >= 0 at every quadrature point of the mesh, plus a sampled
/// check of da/dy >= a0.
inline void check_admissibility(const ProblemSpec& spec, const MeshPtr& mesh) {
    validate(spec);
    QuadPoints qp(mesh, 4);
    for (std::size_t k = 0; k < qp.size(); ++k) {
        const Point x = qp.point(k);
        const double lower = spec.a0(x);
        if (lower + spec.bounds.alpha < 0.0) {
            throw AdmissibilityError("admissibility violated: a0(x) + alpha = " +
                                     std::to_string(lower + spec.bounds.alpha) + " < 0 at (" +
                                     std::to_string(x.x) + ", " + std::to_string(x.y) + ")");
        }
    }
    const std::vector<double> samples{-10.0, -3.0, -1.0, -0.25, 0.0, 0.25, 1.0, 3.0, 10.0};
    for (std::size_t k = 0; k < qp.size(); k += std::max<std::size_t>(1, qp.size() / 64)) {
        const Point x = qp.point(k);
        for (double y : samples) {
            if (spec.da(x, y) < spec.a0(x) - 1e-12 * (1.0 + std::abs(spec.a0(x)))) {
                throw AdmissibilityError("monotonicity violated: da/dy < a0 at a sampled point");
            }
        }
    }
}

namespace presets {

/// Distributed bilinear control problem on the unit square with a quartic
/// monotone nonlinearity and a tracking objective.
inline ProblemSpec paper_sec6() {
    using std::numbers::pi;
    ProblemSpec s;
    s.name = "paper-sec6";
    s.a = [](Point x, double y) {
        return y * y * y * std::abs(y) + 2.0 * y - 100.0 * std::sin(2.0 * pi * x.x) * std::sin(pi * x.y);
    };
    s.da = [](Point, double y) { return 4.0 * std::abs(y) * y * y + 2.0; };
    s.d2a = [](Point, double y) { return 12.0 * y * std::abs(y); };
    s.a0 = [](Point) { return 2.0; };
    auto yd = [](Point x) { return -64.0 * x.x * (1.0 - x.x) * x.y * (1.0 - x.y); };
    s.L = [yd](Point x, double y) {
        const double d = y - yd(x);
        return 0.5 * d * d;
    };
    s.dL = [yd](Point x, double y) { return y - yd(x); };
    s.d2L = [](Point, double) { return 1.0; };
    s.nu = 0.05;
    s.bounds = {-1.0, 1.0};
    return s;
}

/// Same state equation, zero objective integrand: the optimal control is 0.
inline ProblemSpec tikhonov_only() {
    ProblemSpec s = paper_sec6();
    s.name = "tikhonov-only";
    s.L = [](Point, double) { return 0.0; };
    s.dL = [](Point, double) { return 0.0; };
    s.d2L = [](Point, double) { return 0.0; };
    return s;
}

/// -Lap y + y - 1 = 0 with homogeneous Neumann data: y = 1.
inline ProblemSpec manufactured_constant() {
    ProblemSpec s;
    s.name = "manufactured-constant";
    s.a = [](Point, double y) { return y - 1.0; };
    s.da = [](Point, double) { return 1.0; };
    s.d2a = [](Point, double) { return 0.0; };
    s.a0 = [](Point) { return 1.0; };
    s.L = [](Point, double y) { return 0.5 * (y - 1.0) * (y - 1.0); };
    s.dL = [](Point, double y) { return y - 1.0; };
    s.d2L = [](Point, double) { return 1.0; };
    s.nu = 0.05;
    s.bounds = {-1.0, 1.0};
    s.manufactured_control = 0.0;
    s.exact_state = 1.0;
    return s;
}

/// -Lap y + y + u y = 2 with u = 1: y = 1.
inline ProblemSpec manufactured_reaction() {
    ProblemSpec s = manufactured_constant();
    s.name = "manufactured-reaction";
    s.a = [](Point, double y) { return y - 2.0; };
    s.bounds = {-1.0, 2.0};
    s.manufactured_control = 1.0;
    return s;
}

inline std::vector<std::string> names() {
    return {"paper-sec6", "tikhonov-only", "manufactured-constant", "manufactured-reaction"};
}

inline std::optional<ProblemSpec> find(const std::string& name) {
    if (name == "paper-sec6") return paper_sec6();
    if (name == "tikhonov-only") return tikhonov_only();
    if (name == "manufactured-constant") return manufactured_constant();
    if (name == "manufactured-reaction") return manufactured_reaction();
    return std::nullopt;
}

}  // namespace presets
}  // namespace ocfem
