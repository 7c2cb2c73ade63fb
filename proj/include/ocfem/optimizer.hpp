#pragma once

// Reduced cost J_h(u) = int L(x, y_h(u)) + nu/2 int u^2 over piecewise
// constant controls, its first and second derivatives, the projection
// formula, and a primal-dual active set (semismooth Newton) solver.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ocfem/errors.hpp"
#include "ocfem/fem.hpp"
#include "ocfem/pde.hpp"
#include "ocfem/problem.hpp"

namespace ocfem {

/// (1/|T|) int_T f g for P1 fields f, g; exact.
inline Vector element_product_means(const P1Field& f, const P1Field& g) {
    detail::require_same_mesh(f.mesh, g.mesh);
    const auto& mesh = *f.mesh;
    Vector out(mesh.num_triangles());
    for (Index t = 0; t < static_cast<Index>(out.size()); ++t) {
        const auto& tri = mesh.triangle(t);
        double fg = 0.0, sf = 0.0, sg = 0.0;
        for (Index v : tri) {
            fg += f.values[v] * g.values[v];
            sf += f.values[v];
            sg += g.values[v];
        }
        out[t] = (fg + sf * sg) / 12.0;
    }
    return out;
}

/// sum_T |T| a_T b_T
inline double p0_inner(const P0Field& a, const P0Field& b) {
    detail::require_same_mesh(a.mesh, b.mesh);
    double s = 0.0;
    for (Index t = 0; t < static_cast<Index>(a.values.size()); ++t) s += a.mesh->area(t) * a.values[t] * b.values[t];
    return s;
}

/// Cost at a known state.
inline double cost_at(const PdeContext& ctx, const P0Field& u, const P1Field& y) {
    const auto& qp = ctx.qp();
    const Vector yq = qp.values(y);
    Vector l(qp.size());
    for (std::size_t k = 0; k < qp.size(); ++k) l[k] = ctx.spec().L(qp.point(k), yq[k]);
    return qp.integrate(l) + 0.5 * ctx.spec().nu * p0_inner(u, u);
}

inline double cost(const PdeContext& ctx, const P0Field& u) {
    return cost_at(ctx, u, solve_state(ctx, u).first);
}

inline double cost(const ProblemSpec& spec, const MeshPtr& mesh, const P0Field& u) {
    return cost(PdeContext(spec, mesh), u);
}

/// State, adjoint and factorized tangent at one control. Provides the
/// gradient and Hessian-vector products of the reduced cost.
class Linearization {
public:
    Linearization(const PdeContext& ctx, P0Field u, P1Field y)
        : ctx_(&ctx), u_(std::move(u)), y_(std::move(y)), tangent_(ctx, u_, y_),
          phi_(solve_adjoint(tangent_, ctx, y_)), y_phi_(element_product_means(y_, phi_)) {}

    Linearization(const PdeContext& ctx, P0Field u, const std::optional<P1Field>& init = std::nullopt)
        : Linearization(ctx, u, solve_state(ctx, u, init).first) {}

    const PdeContext& context() const { return *ctx_; }
    const P0Field& control() const { return u_; }
    const P1Field& state() const { return y_; }
    const P1Field& adjoint() const { return phi_; }
    const Tangent& tangent() const { return tangent_; }
    /// Elementwise mean of y_h phi_h.
    const Vector& state_adjoint_means() const { return y_phi_; }

    double cost() const { return cost_at(*ctx_, u_, y_); }

    /// Element values nu u_T - (1/|T|) int_T y phi; J'(u)v = sum |T| g_T v_T.
    P0Field gradient() const {
        Vector g(u_.values.size());
        for (std::size_t t = 0; t < g.size(); ++t) g[t] = ctx_->spec().nu * u_.values[t] - y_phi_[t];
        return {u_.mesh, std::move(g)};
    }

    double directional_derivative(const P0Field& v) const { return p0_inner(gradient(), v); }

    P1Field linearized(const P0Field& v) const { return solve_linearized(tangent_, *ctx_, y_, v); }

    P1Field eta(const P0Field& v, const P1Field& z) const { return solve_eta(tangent_, *ctx_, y_, phi_, z, v); }

    /// Hessian applied to v as a P0 field: nu v_T - mean_T(phi z + y eta).
    /// Costs one linearized and one second-order adjoint solve.
    P0Field hessian_apply(const P0Field& v) const {
        const P1Field z = linearized(v);
        const P1Field e = eta(v, z);
        const Vector pz = element_product_means(phi_, z), ye = element_product_means(y_, e);
        Vector out(v.values.size());
        for (std::size_t t = 0; t < out.size(); ++t) out[t] = ctx_->spec().nu * v.values[t] - pz[t] - ye[t];
        return {u_.mesh, std::move(out)};
    }

    /// int [nu v1 - (phi z1 + y eta1)] v2
    double hessian_eta_form(const P0Field& v1, const P0Field& v2) const { return p0_inner(hessian_apply(v1), v2); }

    /// int [d2L - phi d2a] z1 z2 - int (v1 z2 + v2 z1) phi + nu int v1 v2
    double hessian_z_form(const P0Field& v1, const P0Field& v2) const {
        const P1Field z1 = linearized(v1), z2 = linearized(v2);
        const auto& qp = ctx_->qp();
        const Vector yq = qp.values(y_), pq = qp.values(phi_), z1q = qp.values(z1), z2q = qp.values(z2);
        Vector f(qp.size());
        for (std::size_t k = 0; k < qp.size(); ++k) {
            const Point x = qp.point(k);
            f[k] = (ctx_->spec().d2L(x, yq[k]) - pq[k] * ctx_->spec().d2a(x, yq[k])) * z1q[k] * z2q[k];
        }
        const P0Field z2phi{u_.mesh, element_product_means(z2, phi_)};
        const P0Field z1phi{u_.mesh, element_product_means(z1, phi_)};
        return qp.integrate(f) - p0_inner(v1, z2phi) - p0_inner(v2, z1phi) + ctx_->spec().nu * p0_inner(v1, v2);
    }

private:
    const PdeContext* ctx_;
    P0Field u_;
    P1Field y_;
    Tangent tangent_;
    P1Field phi_;
    Vector y_phi_;
};

inline P0Field gradient_field(const PdeContext& ctx, const P0Field& u) { return Linearization(ctx, u).gradient(); }

enum class HessianForm { z_form, eta_form };

inline double hessian_bilinear(const PdeContext& ctx, const P0Field& u, const P0Field& v1, const P0Field& v2,
                               HessianForm form = HessianForm::eta_form) {
    const Linearization lin(ctx, u);
    return form == HessianForm::z_form ? lin.hessian_z_form(v1, v2) : lin.hessian_eta_form(v1, v2);
}

/// Element value clamp((1/(nu |T|)) int_T y phi, alpha, beta).
inline P0Field project_control(const MeshPtr& mesh, const P1Field& y, const P1Field& phi, const Bounds& bounds,
                               double nu) {
    detail::require_same_mesh(mesh, y.mesh);
    Vector v = element_product_means(y, phi);
    for (double& x : v) x = bounds.clamp(x / nu);
    return {mesh, std::move(v)};
}

/// ||u - project_control(y, phi)||_{L2}; zero exactly at discrete
/// stationary points.
inline double kkt_residual(const P0Field& u, const P1Field& y, const P1Field& phi, const Bounds& bounds, double nu) {
    return l2_diff_p0(u, project_control(u.mesh, y, phi, bounds, nu));
}

// ---------------------------------------------------------------------------
// Outer solver

struct OcpOptions {
    double tol = 1e-9;
    int max_outer = 100;
    double cg_tol = 1e-10;
    int cg_max_iterations = 250;
    int stall_limit = 3;
    double fallback_damping = 0.5;
    NewtonOptions newton;
};

struct OuterStep {
    double kkt_residual = 0.0;
    double cost = 0.0;
    int active_lower = 0;
    int active_upper = 0;
    int cg_iterations = 0;
    bool fixed_point_fallback = false;
    SolveReport state_report;
};

struct OcpSolution {
    P0Field control;
    P1Field state;
    P1Field adjoint;
    double cost = 0.0;
    double kkt_residual = std::numeric_limits<double>::infinity();
    int outer_iterations = 0;
    bool converged = false;
    std::vector<OuterStep> history;
};

class OcpNonconvergenceError : public NonconvergenceError {
public:
    OcpNonconvergenceError(const std::string& what, OcpSolution best_iterate)
        : NonconvergenceError(what, best_iterate.kkt_residual, best_iterate.outer_iterations),
          best(std::move(best_iterate)) {}
    OcpSolution best;
};

namespace detail {

/// CG on the inactive block of the reduced Hessian in the |T|-weighted inner
/// product. Stops at negative curvature and returns the last iterate (or the
/// preconditioned residual direction if that happens immediately).
inline Vector inactive_newton_cg(const Linearization& lin, const std::vector<char>& inactive, const Vector& rhs,
                                 double tol, int max_iterations, int& iterations) {
    const auto& mesh = lin.control().mesh;
    const std::size_t n = rhs.size();
    auto winner = [&](const Vector& a, const Vector& b) {
        double s = 0.0;
        for (std::size_t t = 0; t < n; ++t)
            if (inactive[t]) s += mesh->area(static_cast<Index>(t)) * a[t] * b[t];
        return s;
    };
    auto apply = [&](const Vector& p) {
        P0Field hp = lin.hessian_apply(P0Field(mesh, p));
        for (std::size_t t = 0; t < n; ++t)
            if (!inactive[t]) hp.values[t] = 0.0;
        return hp.values;
    };

    Vector x(n, 0.0), r = rhs, p = rhs;
    for (std::size_t t = 0; t < n; ++t)
        if (!inactive[t]) r[t] = p[t] = 0.0;
    double rr = winner(r, r);
    const double r0 = std::sqrt(rr);
    iterations = 0;
    if (r0 == 0.0) return x;
    while (iterations < max_iterations) {
        const Vector hp = apply(p);
        const double php = winner(p, hp);
        ++iterations;
        if (!(php > 0.0)) {
            if (iterations == 1) {
                for (std::size_t t = 0; t < n; ++t) x[t] = r[t] / lin.context().spec().nu;
            }
            return x;
        }
        const double step = rr / php;
        for (std::size_t t = 0; t < n; ++t) {
            x[t] += step * p[t];
            r[t] -= step * hp[t];
        }
        const double rr_new = winner(r, r);
        if (std::sqrt(rr_new) <= tol * r0) break;
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t t = 0; t < n; ++t) p[t] = r[t] + beta * p[t];
    }
    return x;
}

}  // namespace detail

/// Primal-dual active set method on u = Proj_[alpha,beta]((1/nu) mean_T(y phi)).
/// Active elements are fixed at their bound; the inactive block of the
/// Newton system is solved matrix-free with Hessian-vector products.
inline OcpSolution solve_ocp(const PdeContext& ctx, const std::optional<P0Field>& init = std::nullopt,
                             const OcpOptions& opts = {}, const std::optional<P1Field>& init_state = std::nullopt) {
    const auto& spec = ctx.spec();
    const auto& mesh = ctx.mesh();
    const Bounds& bounds = spec.bounds;
    const double nu = spec.nu;
    check_admissibility(spec, mesh);

    P0Field u = init ? *init : P0Field::constant(mesh, 0.0);
    ctx.require_mesh(u.mesh);
    for (double& v : u.values) v = bounds.clamp(v);

    auto [y0, report0] = solve_state(ctx, u, init_state, opts.newton);
    std::optional<Linearization> lin;
    lin.emplace(ctx, u, std::move(y0));
    SolveReport last_report = report0;

    OcpSolution best;
    double prev_kkt = std::numeric_limits<double>::infinity();
    int stall = 0;
    std::vector<OuterStep> history;

    for (int outer = 0;; ++outer) {
        const Vector& q = lin->state_adjoint_means();
        const P0Field projected = project_control(mesh, lin->state(), lin->adjoint(), bounds, nu);
        const double kkt = l2_diff_p0(lin->control(), projected);

        OuterStep step;
        step.kkt_residual = kkt;
        step.cost = lin->cost();
        step.state_report = last_report;

        if (kkt < best.kkt_residual) {
            best.control = lin->control();
            best.state = lin->state();
            best.adjoint = lin->adjoint();
            best.cost = step.cost;
            best.kkt_residual = kkt;
            best.outer_iterations = outer;
        }
        if (kkt <= opts.tol) {
            history.push_back(step);
            best.history = std::move(history);
            best.outer_iterations = outer;
            best.converged = true;
            return best;
        }
        if (outer >= opts.max_outer) {
            history.push_back(step);
            best.history = std::move(history);
            throw OcpNonconvergenceError("outer solver did not reach KKT tolerance in " +
                                             std::to_string(opts.max_outer) + " iterations",
                                         std::move(best));
        }
        stall = kkt < prev_kkt ? 0 : stall + 1;
        prev_kkt = kkt;

        P0Field next = lin->control();
        if (stall >= opts.stall_limit) {
            const double w = opts.fallback_damping;
            for (std::size_t t = 0; t < next.values.size(); ++t)
                next.values[t] = (1.0 - w) * next.values[t] + w * projected.values[t];
            step.fixed_point_fallback = true;
            stall = 0;
        } else {
            // Active sets from the strict position of mean(y phi)/nu
            // relative to the bounds; ties count as inactive.
            const std::size_t n = next.values.size();
            std::vector<char> inactive(n, 1);
            P0Field delta_active = P0Field::constant(mesh, 0.0);
            bool any_active = false;
            for (std::size_t t = 0; t < n; ++t) {
                const double s = q[t] / nu;
                if (s > bounds.beta) {
                    inactive[t] = 0;
                    delta_active.values[t] = bounds.beta - next.values[t];
                    ++step.active_upper;
                } else if (s < bounds.alpha) {
                    inactive[t] = 0;
                    delta_active.values[t] = bounds.alpha - next.values[t];
                    ++step.active_lower;
                }
                any_active = any_active || (!inactive[t] && delta_active.values[t] != 0.0);
            }
            const P0Field g = lin->gradient();
            Vector rhs(n);
            const P0Field h_active = any_active ? lin->hessian_apply(delta_active) : P0Field::constant(mesh, 0.0);
            for (std::size_t t = 0; t < n; ++t) rhs[t] = inactive[t] ? -(g.values[t] + h_active.values[t]) : 0.0;
            const Vector delta_inactive =
                detail::inactive_newton_cg(*lin, inactive, rhs, opts.cg_tol, opts.cg_max_iterations, step.cg_iterations);
            for (std::size_t t = 0; t < n; ++t) {
                const double d = inactive[t] ? delta_inactive[t] : delta_active.values[t];
                next.values[t] = bounds.clamp(next.values[t] + d);
            }
        }
        history.push_back(step);

        auto [y_next, report] = solve_state(ctx, next, lin->state(), opts.newton);
        last_report = report;
        lin.emplace(ctx, std::move(next), std::move(y_next));
    }
}

inline OcpSolution solve_ocp(const ProblemSpec& spec, const MeshPtr& mesh,
                             const std::optional<P0Field>& init = std::nullopt, const OcpOptions& opts = {}) {
    return solve_ocp(PdeContext(spec, mesh), init, opts);
}

}  // namespace ocfem
