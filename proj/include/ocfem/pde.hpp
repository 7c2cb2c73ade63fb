#pragma once

// Discrete state equation and the three linear problems behind the
// derivatives of the reduced cost: linearized state z, adjoint phi and the
// second-order adjoint eta. All share the tangent operator
//   T(u, y) = K + M[da/dy(x, y) + u].

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "ocfem/errors.hpp"
#include "ocfem/fem.hpp"
#include "ocfem/linalg.hpp"
#include "ocfem/problem.hpp"

namespace ocfem {

struct SolveReport {
    int iterations = 0;
    double residual = 0.0;
    int damping_events = 0;
    bool converged = false;
};

struct NewtonOptions {
    double tol = 1e-11;       // relative to PdeContext::scale()
    double step_tol = 1e-10;  // last correction, relative to 1 + max|y|
    int max_iterations = 50;
    int max_halvings = 30;
};

/// Mesh-dependent data shared by every solve on one level: quadrature
/// points, stiffness matrix and boundary load.
class PdeContext {
public:
    PdeContext(ProblemSpec spec, MeshPtr mesh, int quad_degree = 4)
        : spec_(std::move(spec)),
          mesh_(std::move(mesh)),
          qp_(mesh_, quad_degree),
          stiffness_(assemble_stiffness(mesh_, spec_.diffusion, quad_degree)),
          boundary_load_(assemble_boundary_load(mesh_, spec_.g)) {
        validate(spec_);
        Vector a_zero(qp_.size());
        for (std::size_t k = 0; k < qp_.size(); ++k) a_zero[k] = spec_.a(qp_.point(k), 0.0);
        Vector rhs = assemble_volume_load(qp_, a_zero);
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = boundary_load_[i] - rhs[i];
        scale_ = 1.0 + norm2(rhs);
    }

    const ProblemSpec& spec() const { return spec_; }
    const MeshPtr& mesh() const { return mesh_; }
    const QuadPoints& qp() const { return qp_; }
    const SparseSymOperator& stiffness() const { return stiffness_; }
    const Vector& boundary_load() const { return boundary_load_; }
    /// 1 + ||int_Gamma g phi_i - int a(x,0) phi_i||_2
    double scale() const { return scale_; }

    void require_mesh(const MeshPtr& m) const {
        if (m.get() != mesh_.get()) throw ValidationError("field lives on a different mesh than the context");
    }

private:
    ProblemSpec spec_;
    MeshPtr mesh_;
    QuadPoints qp_;
    SparseSymOperator stiffness_;
    Vector boundary_load_;
    double scale_ = 1.0;
};

/// Control u must satisfy a0 + min u >= 0 with a0 + u not identically zero.
inline void check_control_admissible(const PdeContext& ctx, const P0Field& u) {
    ctx.require_mesh(u.mesh);
    const auto& qp = ctx.qp();
    const auto nq = qp.per_element();
    bool positive_somewhere = false;
    for (std::size_t t = 0; t < u.values.size(); ++t) {
        for (std::size_t q = 0; q < nq; ++q) {
            const double s = ctx.spec().a0(qp.point(t * nq + q)) + u.values[t];
            if (s < 0.0) throw AdmissibilityError("control violates a0 + u >= 0 on triangle " + std::to_string(t));
            if (s > 0.0) positive_somewhere = true;
        }
    }
    if (!positive_somewhere) throw AdmissibilityError("a0 + u vanishes identically");
}

/// F(y)_i = a(y, phi_i) + int (a(x,y) + u y) phi_i - int_Gamma g phi_i
inline Vector state_residual(const PdeContext& ctx, const P0Field& u, const P1Field& y) {
    ctx.require_mesh(y.mesh);
    const auto& qp = ctx.qp();
    const auto nq = qp.per_element();
    const Vector yq = qp.values(y);
    Vector f(qp.size());
    for (std::size_t k = 0; k < qp.size(); ++k) f[k] = ctx.spec().a(qp.point(k), yq[k]) + u.values[k / nq] * yq[k];
    Vector r = ctx.stiffness().matvec(y.values);
    const Vector load = assemble_volume_load(qp, f);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += load[i] - ctx.boundary_load()[i];
    return r;
}

/// Factorized tangent operator K + M[da/dy(x,y) + u], reused by every
/// linear solve at the same (u, y).
class Tangent {
public:
    Tangent(const PdeContext& ctx, const P0Field& u, const P1Field& y) : ctx_(&ctx) {
        ctx.require_mesh(u.mesh);
        ctx.require_mesh(y.mesh);
        const auto& qp = ctx.qp();
        const auto nq = qp.per_element();
        const Vector yq = qp.values(y);
        Vector w(qp.size());
        for (std::size_t k = 0; k < qp.size(); ++k) w[k] = ctx.spec().da(qp.point(k), yq[k]) + u.values[k / nq];
        op_ = std::make_shared<const SparseSymOperator>(ctx.stiffness() + assemble_weighted_mass(qp, w));
        fact_ = std::make_shared<const SpdFactorization>(*op_);
    }

    const SparseSymOperator& op() const { return *op_; }

    /// Solves T x = rhs; the Galerkin residual is checked against 1e-12 * scale.
    Vector solve(std::span<const double> rhs) const {
        Vector x = fact_->solve(rhs, 1e-14);
        Vector r = op_->matvec(x);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= rhs[i];
        const double res = norm2(r);
        if (res > 1e-12 * (ctx_->scale() + norm2(rhs))) {
            throw SolverError("tangent solve residual " + std::to_string(res) + " above tolerance", {res});
        }
        return x;
    }

private:
    const PdeContext* ctx_;
    std::shared_ptr<const SparseSymOperator> op_;
    std::shared_ptr<const SpdFactorization> fact_;
};

/// Damped Newton for the discrete state equation. The step is halved while
/// the residual norm fails to decrease. Converged once the residual meets the
/// tolerance and the last correction was small (or no step was needed).
inline std::pair<P1Field, SolveReport> solve_state(const PdeContext& ctx, const P0Field& u,
                                                   const std::optional<P1Field>& init = std::nullopt,
                                                   const NewtonOptions& opts = {}) {
    check_control_admissible(ctx, u);
    P1Field y = init ? *init : P1Field::zeros(ctx.mesh());
    ctx.require_mesh(y.mesh);
    SolveReport report;
    Vector r = state_residual(ctx, u, y);
    double rnorm = norm2(r);
    const double target = opts.tol * ctx.scale();
    double last_step = 0.0;
    while (true) {
        report.residual = rnorm;
        double ymax = 0.0;
        for (double v : y.values) ymax = std::max(ymax, std::abs(v));
        if (rnorm <= target && last_step <= opts.step_tol * (1.0 + ymax)) {
            report.converged = true;
            return {std::move(y), report};
        }
        if (report.iterations >= opts.max_iterations) {
            throw NonconvergenceError("state Newton did not converge in " + std::to_string(opts.max_iterations) +
                                          " iterations",
                                      rnorm, report.iterations);
        }
        ++report.iterations;
        const Tangent tangent(ctx, u, y);
        const Vector step = tangent.solve(r);

        double s = 1.0;
        for (int halving = 0;; ++halving) {
            P1Field trial = y;
            axpy(-s, step, trial.values);
            Vector r_trial = state_residual(ctx, u, trial);
            const double n_trial = norm2(r_trial);
            if (n_trial < rnorm || n_trial <= target) {
                last_step = 0.0;
                for (double v : step) last_step = std::max(last_step, s * std::abs(v));
                y = std::move(trial);
                r = std::move(r_trial);
                rnorm = n_trial;
                break;
            }
            if (halving == opts.max_halvings) {
                throw NonconvergenceError("state Newton: no residual decrease after " +
                                              std::to_string(opts.max_halvings) + " step halvings",
                                          rnorm, report.iterations);
            }
            s *= 0.5;
            ++report.damping_events;
        }
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides of the linear problems

/// int dL/dy(x, y) phi_i
inline Vector adjoint_rhs(const PdeContext& ctx, const P1Field& y) {
    const auto& qp = ctx.qp();
    const Vector yq = qp.values(y);
    Vector f(qp.size());
    for (std::size_t k = 0; k < qp.size(); ++k) f[k] = ctx.spec().dL(qp.point(k), yq[k]);
    return assemble_volume_load(qp, f);
}

/// -int y v phi_i
inline Vector linearized_rhs(const PdeContext& ctx, const P1Field& y, const P0Field& v) {
    ctx.require_mesh(v.mesh);
    const auto& qp = ctx.qp();
    const auto nq = qp.per_element();
    const Vector yq = qp.values(y);
    Vector f(qp.size());
    for (std::size_t k = 0; k < qp.size(); ++k) f[k] = -yq[k] * v.values[k / nq];
    return assemble_volume_load(qp, f);
}

/// int ([d2L/dy2 - phi d2a/dy2] z - v phi) phi_i
inline Vector eta_rhs(const PdeContext& ctx, const P1Field& y, const P1Field& phi, const P1Field& z,
                      const P0Field& v) {
    ctx.require_mesh(phi.mesh);
    ctx.require_mesh(z.mesh);
    ctx.require_mesh(v.mesh);
    const auto& qp = ctx.qp();
    const auto nq = qp.per_element();
    const Vector yq = qp.values(y), pq = qp.values(phi), zq = qp.values(z);
    Vector f(qp.size());
    for (std::size_t k = 0; k < qp.size(); ++k) {
        const Point x = qp.point(k);
        const double curvature = ctx.spec().d2L(x, yq[k]) - pq[k] * ctx.spec().d2a(x, yq[k]);
        f[k] = curvature * zq[k] - v.values[k / nq] * pq[k];
    }
    return assemble_volume_load(qp, f);
}

// ---------------------------------------------------------------------------
// Linear solves

inline P1Field solve_adjoint(const Tangent& tangent, const PdeContext& ctx, const P1Field& y) {
    return {ctx.mesh(), tangent.solve(adjoint_rhs(ctx, y))};
}

inline P1Field solve_adjoint(const PdeContext& ctx, const P0Field& u, const P1Field& y) {
    return solve_adjoint(Tangent(ctx, u, y), ctx, y);
}

/// Derivative of the control-to-state map at u in direction v.
inline P1Field solve_linearized(const Tangent& tangent, const PdeContext& ctx, const P1Field& y, const P0Field& v) {
    return {ctx.mesh(), tangent.solve(linearized_rhs(ctx, y, v))};
}

inline P1Field solve_linearized(const PdeContext& ctx, const P0Field& u, const P1Field& y, const P0Field& v) {
    return solve_linearized(Tangent(ctx, u, y), ctx, y, v);
}

/// Second-order adjoint: derivative of phi in direction v.
inline P1Field solve_eta(const Tangent& tangent, const PdeContext& ctx, const P1Field& y, const P1Field& phi,
                         const P1Field& z, const P0Field& v) {
    return {ctx.mesh(), tangent.solve(eta_rhs(ctx, y, phi, z, v))};
}

inline P1Field solve_eta(const PdeContext& ctx, const P0Field& u, const P1Field& y, const P1Field& phi,
                         const P1Field& z, const P0Field& v) {
    return solve_eta(Tangent(ctx, u, y), ctx, y, phi, z, v);
}

/// Convenience overloads taking (spec, mesh) directly.
inline std::pair<P1Field, SolveReport> solve_state(const ProblemSpec& spec, const MeshPtr& mesh, const P0Field& u,
                                                   const std::optional<P1Field>& init = std::nullopt) {
    return solve_state(PdeContext(spec, mesh), u, init);
}

}  // namespace ocfem
