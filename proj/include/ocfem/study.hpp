#pragma once

// Convergence studies over a nested family of meshes: consecutive-level
// L2 differences, experimental orders, pointwise post-processed controls,
// and the mixed-element (active/inactive) diagnostics.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ocfem/errors.hpp"
#include "ocfem/fem.hpp"
#include "ocfem/mesh.hpp"
#include "ocfem/optimizer.hpp"
#include "ocfem/problem.hpp"

namespace ocfem {

/// log2(prev / cur); nullopt unless both are positive.
inline std::optional<double> eoc(double e_prev, double e_cur) {
    if (!(e_prev > 0.0) || !(e_cur > 0.0)) return std::nullopt;
    return std::log2(e_prev / e_cur);
}

/// u~(x) = clamp(y_h(x) phi_h(x) / nu, alpha, beta)
class PostprocessedControl {
public:
    PostprocessedControl(P1Field y, P1Field phi, Bounds bounds, double nu)
        : y_(std::move(y)), phi_(std::move(phi)), bounds_(bounds), nu_(nu) {
        detail::require_same_mesh(y_.mesh, phi_.mesh);
    }

    double at(Index t, const std::array<double, 3>& lambda) const {
        return bounds_.clamp(y_.at(t, lambda) * phi_.at(t, lambda) / nu_);
    }

    /// Pointwise evaluator; locates x in the mesh.
    ScalarFn evaluator() const {
        auto locator = std::make_shared<PointLocator>(y_.mesh);
        return [self = *this, locator](Point x) {
            const auto loc = locator->locate(x, 1e-10);
            if (!loc) throw ValidationError("point outside the mesh");
            return self.at(loc->triangle, loc->lambda);
        };
    }

    /// Values at the quadrature points of qp (which must live on this mesh).
    Vector values(const QuadPoints& qp) const {
        const Vector yq = qp.values(y_), pq = qp.values(phi_);
        Vector out(qp.size());
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = bounds_.clamp(yq[k] * pq[k] / nu_);
        return out;
    }

    /// The same control after exact prolongation of y and phi.
    PostprocessedControl prolonged(std::span<const ProlongationMap> chain) const {
        return {prolong(y_, chain), prolong(phi_, chain), bounds_, nu_};
    }

    const MeshPtr& mesh() const { return y_.mesh; }
    const P1Field& state() const { return y_; }
    const P1Field& adjoint() const { return phi_; }

private:
    P1Field y_, phi_;
    Bounds bounds_;
    double nu_;
};

inline PostprocessedControl postprocess_control(const P1Field& y, const P1Field& phi, const Bounds& bounds,
                                                double nu) {
    return {y, phi, bounds, nu};
}

/// ||u~_coarse - u~_fine||_{L2} by degree-4 quadrature on the fine mesh;
/// `chain` leads from the coarse mesh to the fine one. Clamp kinks are not
/// resolved.
inline double postprocess_l2_diff(const PostprocessedControl& coarse, const PostprocessedControl& fine,
                                  std::span<const ProlongationMap> chain) {
    const PostprocessedControl c = coarse.prolonged(chain);
    detail::require_same_mesh(c.mesh(), fine.mesh());
    QuadPoints qp(fine.mesh(), 4);
    const Vector a = c.values(qp), b = fine.values(qp);
    Vector d(a.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(qp.integrate(d));
}

struct Classification {
    std::vector<char> mixed;          // 1 for elements of the mixed set
    std::vector<Point> active_point;  // first active sample (mixed elements only)
    double measure_mixed = 0.0;
};

/// Default "at the bound" tolerance.
inline double default_active_tolerance(const Bounds& b) {
    return b.bounded_above() ? 1e-6 * (b.beta - b.alpha) : 1e-6 * std::max(1.0, std::abs(b.alpha));
}

/// An element is mixed when its sample points (vertices, then barycenter)
/// contain both a value at a bound and a value strictly between them.
inline Classification classify_elements(const MeshPtr& mesh, const ScalarFn& control, const Bounds& bounds,
                                        std::optional<double> tol_active = std::nullopt) {
    const double tol = tol_active.value_or(default_active_tolerance(bounds));
    Classification c;
    const auto nt = mesh->num_triangles();
    c.mixed.assign(nt, 0);
    c.active_point.assign(nt, Point{});
    for (Index t = 0; t < static_cast<Index>(nt); ++t) {
        const auto corners = mesh->corners(t);
        const std::array<Point, 4> samples{corners[0], corners[1], corners[2], barycenter(*mesh, t)};
        bool has_active = false, has_inactive = false;
        for (const Point& x : samples) {
            const double v = control(x);
            const bool active =
                std::abs(v - bounds.alpha) <= tol || (bounds.bounded_above() && std::abs(v - bounds.beta) <= tol);
            if (active && !has_active) c.active_point[t] = x;
            has_active = has_active || active;
            has_inactive = has_inactive || !active;
        }
        if (has_active && has_inactive) {
            c.mixed[t] = 1;
            c.measure_mixed += mesh->area(t);
        }
    }
    return c;
}

/// Element value = control(x_T): x_T is the barycenter, or the chosen
/// active sample point on mixed elements.
inline P0Field build_wh(const MeshPtr& mesh, const ScalarFn& control, const Classification& c) {
    Vector v(mesh->num_triangles());
    for (Index t = 0; t < static_cast<Index>(v.size()); ++t)
        v[t] = control(c.mixed[t] ? c.active_point[t] : barycenter(*mesh, t));
    return {mesh, std::move(v)};
}

/// L2 distance restricted to non-mixed elements.
inline double l2_diff_p0_unmixed(const P0Field& a, const P0Field& b, const Classification& c) {
    detail::require_same_mesh(a.mesh, b.mesh);
    double s = 0.0;
    for (Index t = 0; t < static_cast<Index>(a.values.size()); ++t) {
        if (c.mixed[t]) continue;
        const double d = a.values[t] - b.values[t];
        s += a.mesh->area(t) * d * d;
    }
    return std::sqrt(s);
}

struct StudyRecord {
    int level = 0;
    double h = 0.0;
    double e_u = 0.0, e_y = 0.0, e_phi = 0.0, e_upost = 0.0;
    std::optional<double> eoc_u, eoc_y, eoc_phi, eoc_upost;
    double kkt_residual = 0.0;
    int outer_iterations = 0;
    double measure_T1 = 0.0;
    double wh_gap = 0.0;  // ||u_h - w_h|| over non-mixed elements
};

struct LevelSolution {
    MeshPtr mesh;
    OcpSolution solution;
};

struct StudyOptions {
    OcpOptions ocp;
    /// Coarsest mesh of the family; finer levels are its red refinements.
    std::function<MeshPtr(int level)> base_mesh = build_unit_square_mesh;
    std::function<void(int level, const OcpSolution&)> on_level_solved;
};

class StudyError : public Error {
public:
    StudyError(const std::string& what, std::vector<StudyRecord> partial)
        : Error(what), records(std::move(partial)) {}
    std::vector<StudyRecord> records;
};

namespace detail {

inline std::vector<StudyRecord> study_records(const ProblemSpec& spec, const std::vector<LevelSolution>& levels,
                                              const std::vector<ProlongationMap>& maps, bool have_finest) {
    std::vector<StudyRecord> records;
    if (levels.size() < 2) return records;
    const auto& finest = levels.back();
    std::optional<ScalarFn> reference;
    if (have_finest) {
        reference = postprocess_control(finest.solution.state, finest.solution.adjoint, spec.bounds, spec.nu)
                        .evaluator();
    }
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
        const auto& coarse = levels[i];
        const auto& fine = levels[i + 1];
        const ProlongationMap& map = maps[i];
        StudyRecord r;
        r.level = coarse.mesh->level();
        r.h = coarse.mesh->h();
        r.e_u = l2_diff_p0(coarse.solution.control, fine.solution.control, map);
        r.e_y = l2_diff_p1(coarse.solution.state, fine.solution.state, map);
        r.e_phi = l2_diff_p1(coarse.solution.adjoint, fine.solution.adjoint, map);
        const auto pc = postprocess_control(coarse.solution.state, coarse.solution.adjoint, spec.bounds, spec.nu);
        const auto pf = postprocess_control(fine.solution.state, fine.solution.adjoint, spec.bounds, spec.nu);
        r.e_upost = postprocess_l2_diff(pc, pf, std::span(&map, 1));
        r.kkt_residual = coarse.solution.kkt_residual;
        r.outer_iterations = coarse.solution.outer_iterations;
        if (reference) {
            const auto cls = classify_elements(coarse.mesh, *reference, spec.bounds);
            r.measure_T1 = cls.measure_mixed;
            r.wh_gap = l2_diff_p0_unmixed(coarse.solution.control, build_wh(coarse.mesh, *reference, cls), cls);
        }
        if (!records.empty()) {
            const auto& p = records.back();
            r.eoc_u = eoc(p.e_u, r.e_u);
            r.eoc_y = eoc(p.e_y, r.e_y);
            r.eoc_phi = eoc(p.e_phi, r.e_phi);
            r.eoc_upost = eoc(p.e_upost, r.e_upost);
        }
        records.push_back(r);
    }
    return records;
}

}  // namespace detail

struct StudyResult {
    std::vector<StudyRecord> records;
    std::vector<LevelSolution> levels;
    std::vector<ProlongationMap> maps;  // maps[i]: levels[i] -> levels[i+1]
};

/// Solves the discrete problem on levels j_min..j_max (each level the red
/// refinement of the previous one, warm-started from the prolonged coarse
/// solution) and fills one record per level j_min..j_max-1.
inline StudyResult run_study(const ProblemSpec& spec, int j_min, int j_max, const StudyOptions& opts = {}) {
    if (j_min < 0 || j_min >= j_max) throw ValidationError("study needs 0 <= j_min < j_max");
    StudyResult result;
    MeshPtr mesh = opts.base_mesh(j_min);
    for (int j = j_min; j <= j_max; ++j) {
        if (j > j_min) {
            auto [child, map] = refine(mesh);
            mesh = child;
            result.maps.push_back(std::move(map));
        }
        std::optional<P0Field> init;
        std::optional<P1Field> init_state;
        if (!result.levels.empty()) {
            const auto& prev = result.levels.back().solution;
            init = prolong(prev.control, result.maps.back());
            init_state = prolong(prev.state, result.maps.back());
        }
        try {
            PdeContext ctx(spec, mesh);
            OcpSolution sol = solve_ocp(ctx, init, opts.ocp, init_state);
            if (opts.on_level_solved) opts.on_level_solved(j, sol);
            result.levels.push_back({mesh, std::move(sol)});
        } catch (const Error& e) {
            auto partial = detail::study_records(spec, result.levels, result.maps, false);
            throw StudyError("level " + std::to_string(j) + ": " + e.what(), std::move(partial));
        }
    }
    result.records = detail::study_records(spec, result.levels, result.maps, true);
    return result;
}

}  // namespace ocfem
