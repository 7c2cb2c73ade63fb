#pragma once

// P1/P0 fields, quadrature-point caches, Galerkin assembly, the elementwise
// L2 projection and the norms used by the convergence studies.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ocfem/errors.hpp"
#include "ocfem/linalg.hpp"
#include "ocfem/mesh.hpp"
#include "ocfem/quadrature.hpp"

namespace ocfem {

using ScalarFn = std::function<double(Point)>;

/// Symmetric 2x2 coefficient matrix [[a11, a12], [a21, a22]].
struct Mat2 {
    double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
};
using DiffusionFn = std::function<Mat2(Point)>;

inline Mat2 identity_diffusion(Point) { return {}; }

/// Continuous piecewise-linear field: one value per mesh vertex.
struct P1Field {
    MeshPtr mesh;
    Vector values;

    P1Field() = default;
    P1Field(MeshPtr m, Vector v) : mesh(std::move(m)), values(std::move(v)) {
        if (values.size() != mesh->num_vertices()) throw ValidationError("P1 field length != vertex count");
    }
    static P1Field zeros(MeshPtr m) {
        const auto n = m->num_vertices();
        return {std::move(m), Vector(n, 0.0)};
    }
    static P1Field interpolate(MeshPtr m, const ScalarFn& f) {
        Vector v;
        v.reserve(m->num_vertices());
        for (const auto& p : m->vertices()) v.push_back(f(p));
        return {std::move(m), std::move(v)};
    }

    double at(Index t, const std::array<double, 3>& lambda) const {
        const auto& tri = mesh->triangle(t);
        return lambda[0] * values[tri[0]] + lambda[1] * values[tri[1]] + lambda[2] * values[tri[2]];
    }
};

/// Elementwise-constant field: one value per triangle.
struct P0Field {
    MeshPtr mesh;
    Vector values;

    P0Field() = default;
    P0Field(MeshPtr m, Vector v) : mesh(std::move(m)), values(std::move(v)) {
        if (values.size() != mesh->num_triangles()) throw ValidationError("P0 field length != triangle count");
    }
    static P0Field constant(MeshPtr m, double c) {
        const auto n = m->num_triangles();
        return {std::move(m), Vector(n, c)};
    }
};

/// Physical quadrature points and weights (|T| w_q) for every triangle.
class QuadPoints {
public:
    QuadPoints(MeshPtr mesh, QuadratureRule rule) : mesh_(std::move(mesh)), rule_(std::move(rule)) {
        const auto nt = mesh_->num_triangles(), nq = rule_.size();
        points_.resize(nt * nq);
        weights_.resize(nt * nq);
        for (Index t = 0; t < static_cast<Index>(nt); ++t) {
            const auto c = mesh_->corners(t);
            for (std::size_t q = 0; q < nq; ++q) {
                const auto& l = rule_.points[q];
                points_[t * nq + q] = {l[0] * c[0].x + l[1] * c[1].x + l[2] * c[2].x,
                                       l[0] * c[0].y + l[1] * c[1].y + l[2] * c[2].y};
                weights_[t * nq + q] = mesh_->area(t) * rule_.weights[q];
            }
        }
    }
    explicit QuadPoints(MeshPtr mesh, int degree = 4) : QuadPoints(std::move(mesh), triangle_rule(degree)) {}

    const MeshPtr& mesh() const { return mesh_; }
    const QuadratureRule& rule() const { return rule_; }
    std::size_t per_element() const { return rule_.size(); }
    std::size_t size() const { return weights_.size(); }
    const Point& point(std::size_t k) const { return points_[k]; }
    double weight(std::size_t k) const { return weights_[k]; }

    /// Values of a P1 field at every quadrature point.
    Vector values(const P1Field& f) const {
        check(f.mesh);
        const auto nq = per_element();
        Vector out(size());
        for (Index t = 0; t < static_cast<Index>(mesh_->num_triangles()); ++t)
            for (std::size_t q = 0; q < nq; ++q) out[t * nq + q] = f.at(t, rule_.points[q]);
        return out;
    }

    Vector values(const P0Field& f) const {
        check(f.mesh);
        const auto nq = per_element();
        Vector out(size());
        for (std::size_t t = 0; t < mesh_->num_triangles(); ++t)
            for (std::size_t q = 0; q < nq; ++q) out[t * nq + q] = f.values[t];
        return out;
    }

    Vector values(const ScalarFn& f) const {
        Vector out(size());
        for (std::size_t k = 0; k < size(); ++k) out[k] = f(points_[k]);
        return out;
    }

    /// sum_k w_k v_k
    double integrate(std::span<const double> qp) const {
        double s = 0.0;
        for (std::size_t k = 0; k < size(); ++k) s += weights_[k] * qp[k];
        return s;
    }

    /// (1/|T|) * integral over T, per triangle.
    Vector element_means(std::span<const double> qp) const {
        const auto nq = per_element();
        Vector out(mesh_->num_triangles());
        for (std::size_t t = 0; t < out.size(); ++t) {
            double s = 0.0;
            for (std::size_t q = 0; q < nq; ++q) s += rule_.weights[q] * qp[t * nq + q];
            out[t] = s;
        }
        return out;
    }

private:
    void check(const MeshPtr& m) const {
        if (m.get() != mesh_.get()) throw ValidationError("field lives on a different mesh");
    }

    MeshPtr mesh_;
    QuadratureRule rule_;
    std::vector<Point> points_;
    Vector weights_;
};

/// Gradients of the three barycentric coordinates of a triangle.
inline std::array<Point, 3> barycentric_gradients(const std::array<Point, 3>& c) {
    const double two_area = 2.0 * signed_area(c[0], c[1], c[2]);
    return {Point{(c[1].y - c[2].y) / two_area, (c[2].x - c[1].x) / two_area},
            Point{(c[2].y - c[0].y) / two_area, (c[0].x - c[2].x) / two_area},
            Point{(c[0].y - c[1].y) / two_area, (c[1].x - c[0].x) / two_area}};
}

/// Element stiffness for a coefficient matrix already averaged over the triangle.
inline std::array<std::array<double, 3>, 3> local_stiffness(const std::array<Point, 3>& c, const Mat2& a) {
    const auto g = barycentric_gradients(c);
    const double area = signed_area(c[0], c[1], c[2]);
    std::array<std::array<double, 3>, 3> k{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double ag_x = a.a11 * g[j].x + a.a12 * g[j].y;
            const double ag_y = a.a21 * g[j].x + a.a22 * g[j].y;
            k[i][j] = area * (g[i].x * ag_x + g[i].y * ag_y);
        }
    }
    return k;
}

/// K_ij = sum_T int_T a_kl d_k phi_j d_l phi_i.
inline SparseSymOperator assemble_stiffness(const MeshPtr& mesh, const DiffusionFn& diffusion = identity_diffusion,
                                            int degree = 4) {
    const auto rule = triangle_rule(degree);
    std::vector<Entry> entries;
    entries.reserve(9 * mesh->num_triangles());
    for (Index t = 0; t < static_cast<Index>(mesh->num_triangles()); ++t) {
        const auto c = mesh->corners(t);
        Mat2 avg{0.0, 0.0, 0.0, 0.0};
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const auto& l = rule.points[q];
            const Mat2 a = diffusion({l[0] * c[0].x + l[1] * c[1].x + l[2] * c[2].x,
                                      l[0] * c[0].y + l[1] * c[1].y + l[2] * c[2].y});
            if (std::abs(a.a12 - a.a21) > 1e-14 * (std::abs(a.a12) + std::abs(a.a21) + 1.0)) {
                throw ValidationError("diffusion coefficient matrix is not symmetric");
            }
            avg.a11 += rule.weights[q] * a.a11;
            avg.a12 += rule.weights[q] * a.a12;
            avg.a21 += rule.weights[q] * a.a21;
            avg.a22 += rule.weights[q] * a.a22;
        }
        const auto k = local_stiffness(c, avg);
        const auto& tri = mesh->triangle(t);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) entries.push_back({tri[i], tri[j], k[i][j]});
    }
    return SparseSymOperator(static_cast<int>(mesh->num_vertices()), entries);
}

/// M_ij = int w phi_i phi_j with w given at the quadrature points of `qp`.
inline SparseSymOperator assemble_weighted_mass(const QuadPoints& qp, std::span<const double> weight) {
    const auto& mesh = qp.mesh();
    const auto& rule = qp.rule();
    const auto nq = qp.per_element();
    std::vector<Entry> entries;
    entries.reserve(9 * mesh->num_triangles());
    for (Index t = 0; t < static_cast<Index>(mesh->num_triangles()); ++t) {
        std::array<std::array<double, 3>, 3> m{};
        for (std::size_t q = 0; q < nq; ++q) {
            const auto& l = rule.points[q];
            const double w = qp.weight(t * nq + q) * weight[t * nq + q];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) m[i][j] += w * l[i] * l[j];
        }
        const auto& tri = mesh->triangle(t);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) entries.push_back({tri[i], tri[j], m[i][j]});
    }
    return SparseSymOperator(static_cast<int>(mesh->num_vertices()), entries);
}

inline SparseSymOperator assemble_weighted_mass(const MeshPtr& mesh, const ScalarFn& weight, int degree = 4) {
    QuadPoints qp(mesh, degree);
    return assemble_weighted_mass(qp, qp.values(weight));
}

/// P0 weights enter as exact per-element constants.
inline SparseSymOperator assemble_weighted_mass(const MeshPtr& mesh, const P0Field& weight) {
    QuadPoints qp(mesh, 2);
    return assemble_weighted_mass(qp, qp.values(weight));
}

/// b_i = int f phi_i with f given at the quadrature points.
inline Vector assemble_volume_load(const QuadPoints& qp, std::span<const double> f) {
    const auto& mesh = qp.mesh();
    const auto& rule = qp.rule();
    const auto nq = qp.per_element();
    Vector b(mesh->num_vertices(), 0.0);
    for (Index t = 0; t < static_cast<Index>(mesh->num_triangles()); ++t) {
        const auto& tri = mesh->triangle(t);
        for (std::size_t q = 0; q < nq; ++q) {
            const double w = qp.weight(t * nq + q) * f[t * nq + q];
            for (int i = 0; i < 3; ++i) b[tri[i]] += w * rule.points[q][i];
        }
    }
    return b;
}

inline Vector assemble_volume_load(const MeshPtr& mesh, const ScalarFn& f, int degree = 4) {
    QuadPoints qp(mesh, degree);
    return assemble_volume_load(qp, qp.values(f));
}

/// b_i = int_Gamma g phi_i, three Gauss points per boundary edge.
inline Vector assemble_boundary_load(const MeshPtr& mesh, const ScalarFn& g) {
    const auto rule = gauss_line_rule();
    Vector b(mesh->num_vertices(), 0.0);
    for (const auto& e : mesh->boundary_edges()) {
        const Point a = mesh->vertex(e.vertices[0]), c = mesh->vertex(e.vertices[1]);
        const double len = distance(a, c);
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double s = rule.points[q][0];
            const double w = len * rule.weights[q] * g((1.0 - s) * a + s * c);
            b[e.vertices[0]] += w * (1.0 - s);
            b[e.vertices[1]] += w * s;
        }
    }
    return b;
}

/// Elementwise mean (1/|T|) int_T source.
inline P0Field l2_project_p0(const MeshPtr& mesh, const ScalarFn& source, int degree = 4) {
    QuadPoints qp(mesh, degree);
    return {mesh, qp.element_means(qp.values(source))};
}

inline P0Field l2_project_p0(const MeshPtr& mesh, const P1Field& source) {
    if (source.mesh.get() != mesh.get()) throw ValidationError("field lives on a different mesh");
    Vector out(mesh->num_triangles());
    for (Index t = 0; t < static_cast<Index>(out.size()); ++t) {
        const auto& tri = mesh->triangle(t);
        out[t] = (source.values[tri[0]] + source.values[tri[1]] + source.values[tri[2]]) / 3.0;
    }
    return {mesh, std::move(out)};
}

inline P0Field l2_project_p0(const MeshPtr& mesh, const P0Field& source) {
    if (source.mesh.get() != mesh.get()) throw ValidationError("field lives on a different mesh");
    return source;
}

// ---------------------------------------------------------------------------
// Norms

namespace detail {
inline void require_same_mesh(const MeshPtr& a, const MeshPtr& b) {
    if (a.get() != b.get()) throw ValidationError("fields live on different meshes; supply a prolongation map");
}
}  // namespace detail

/// Exact ||a - b||_{L2} of P1 fields: the mass-matrix quadratic form.
inline double l2_diff_p1(const P1Field& a, const P1Field& b) {
    detail::require_same_mesh(a.mesh, b.mesh);
    const auto& mesh = *a.mesh;
    double s = 0.0;
    for (Index t = 0; t < static_cast<Index>(mesh.num_triangles()); ++t) {
        const auto& tri = mesh.triangle(t);
        double sq = 0.0, sum = 0.0;
        for (Index v : tri) {
            const double d = a.values[v] - b.values[v];
            sq += d * d;
            sum += d;
        }
        s += mesh.area(t) / 12.0 * (sq + sum * sum);
    }
    return std::sqrt(s);
}

inline double l2_norm(const P1Field& a) { return l2_diff_p1(a, P1Field::zeros(a.mesh)); }

/// sqrt(sum_T |T| (a_T - b_T)^2)
inline double l2_diff_p0(const P0Field& a, const P0Field& b) {
    detail::require_same_mesh(a.mesh, b.mesh);
    double s = 0.0;
    for (Index t = 0; t < static_cast<Index>(a.values.size()); ++t) {
        const double d = a.values[t] - b.values[t];
        s += a.mesh->area(t) * d * d;
    }
    return std::sqrt(s);
}

inline double l2_norm(const P0Field& a) { return l2_diff_p0(a, P0Field::constant(a.mesh, 0.0)); }

inline double linf_diff(const P1Field& a, const P1Field& b) {
    detail::require_same_mesh(a.mesh, b.mesh);
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

inline double linf_diff(const P0Field& a, const P0Field& b) {
    detail::require_same_mesh(a.mesh, b.mesh);
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Cross-level transfer

inline P1Field prolong(const P1Field& f, const ProlongationMap& map) {
    detail::require_same_mesh(f.mesh, map.parent);
    return {map.child, map.prolong_nodal(f.values)};
}

inline P0Field prolong(const P0Field& f, const ProlongationMap& map) {
    detail::require_same_mesh(f.mesh, map.parent);
    return {map.child, map.prolong_elementwise(f.values)};
}

/// Prolong through a chain of maps starting at the field's mesh.
template <class Field>
Field prolong(Field f, std::span<const ProlongationMap> chain) {
    for (const auto& m : chain) f = prolong(f, m);
    return f;
}

inline double l2_diff_p1(const P1Field& coarse, const P1Field& fine, const ProlongationMap& map) {
    return l2_diff_p1(prolong(coarse, map), fine);
}

inline double l2_diff_p0(const P0Field& coarse, const P0Field& fine, const ProlongationMap& map) {
    return l2_diff_p0(prolong(coarse, map), fine);
}

// ---------------------------------------------------------------------------
// Field dumps: header `p1 n` or `p0 n`, then one value per line.

inline void write_field(std::ostream& os, const P1Field& f) {
    os << "p1 " << f.values.size() << '\n';
    const auto old = os.precision(17);
    for (double v : f.values) os << v << '\n';
    os.precision(old);
}

inline void write_field(std::ostream& os, const P0Field& f) {
    os << "p0 " << f.values.size() << '\n';
    const auto old = os.precision(17);
    for (double v : f.values) os << v << '\n';
    os.precision(old);
}

/// Reads either kind; returns the tag and the values.
inline std::pair<std::string, Vector> read_field(std::istream& is) {
    std::string tag;
    std::size_t n = 0;
    if (!(is >> tag >> n) || (tag != "p1" && tag != "p0")) throw ValidationError("field dump: bad header");
    Vector v(n);
    for (auto& x : v) is >> x;
    if (!is) throw ValidationError("field dump: truncated body");
    return {tag, v};
}

}  // namespace ocfem
