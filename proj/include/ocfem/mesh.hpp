#pragma once

// Nested structured triangulations of the unit square, red refinement with
// exact prolongation maps, and basic geometry queries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ocfem/errors.hpp"

namespace ocfem {

using Index = std::int32_t;

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point a, Point b) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Signed area of the triangle (a, b, c); positive for counterclockwise order.
inline double signed_area(Point a, Point b, Point c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

using Triangle = std::array<Index, 3>;

struct BoundaryEdge {
    std::array<Index, 2> vertices;
    Index triangle = 0;
    int marker = 0;
};

/// Conforming triangulation. Immutable once built; share it through MeshPtr.
class Mesh {
public:
    Mesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
         std::vector<BoundaryEdge> boundary, int level)
        : vertices_(std::move(vertices)),
          triangles_(std::move(triangles)),
          boundary_(std::move(boundary)),
          level_(level) {
        areas_.reserve(triangles_.size());
        for (std::size_t t = 0; t < triangles_.size(); ++t) {
            const auto& tri = triangles_[t];
            for (Index v : tri) {
                if (v < 0 || static_cast<std::size_t>(v) >= vertices_.size()) {
                    throw ValidationError("triangle " + std::to_string(t) +
                                          " references a missing vertex");
                }
            }
            const Point a = vertices_[tri[0]], b = vertices_[tri[1]], c = vertices_[tri[2]];
            const double area = signed_area(a, b, c);
            if (!(area > 0.0)) {
                throw ValidationError("triangle " + std::to_string(t) +
                                      " is degenerate or clockwise");
            }
            areas_.push_back(area);
            h_ = std::max({h_, distance(a, b), distance(b, c), distance(c, a)});
        }
    }

    std::size_t num_vertices() const { return vertices_.size(); }
    std::size_t num_triangles() const { return triangles_.size(); }
    const std::vector<Point>& vertices() const { return vertices_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_; }
    const Point& vertex(Index i) const { return vertices_[i]; }
    const Triangle& triangle(Index t) const { return triangles_[t]; }
    double area(Index t) const { return areas_[t]; }
    const std::vector<double>& areas() const { return areas_; }
    int level() const { return level_; }
    /// Longest triangle diameter.
    double h() const { return h_; }

    std::array<Point, 3> corners(Index t) const {
        const auto& tri = triangles_[t];
        return {vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]};
    }

    /// Smallest triangle diameter; together with h() it measures quasi-uniformity.
    double min_diameter() const {
        double d = std::numeric_limits<double>::infinity();
        for (Index t = 0; t < static_cast<Index>(triangles_.size()); ++t) {
            const auto p = corners(t);
            d = std::min(d, std::max({distance(p[0], p[1]), distance(p[1], p[2]),
                                      distance(p[2], p[0])}));
        }
        return d;
    }

    double total_area() const {
        double s = 0.0;
        for (double a : areas_) s += a;
        return s;
    }

    double boundary_length() const {
        double s = 0.0;
        for (const auto& e : boundary_) s += distance(vertices_[e.vertices[0]], vertices_[e.vertices[1]]);
        return s;
    }

private:
    std::vector<Point> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<BoundaryEdge> boundary_;
    std::vector<double> areas_;
    int level_ = 0;
    double h_ = 0.0;
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// Child node expressed as a convex combination of at most two parent nodes.
struct NodeStencil {
    std::array<Index, 2> parents{0, 0};
    std::array<double, 2> weights{1.0, 0.0};
    int count = 1;
};

/// Maps data on a parent mesh onto its red refinement.
struct ProlongationMap {
    MeshPtr parent;
    MeshPtr child;
    std::vector<NodeStencil> node_map;  // child vertex -> parent stencil
    std::vector<Index> element_map;     // child triangle -> parent triangle

    template <class Vec>
    Vec prolong_nodal(const Vec& parent_values) const {
        Vec out(node_map.size());
        for (std::size_t i = 0; i < node_map.size(); ++i) {
            const auto& s = node_map[i];
            double v = s.weights[0] * parent_values[s.parents[0]];
            if (s.count == 2) v += s.weights[1] * parent_values[s.parents[1]];
            out[i] = v;
        }
        return out;
    }

    template <class Vec>
    Vec prolong_elementwise(const Vec& parent_values) const {
        Vec out(element_map.size());
        for (std::size_t t = 0; t < element_map.size(); ++t) out[t] = parent_values[element_map[t]];
        return out;
    }
};

/// Structured mesh of (0,1)^2 with 4^level subsquares, each cut along the
/// lower-left to upper-right diagonal. Vertices are numbered row by row.
inline MeshPtr build_unit_square_mesh(int level) {
    if (level < 0) throw ValidationError("mesh level must be nonnegative");
    if (level > 30) throw SizeError("mesh level " + std::to_string(level) + " overflows the index type");
    const std::int64_t n = std::int64_t{1} << level;
    const std::int64_t nv = (n + 1) * (n + 1);
    const std::int64_t nt = 2 * n * n;
    constexpr std::int64_t max_index = std::numeric_limits<Index>::max();
    if (nv > max_index || nt > max_index) {
        throw SizeError("mesh level " + std::to_string(level) + " overflows the index type");
    }

    std::vector<Point> vertices;
    vertices.reserve(static_cast<std::size_t>(nv));
    for (std::int64_t r = 0; r <= n; ++r) {
        for (std::int64_t c = 0; c <= n; ++c) {
            vertices.push_back({static_cast<double>(c) / static_cast<double>(n),
                                static_cast<double>(r) / static_cast<double>(n)});
        }
    }
    auto id = [n](std::int64_t r, std::int64_t c) { return static_cast<Index>(r * (n + 1) + c); };

    std::vector<Triangle> triangles;
    triangles.reserve(static_cast<std::size_t>(nt));
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < n; ++c) {
            const Index v00 = id(r, c), v10 = id(r, c + 1), v01 = id(r + 1, c), v11 = id(r + 1, c + 1);
            triangles.push_back({v00, v10, v11});
            triangles.push_back({v00, v11, v01});
        }
    }

    // Triangle index of the subsquare (r, c): lower = 2*(r*n+c), upper = lower+1.
    auto lower = [n](std::int64_t r, std::int64_t c) { return static_cast<Index>(2 * (r * n + c)); };
    std::vector<BoundaryEdge> boundary;
    boundary.reserve(static_cast<std::size_t>(4 * n));
    for (std::int64_t c = 0; c < n; ++c) boundary.push_back({{id(0, c), id(0, c + 1)}, lower(0, c), 0});
    for (std::int64_t r = 0; r < n; ++r) boundary.push_back({{id(r, n), id(r + 1, n)}, lower(r, n - 1), 0});
    for (std::int64_t c = n; c > 0; --c) boundary.push_back({{id(n, c), id(n, c - 1)}, lower(n - 1, c - 1) + 1, 0});
    for (std::int64_t r = n; r > 0; --r) boundary.push_back({{id(r, 0), id(r - 1, 0)}, lower(r - 1, 0) + 1, 0});

    return std::make_shared<const Mesh>(std::move(vertices), std::move(triangles), std::move(boundary), level);
}

/// Red refinement: every triangle is split into four congruent children
/// through its edge midpoints. Parent vertices keep their numbers; midpoints
/// follow in order of first appearance.
inline std::pair<MeshPtr, ProlongationMap> refine(const MeshPtr& mesh) {
    const auto& pv = mesh->vertices();
    const std::int64_t nt_child = 4 * static_cast<std::int64_t>(mesh->num_triangles());
    if (nt_child > std::numeric_limits<Index>::max()) throw SizeError("refined mesh overflows the index type");

    std::vector<Point> vertices = pv;
    std::vector<NodeStencil> node_map(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) node_map[i] = {{static_cast<Index>(i), 0}, {1.0, 0.0}, 1};

    std::map<std::pair<Index, Index>, Index> midpoint;
    auto mid = [&](Index a, Index b) {
        const auto key = std::minmax(a, b);
        auto [it, inserted] = midpoint.try_emplace({key.first, key.second}, static_cast<Index>(vertices.size()));
        if (inserted) {
            if (vertices.size() >= static_cast<std::size_t>(std::numeric_limits<Index>::max())) {
                throw SizeError("refined mesh overflows the index type");
            }
            vertices.push_back(0.5 * (pv[a] + pv[b]));
            node_map.push_back({{key.first, key.second}, {0.5, 0.5}, 2});
        }
        return it->second;
    };

    std::vector<Triangle> triangles;
    std::vector<Index> element_map;
    triangles.reserve(static_cast<std::size_t>(nt_child));
    element_map.reserve(static_cast<std::size_t>(nt_child));
    for (Index t = 0; t < static_cast<Index>(mesh->num_triangles()); ++t) {
        const auto [v0, v1, v2] = mesh->triangle(t);
        const Index m01 = mid(v0, v1), m12 = mid(v1, v2), m20 = mid(v2, v0);
        triangles.push_back({v0, m01, m20});
        triangles.push_back({m01, v1, m12});
        triangles.push_back({m20, m12, v2});
        triangles.push_back({m01, m12, m20});
        element_map.insert(element_map.end(), 4, t);
    }

    // Child k of parent t sits at 4t+k; corner child i touches parent vertex i.
    std::vector<BoundaryEdge> boundary;
    boundary.reserve(2 * mesh->boundary_edges().size());
    for (const auto& e : mesh->boundary_edges()) {
        const auto& tri = mesh->triangle(e.triangle);
        auto local = [&](Index v) {
            return static_cast<Index>(std::find(tri.begin(), tri.end(), v) - tri.begin());
        };
        const Index m = mid(e.vertices[0], e.vertices[1]);
        boundary.push_back({{e.vertices[0], m}, 4 * e.triangle + local(e.vertices[0]), e.marker});
        boundary.push_back({{m, e.vertices[1]}, 4 * e.triangle + local(e.vertices[1]), e.marker});
    }

    auto child = std::make_shared<const Mesh>(std::move(vertices), std::move(triangles), std::move(boundary),
                                              mesh->level() + 1);
    ProlongationMap map{mesh, child, std::move(node_map), std::move(element_map)};
    return {child, std::move(map)};
}

inline Point barycenter(const Mesh& mesh, Index t) {
    const auto p = mesh.corners(t);
    return {(p[0].x + p[1].x + p[2].x) / 3.0, (p[0].y + p[1].y + p[2].y) / 3.0};
}

inline std::vector<Point> barycenters(const Mesh& mesh) {
    std::vector<Point> out;
    out.reserve(mesh.num_triangles());
    for (Index t = 0; t < static_cast<Index>(mesh.num_triangles()); ++t) out.push_back(barycenter(mesh, t));
    return out;
}

/// Barycentric coordinates of p with respect to triangle t.
inline std::array<double, 3> barycentric(const Mesh& mesh, Index t, Point p) {
    const auto c = mesh.corners(t);
    const double area = mesh.area(t);
    const double l0 = signed_area(p, c[1], c[2]) / area;
    const double l1 = signed_area(c[0], p, c[2]) / area;
    return {l0, l1, 1.0 - l0 - l1};
}

/// Bucket-grid point location over an arbitrary mesh.
class PointLocator {
public:
    explicit PointLocator(MeshPtr mesh) : mesh_(std::move(mesh)) {
        const auto& v = mesh_->vertices();
        lo_ = hi_ = v.front();
        for (const auto& p : v) {
            lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y)};
            hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y)};
        }
        cells_ = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::sqrt(double(mesh_->num_triangles()) / 2.0)));
        buckets_.resize(static_cast<std::size_t>(cells_ * cells_));
        for (Index t = 0; t < static_cast<Index>(mesh_->num_triangles()); ++t) {
            const auto c = mesh_->corners(t);
            const auto [i0, j0] = cell_of({std::min({c[0].x, c[1].x, c[2].x}), std::min({c[0].y, c[1].y, c[2].y})});
            const auto [i1, j1] = cell_of({std::max({c[0].x, c[1].x, c[2].x}), std::max({c[0].y, c[1].y, c[2].y})});
            for (auto j = j0; j <= j1; ++j)
                for (auto i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j * cells_ + i)].push_back(t);
        }
    }

    struct Location {
        Index triangle;
        std::array<double, 3> lambda;
    };

    /// Triangle containing p (closed, with a small tolerance) and barycentric
    /// coordinates; nullopt outside the mesh.
    std::optional<Location> locate(Point p, double tol = 1e-12) const {
        const auto [i, j] = cell_of(p);
        for (Index t : buckets_[static_cast<std::size_t>(j * cells_ + i)]) {
            auto l = barycentric(*mesh_, t, p);
            if (l[0] >= -tol && l[1] >= -tol && l[2] >= -tol) return Location{t, l};
        }
        return std::nullopt;
    }

    const MeshPtr& mesh() const { return mesh_; }

private:
    std::pair<std::int64_t, std::int64_t> cell_of(Point p) const {
        auto idx = [&](double v, double lo, double hi) {
            const double s = (hi > lo) ? (v - lo) / (hi - lo) : 0.0;
            return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(s * double(cells_))), 0, cells_ - 1);
        };
        return {idx(p.x, lo_.x, hi_.x), idx(p.y, lo_.y, hi_.y)};
    }

    MeshPtr mesh_;
    Point lo_, hi_;
    std::int64_t cells_ = 1;
    std::vector<std::vector<Index>> buckets_;
};

/// Plain-text dump: header `nv nt ne`, then vertices, triangles and
/// boundary edges (`v0 v1 triangle marker`), one per line.
inline void write_mesh(std::ostream& os, const Mesh& mesh) {
    os << mesh.num_vertices() << ' ' << mesh.num_triangles() << ' ' << mesh.boundary_edges().size() << '\n';
    const auto old = os.precision(17);
    for (const auto& p : mesh.vertices()) os << p.x << ' ' << p.y << '\n';
    for (const auto& t : mesh.triangles()) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    for (const auto& e : mesh.boundary_edges())
        os << e.vertices[0] << ' ' << e.vertices[1] << ' ' << e.triangle << ' ' << e.marker << '\n';
    os.precision(old);
}

inline MeshPtr read_mesh(std::istream& is, int level = 0) {
    std::size_t nv = 0, nt = 0, ne = 0;
    if (!(is >> nv >> nt >> ne)) throw ValidationError("mesh dump: bad header");
    std::vector<Point> vertices(nv);
    std::vector<Triangle> triangles(nt);
    std::vector<BoundaryEdge> boundary(ne);
    for (auto& p : vertices) is >> p.x >> p.y;
    for (auto& t : triangles) is >> t[0] >> t[1] >> t[2];
    for (auto& e : boundary) is >> e.vertices[0] >> e.vertices[1] >> e.triangle >> e.marker;
    if (!is) throw ValidationError("mesh dump: truncated body");
    return std::make_shared<const Mesh>(std::move(vertices), std::move(triangles), std::move(boundary), level);
}

}  // namespace ocfem
