#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "ocfem/mesh.hpp"
#include "oracles.hpp"

using namespace ocfem;

namespace {

using Key = std::pair<long long, long long>;

Key key(Point p) { return {std::llround(p.x * (1 << 20)), std::llround(p.y * (1 << 20))}; }

/// Triangles as sorted vertex-coordinate triples: independent of numbering.
std::set<std::array<Key, 3>> canonical(const Mesh& m) {
    std::set<std::array<Key, 3>> out;
    for (Index t = 0; t < static_cast<Index>(m.num_triangles()); ++t) {
        const auto c = m.corners(t);
        std::array<Key, 3> k{key(c[0]), key(c[1]), key(c[2])};
        std::sort(k.begin(), k.end());
        out.insert(k);
    }
    return out;
}

}  // namespace

TEST(Mesh, Level3Counts) {
    const auto m = build_unit_square_mesh(3);
    EXPECT_EQ(m->num_vertices(), 81u);
    EXPECT_EQ(m->num_triangles(), 128u);
    EXPECT_NEAR(m->h(), std::sqrt(2.0) / 8.0, 1e-15);
}

TEST(Mesh, Level0Counts) {
    const auto m = build_unit_square_mesh(0);
    EXPECT_EQ(m->num_vertices(), 4u);
    EXPECT_EQ(m->num_triangles(), 2u);
    EXPECT_NEAR(m->h(), std::sqrt(2.0), 1e-15);
}

TEST(Mesh, CountsAndDiameterFollowLevelFormula) {
    for (int j = 0; j <= 6; ++j) {
        const auto m = build_unit_square_mesh(j);
        const std::size_t n = (1u << j) + 1;
        EXPECT_EQ(m->num_vertices(), n * n);
        EXPECT_EQ(m->num_triangles(), 2u << (2 * j));
        EXPECT_NEAR(m->h(), std::ldexp(std::sqrt(2.0), -j), 1e-15);
        EXPECT_DOUBLE_EQ(m->h(), m->min_diameter());
    }
}

TEST(Mesh, TotalAreaLevel5) { EXPECT_NEAR(build_unit_square_mesh(5)->total_area(), 1.0, 1e-12); }

TEST(Mesh, PositiveAreasAndEulerFormula) {
    for (int j = 0; j <= 5; ++j) {
        const auto m = build_unit_square_mesh(j);
        for (Index t = 0; t < static_cast<Index>(m->num_triangles()); ++t) EXPECT_GT(m->area(t), 0.0);
        std::set<std::pair<Index, Index>> edges;
        for (const auto& tri : m->triangles())
            for (int k = 0; k < 3; ++k) edges.insert(std::minmax(tri[k], tri[(k + 1) % 3]));
        // V - E + F = 1 for a simply connected planar triangulation.
        EXPECT_EQ(static_cast<long>(m->num_vertices()) - static_cast<long>(edges.size()) +
                      static_cast<long>(m->num_triangles()),
                  1);
    }
}

TEST(Mesh, ConformingEdgesSharedByAtMostTwo) {
    const auto m = build_unit_square_mesh(4);
    std::map<std::pair<Index, Index>, int> count;
    for (const auto& tri : m->triangles())
        for (int k = 0; k < 3; ++k) ++count[std::minmax(tri[k], tri[(k + 1) % 3])];
    std::size_t boundary = 0;
    for (const auto& [e, c] : count) {
        EXPECT_LE(c, 2);
        if (c == 1) ++boundary;
    }
    EXPECT_EQ(boundary, m->boundary_edges().size());
    EXPECT_NEAR(m->boundary_length(), 4.0, 1e-14);
}

TEST(Mesh, BoundaryEdgesBelongToTheirTriangle) {
    const auto m = build_unit_square_mesh(3);
    for (const auto& e : m->boundary_edges()) {
        const auto& tri = m->triangle(e.triangle);
        for (Index v : e.vertices) EXPECT_NE(std::find(tri.begin(), tri.end(), v), tri.end());
        const Point a = m->vertex(e.vertices[0]), b = m->vertex(e.vertices[1]);
        const bool on_boundary = (a.x == b.x && (a.x == 0.0 || a.x == 1.0)) || (a.y == b.y && (a.y == 0.0 || a.y == 1.0));
        EXPECT_TRUE(on_boundary);
    }
}

TEST(Mesh, RefineMatchesDirectConstruction) {
    const auto [fine, map] = refine(build_unit_square_mesh(3));
    const auto direct = build_unit_square_mesh(4);
    EXPECT_EQ(fine->level(), 4);
    EXPECT_EQ(fine->num_vertices(), direct->num_vertices());
    EXPECT_EQ(canonical(*fine), canonical(*direct));
    EXPECT_DOUBLE_EQ(fine->h(), direct->h());
    EXPECT_NEAR(fine->boundary_length(), 4.0, 1e-14);
    EXPECT_EQ(fine->boundary_edges().size(), direct->boundary_edges().size());
}

TEST(Mesh, RefineTwiceMatchesLevel2) {
    auto [m1, map1] = refine(build_unit_square_mesh(0));
    auto [m2, map2] = refine(m1);
    EXPECT_EQ(canonical(*m2), canonical(*build_unit_square_mesh(2)));
}

TEST(Mesh, NestednessChildInsideParent) {
    const auto coarse = build_unit_square_mesh(2);
    const auto [fine, map] = refine(coarse);
    ASSERT_EQ(map.element_map.size(), fine->num_triangles());
    for (Index t = 0; t < static_cast<Index>(fine->num_triangles()); ++t) {
        const Index parent = map.element_map[t];
        for (const Point& p : fine->corners(t)) {
            const auto l = barycentric(*coarse, parent, p);
            for (double li : l) EXPECT_GE(li, -1e-14);
        }
        EXPECT_NEAR(fine->area(t), coarse->area(parent) / 4.0, 1e-16);
    }
}

TEST(Mesh, P1ProlongationIsExact) {
    const auto coarse = build_unit_square_mesh(3);
    const auto [fine, map] = refine(coarse);
    std::vector<double> x1(coarse->num_vertices());
    for (std::size_t i = 0; i < x1.size(); ++i) x1[i] = coarse->vertex(static_cast<Index>(i)).x;
    const auto fx = map.prolong_nodal(x1);
    for (std::size_t i = 0; i < fx.size(); ++i) EXPECT_DOUBLE_EQ(fx[i], fine->vertex(static_cast<Index>(i)).x);

    // A nonaffine P1 field: values at the child nodes are the parent's
    // interpolant evaluated there.
    const auto v = oracle::random_vector(coarse->num_vertices(), 7);
    const auto fv = map.prolong_nodal(v);
    for (Index t = 0; t < static_cast<Index>(fine->num_triangles()); ++t) {
        const Index parent = map.element_map[t];
        const auto& ptri = coarse->triangle(parent);
        for (Index node : fine->triangle(t)) {
            const auto l = barycentric(*coarse, parent, fine->vertex(node));
            const double expected = l[0] * v[ptri[0]] + l[1] * v[ptri[1]] + l[2] * v[ptri[2]];
            EXPECT_NEAR(fv[node], expected, 1e-14);
        }
    }
}

TEST(Mesh, P0ProlongationIsInjection) {
    const auto coarse = build_unit_square_mesh(3);
    const auto [fine, map] = refine(coarse);
    const auto v = oracle::random_vector(coarse->num_triangles(), 11);
    const auto fv = map.prolong_elementwise(v);
    std::vector<double> back(coarse->num_triangles());
    for (std::size_t t = 0; t < fv.size(); ++t) back[map.element_map[t]] = fv[t];
    EXPECT_EQ(back, v);
}

TEST(Mesh, BarycenterOfReferenceTriangle) {
    const Mesh m({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}, {}, 0);
    const Point b = barycenter(m, 0);
    EXPECT_DOUBLE_EQ(b.x, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(b.y, 1.0 / 3.0);
}

TEST(Mesh, Level0BarycentersInsideTheirTriangles) {
    const auto m = build_unit_square_mesh(0);
    const auto bs = barycenters(*m);
    ASSERT_EQ(bs.size(), 2u);
    for (Index t = 0; t < 2; ++t)
        for (double l : barycentric(*m, t, bs[t])) EXPECT_GT(l, 0.0);
}

TEST(Mesh, AreaWeightedBarycenterIsCentroid) {
    const auto m = build_unit_square_mesh(4);
    Point c{};
    for (Index t = 0; t < static_cast<Index>(m->num_triangles()); ++t) c = c + m->area(t) * barycenter(*m, t);
    EXPECT_NEAR(c.x, 0.5, 1e-14);
    EXPECT_NEAR(c.y, 0.5, 1e-14);
}

TEST(Mesh, LocatorFindsContainingTriangle) {
    const auto m = build_unit_square_mesh(4);
    const PointLocator loc(m);
    for (const Point p : {Point{0.3, 0.7}, Point{0.0, 0.0}, Point{1.0, 1.0}, Point{0.123, 0.999}}) {
        const auto l = loc.locate(p);
        ASSERT_TRUE(l.has_value());
        const auto c = m->corners(l->triangle);
        const Point back = l->lambda[0] * c[0] + l->lambda[1] * c[1] + l->lambda[2] * c[2];
        EXPECT_NEAR(back.x, p.x, 1e-14);
        EXPECT_NEAR(back.y, p.y, 1e-14);
    }
    EXPECT_FALSE(loc.locate({1.5, 0.5}).has_value());
}

TEST(Mesh, RejectsInvalidInput) {
    EXPECT_THROW(build_unit_square_mesh(-1), ValidationError);
    EXPECT_THROW(build_unit_square_mesh(40), SizeError);
    EXPECT_THROW(Mesh({{0, 0}, {1, 0}, {0, 1}}, {{0, 2, 1}}, {}, 0), ValidationError);
    EXPECT_THROW(Mesh({{0, 0}, {1, 0}, {2, 0}}, {{0, 1, 2}}, {}, 0), ValidationError);
    EXPECT_THROW(Mesh({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 3}}, {}, 0), ValidationError);
}

TEST(Mesh, WriteReadRoundTrip) {
    const auto m = build_unit_square_mesh(2);
    std::stringstream s;
    write_mesh(s, *m);
    const auto back = read_mesh(s, 2);
    EXPECT_EQ(back->vertices(), m->vertices());
    EXPECT_EQ(back->triangles(), m->triangles());
    EXPECT_EQ(back->boundary_edges().size(), m->boundary_edges().size());
}
