#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ocfem/errors.hpp"

namespace ocfem {

/// Rule on the reference triangle in barycentric coordinates. Weights are
/// normalized to sum to one, so a physical integral is |T| * sum w_q f(x_q).
struct QuadratureRule {
    std::vector<std::array<double, 3>> points;
    std::vector<double> weights;
    int degree = 0;

    std::size_t size() const { return weights.size(); }
};

namespace detail {

inline void add_orbit_center(QuadratureRule& r, double w) {
    r.points.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    r.weights.push_back(w);
}

// (a, a, 1-2a) and its permutations.
inline void add_orbit_aab(QuadratureRule& r, double a, double w) {
    const double b = 1.0 - 2.0 * a;
    r.points.push_back({a, a, b});
    r.points.push_back({a, b, a});
    r.points.push_back({b, a, a});
    r.weights.insert(r.weights.end(), 3, w);
}

// All six permutations of (a, b, 1-a-b).
inline void add_orbit_abc(QuadratureRule& r, double a, double b, double w) {
    const double c = 1.0 - a - b;
    for (const auto& p : {std::array{a, b, c}, std::array{a, c, b}, std::array{b, a, c}, std::array{b, c, a},
                          std::array{c, a, b}, std::array{c, b, a}}) {
        r.points.push_back(p);
        r.weights.push_back(w);
    }
}

}  // namespace detail

/// Symmetric Dunavant rules of degree 1, 2, 4 and 6.
inline QuadratureRule triangle_rule(int degree) {
    QuadratureRule r;
    if (degree <= 1) {
        detail::add_orbit_center(r, 1.0);
        r.degree = 1;
    } else if (degree == 2) {
        detail::add_orbit_aab(r, 1.0 / 6.0, 1.0 / 3.0);
        r.degree = 2;
    } else if (degree <= 4) {
        detail::add_orbit_aab(r, 0.445948490915964886, 0.223381589678011466);
        detail::add_orbit_aab(r, 0.091576213509770743, 0.109951743655321868);
        r.degree = 4;
    } else if (degree <= 6) {
        detail::add_orbit_aab(r, 0.249286745170910421, 0.116786275726379366);
        detail::add_orbit_aab(r, 0.063089014491502228, 0.050844906370206817);
        detail::add_orbit_abc(r, 0.053145049844816947, 0.310352451033784405, 0.082851075618373575);
        r.degree = 6;
    } else {
        throw ValidationError("no triangle rule of degree " + std::to_string(degree));
    }
    return r;
}

/// Gauss-Legendre rule on [0,1]: `points` holds the parameter t in slot 0.
inline QuadratureRule gauss_line_rule() {
    QuadratureRule r;
    const double s = 0.5 * std::sqrt(0.6);
    r.points = {{0.5 - s, 0.0, 0.0}, {0.5, 0.0, 0.0}, {0.5 + s, 0.0, 0.0}};
    r.weights = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    r.degree = 5;
    return r;
}

}  // namespace ocfem
