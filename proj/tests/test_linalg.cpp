#include <gtest/gtest.h>

#include <random>

#include "ocfem/linalg.hpp"
#include "oracles.hpp"

using namespace ocfem;

namespace {

SparseSymOperator identity(int n) {
    std::vector<Entry> e;
    for (int i = 0; i < n; ++i) e.push_back({i, i, 1.0});
    return {n, e};
}

/// Random sparse SPD matrix: a banded symmetric pattern with diagonal dominance.
oracle::Dense random_spd(int n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    oracle::Dense a(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < std::min(n, i + 5); ++j) {
            const double v = d(gen);
            a[i][j] = a[j][i] = v;
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::abs(a[i][j]);
        a[i][i] = s + 0.5 + std::abs(d(gen));
    }
    return a;
}

SparseSymOperator to_sparse(const oracle::Dense& a) {
    std::vector<Entry> e;
    for (int i = 0; i < static_cast<int>(a.size()); ++i)
        for (int j = 0; j < static_cast<int>(a.size()); ++j)
            if (a[i][j] != 0.0) e.push_back({i, j, a[i][j]});
    return {static_cast<int>(a.size()), e};
}

}  // namespace

TEST(Linalg, IdentitySolve) {
    const auto a = identity(5);
    const Vector b{1.0, -2.0, 3.5, 0.0, 7.0};
    EXPECT_EQ(solve_spd(a, b), b);
    const auto x = solve_spd(a, b, 1e-12, LinearSolver::cg);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(x[i], b[i], 1e-14);
}

TEST(Linalg, TwoByTwo) {
    const SparseSymOperator a(2, {{0, 0, 2.0}, {0, 1, 1.0}, {1, 0, 1.0}, {1, 1, 2.0}});
    for (auto method : {LinearSolver::direct, LinearSolver::cg}) {
        const auto x = solve_spd(a, Vector{3.0, 3.0}, 1e-14, method);
        EXPECT_NEAR(x[0], 1.0, 1e-14);
        EXPECT_NEAR(x[1], 1.0, 1e-14);
    }
}

TEST(Linalg, Random50AgainstDenseOracle) {
    const auto dense = random_spd(50, 3);
    const auto a = to_sparse(dense);
    const auto b = oracle::random_vector(50, 5);
    const auto ref = oracle::dense_solve(dense, b);
    for (auto method : {LinearSolver::direct, LinearSolver::cg}) {
        const auto x = solve_spd(a, b, 1e-12, method);
        auto r = oracle::dense_matvec(dense, x);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
        EXPECT_LE(norm2(r) / norm2(b), 1e-12);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], ref[i], 1e-10);
    }
}

TEST(Linalg, MatvecAgainstDenseOracle) {
    const auto dense = random_spd(30, 9);
    const auto a = to_sparse(dense);
    const auto x = oracle::random_vector(30, 10);
    const auto ref = oracle::dense_matvec(dense, x);
    const auto y = a.matvec(x);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-13);
    EXPECT_EQ(a.matvec(Vector(30, 0.0)), Vector(30, 0.0));
    EXPECT_EQ(identity(4).matvec(Vector{1, 2, 3, 4}), (Vector{1, 2, 3, 4}));
}

TEST(Linalg, MatvecIsLinear) {
    const auto a = to_sparse(random_spd(20, 1));
    const auto x = oracle::random_vector(20, 2), y = oracle::random_vector(20, 3);
    Vector z(20);
    for (int i = 0; i < 20; ++i) z[i] = 2.5 * x[i] - 0.75 * y[i];
    const auto ax = a.matvec(x), ay = a.matvec(y), az = a.matvec(z);
    for (int i = 0; i < 20; ++i) EXPECT_NEAR(az[i], 2.5 * ax[i] - 0.75 * ay[i], 1e-13);
}

TEST(Linalg, DuplicateEntriesAreSummed) {
    const SparseSymOperator a(2, {{0, 0, 1.0}, {0, 0, 1.0}, {1, 1, 3.0}});
    EXPECT_DOUBLE_EQ(a.coeff(0, 0), 2.0);
    EXPECT_EQ(a.nonzeros(), 2);
}

TEST(Linalg, AsymmetricInputRejected) {
    EXPECT_THROW(SparseSymOperator(2, {{0, 0, 1.0}, {0, 1, 1.0}, {1, 1, 1.0}}), ValidationError);
}

TEST(Linalg, IndefiniteOperatorRaisesCoercivityError) {
    const SparseSymOperator a(2, {{0, 0, 1.0}, {1, 1, -1.0}});
    EXPECT_THROW(SpdFactorization{a}, CoercivityError);
    EXPECT_THROW(solve_cg(a, Vector{0.0, 1.0}), CoercivityError);
    const SparseSymOperator b(2, {{0, 0, 1.0}, {0, 1, 2.0}, {1, 0, 2.0}, {1, 1, 1.0}});
    EXPECT_THROW(SpdFactorization{b}, CoercivityError);
}

TEST(Linalg, CgExhaustionRaisesSolverError) {
    const auto a = to_sparse(random_spd(50, 4));
    EXPECT_THROW(solve_cg(a, oracle::random_vector(50, 1), 1e-15, 2), SolverError);
}

TEST(Linalg, SumOfOperators) {
    const auto a = identity(3), b = identity(3);
    const auto c = a + b;
    EXPECT_DOUBLE_EQ(c.coeff(1, 1), 2.0);
    EXPECT_EQ(c.diagonal(), (Vector{2, 2, 2}));
}
