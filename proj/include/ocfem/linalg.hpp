#pragma once

// Symmetric sparse operators and SPD solves. Storage and the direct
// factorization are Eigen's; the preconditioned CG path is self-contained.

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ocfem/errors.hpp"

namespace ocfem {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw ValidationError("axpy: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

struct Entry {
    int row;
    int col;
    double value;
};

/// Assembled symmetric sparse matrix (compressed row storage).
class SparseSymOperator {
public:
    using Storage = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

    SparseSymOperator() = default;

    /// Duplicate entries are summed in input order. With `check_symmetry`
    /// the assembled values must satisfy |A_ij - A_ji| <= 1e-14 max|A|.
    SparseSymOperator(int n, const std::vector<Entry>& entries, bool check_symmetry = true) : n_(n) {
        std::vector<Eigen::Triplet<double, int>> trip;
        trip.reserve(entries.size());
        for (const auto& e : entries) {
            if (e.row < 0 || e.row >= n || e.col < 0 || e.col >= n) throw ValidationError("entry out of range");
            trip.emplace_back(e.row, e.col, e.value);
        }
        a_.resize(n, n);
        a_.setFromTriplets(trip.begin(), trip.end());
        a_.makeCompressed();
        if (check_symmetry) {
            Storage t = a_.transpose();
            const double scale = max_abs();
            Storage diff = a_ - t;
            for (int k = 0; k < diff.outerSize(); ++k)
                for (Storage::InnerIterator it(diff, k); it; ++it)
                    if (std::abs(it.value()) > 1e-14 * scale) throw ValidationError("operator is not symmetric");
            symmetric_ = true;
        }
    }

    explicit SparseSymOperator(Storage a) : n_(static_cast<int>(a.rows())), a_(std::move(a)) { a_.makeCompressed(); }

    int size() const { return n_; }
    long nonzeros() const { return a_.nonZeros(); }
    bool symmetric() const { return symmetric_; }
    const Storage& storage() const { return a_; }

    double max_abs() const {
        double m = 0.0;
        for (int k = 0; k < a_.nonZeros(); ++k) m = std::max(m, std::abs(a_.valuePtr()[k]));
        return m;
    }

    double coeff(int i, int j) const { return a_.coeff(i, j); }

    /// Sequential row-ordered product.
    Vector matvec(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != n_) throw ValidationError("matvec: dimension mismatch");
        Vector y(n_, 0.0);
        const int* outer = a_.outerIndexPtr();
        const int* inner = a_.innerIndexPtr();
        const double* val = a_.valuePtr();
        for (int i = 0; i < n_; ++i) {
            double s = 0.0;
            for (int k = outer[i]; k < outer[i + 1]; ++k) s += val[k] * x[inner[k]];
            y[i] = s;
        }
        return y;
    }

    /// x^T A y
    double form(std::span<const double> x, std::span<const double> y) const { return dot(x, matvec(y)); }

    SparseSymOperator operator+(const SparseSymOperator& other) const {
        if (other.n_ != n_) throw ValidationError("operator sum: dimension mismatch");
        SparseSymOperator out(Storage(a_ + other.a_));
        out.symmetric_ = symmetric_ && other.symmetric_;
        return out;
    }

    Vector diagonal() const {
        Vector d(n_, 0.0);
        for (int i = 0; i < n_; ++i) d[i] = a_.coeff(i, i);
        return d;
    }

private:
    int n_ = 0;
    Storage a_;
    bool symmetric_ = false;
};

/// Sparse LDL^T factorization of an SPD operator, reusable across solves.
class SpdFactorization {
public:
    explicit SpdFactorization(const SparseSymOperator& a) : a_(&a) {
        if (a.size() == 0) return;
        ColMajor cm = a.storage();
        ldlt_ = std::make_shared<Eigen::SimplicialLDLT<ColMajor>>(cm);
        if (ldlt_->info() != Eigen::Success) throw CoercivityError("LDL^T factorization failed");
        const auto d = ldlt_->vectorD();
        if (d.size() > 0 && !(d.minCoeff() > 0.0)) {
            throw CoercivityError("operator is not positive definite (min pivot " + std::to_string(d.minCoeff()) +
                                  "); the reaction coefficient violates coercivity");
        }
    }

    /// Solve with up to two steps of iterative refinement toward `tol`.
    Vector solve(std::span<const double> b, double tol = 1e-12) const {
        const int n = a_->size();
        if (static_cast<int>(b.size()) != n) throw ValidationError("solve: dimension mismatch");
        if (n == 0) return {};
        Eigen::Map<const Eigen::VectorXd> bb(b.data(), n);
        Eigen::VectorXd x = ldlt_->solve(bb);
        const double bnorm = bb.norm();
        for (int it = 0; it < 2; ++it) {
            Eigen::VectorXd r = bb - a_->storage() * x;
            if (r.norm() <= tol * bnorm) break;
            x += ldlt_->solve(r);
        }
        return Vector(x.data(), x.data() + n);
    }

    const SparseSymOperator& op() const { return *a_; }

private:
    using ColMajor = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
    const SparseSymOperator* a_;
    std::shared_ptr<Eigen::SimplicialLDLT<ColMajor>> ldlt_;
};

enum class LinearSolver { direct, cg };

/// Jacobi-preconditioned conjugate gradients. Throws CoercivityError on a
/// nonpositive curvature direction and SolverError when maxit is exhausted.
inline Vector solve_cg(const SparseSymOperator& a, std::span<const double> b, double tol = 1e-12,
                       int maxit = 0) {
    const int n = a.size();
    if (static_cast<int>(b.size()) != n) throw ValidationError("solve: dimension mismatch");
    if (maxit <= 0) maxit = std::max(100, 10 * n);
    const Vector diag = a.diagonal();
    for (double d : diag)
        if (!(d > 0.0)) throw CoercivityError("nonpositive diagonal entry");

    Vector x(n, 0.0), r(b.begin(), b.end()), z(n), p(n);
    const double bnorm = norm2(b);
    std::vector<double> history{norm2(r)};
    if (bnorm == 0.0) return x;
    for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    p = z;
    double rz = dot(r, z);
    for (int k = 0; k < maxit; ++k) {
        const Vector ap = a.matvec(p);
        const double pap = dot(p, ap);
        if (!(pap > 0.0)) throw CoercivityError("CG: operator is not positive definite", history);
        const double step = rz / pap;
        axpy(step, p, x);
        axpy(-step, ap, r);
        history.push_back(norm2(r));
        if (history.back() <= tol * bnorm) return x;
        for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    throw SolverError("CG: no convergence within " + std::to_string(maxit) + " iterations", history);
}

/// Returns x with ||Ax - b|| <= tol ||b||.
inline Vector solve_spd(const SparseSymOperator& a, std::span<const double> b, double tol = 1e-12,
                        LinearSolver method = LinearSolver::direct) {
    Vector x = method == LinearSolver::direct ? SpdFactorization(a).solve(b, tol) : solve_cg(a, b, tol);
    Vector r = a.matvec(x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
    const double res = norm2(r), bn = norm2(b);
    if (res > tol * bn) {
        throw SolverError("SPD solve missed tolerance: relative residual " + std::to_string(res / bn),
                          {res / bn});
    }
    return x;
}

}  // namespace ocfem
