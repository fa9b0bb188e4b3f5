#include "kfc/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "kfc/errors.hpp"

namespace kfc::linalg {

namespace {

void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw ValidationError(std::string("non-finite entries in ") + what);
}

// Fixed phase convention: the largest-magnitude entry of each column is made
// real and positive, columns are unit norm. Makes the decomposition a pure
// function of the input matrix.
void normalize_column(Eigen::MatrixXcd& u, Eigen::Index col) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double a = std::abs(u(i, col));
        if (a > best + 1e-14) {
            best = a;
            pivot = i;
        }
    }
    std::complex<double> p = u(pivot, col);
    if (std::abs(p) > 0) u.col(col) *= std::conj(p) / std::abs(p);
    const double n = u.col(col).norm();
    if (n > 0) u.col(col) /= n;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    return (a.array() * b.array()).sum();
}

}  // namespace

double commutator_residual(const Matrix& sigma, const Matrix& k) {
    return (sigma * k - k * sigma).norm();
}

Eigendecomposition eig(const Matrix& k, double condition_threshold) {
    if (k.rows() != k.cols()) throw DimensionMismatch("eig: matrix must be square");
    require_finite(k, "eig input");

    Eigen::EigenSolver<Matrix> solver(k, /*computeEigenvectors=*/true);
    if (solver.info() != Eigen::Success) {
        throw NonDiagonalizable(std::numeric_limits<double>::infinity());
    }

    const Eigen::Index n = k.rows();
    Eigen::VectorXcd vals = solver.eigenvalues();
    Eigen::MatrixXcd vecs = solver.eigenvectors();

    // Sort by (descending real, then descending imaginary). Conjugate pairs
    // share the real part, so +i before -i keeps them adjacent.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (vals[a].real() != vals[b].real()) return vals[a].real() > vals[b].real();
        return vals[a].imag() > vals[b].imag();
    });

    Eigendecomposition dec;
    dec.eigenvalues.resize(n);
    dec.eigenvectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dec.eigenvalues[i] = vals[order[static_cast<std::size_t>(i)]];
        dec.eigenvectors.col(i) = vecs.col(order[static_cast<std::size_t>(i)]);
        normalize_column(dec.eigenvectors, i);
    }
    // Force exact conjugacy across adjacent pairs.
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        if (dec.eigenvalues[i].imag() > 0.0 &&
            std::abs(dec.eigenvalues[i + 1].real() - dec.eigenvalues[i].real()) < 1e-12 &&
            std::abs(dec.eigenvalues[i + 1].imag() + dec.eigenvalues[i].imag()) < 1e-12) {
            dec.eigenvalues[i + 1] = std::conj(dec.eigenvalues[i]);
            dec.eigenvectors.col(i + 1) = dec.eigenvectors.col(i).conjugate();
            ++i;
        }
    }

    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(dec.eigenvectors);
    const double smin = svd.singularValues()(n - 1);
    const double smax = svd.singularValues()(0);
    dec.condition_estimate = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(dec.condition_estimate <= condition_threshold)) {
        throw NonDiagonalizable(dec.condition_estimate);
    }
    dec.inverse = dec.eigenvectors.partialPivLu().solve(
        Eigen::MatrixXcd::Identity(n, n));
    return dec;
}

CommutantBasis commutant_basis(const Matrix& k, const std::vector<Matrix>& deflate) {
    if (k.rows() != k.cols()) throw DimensionMismatch("commutant_basis: matrix must be square");
    if (k.rows() > 64) throw ValidationError("commutant_basis: dense Kronecker capped at N <= 64");
    require_finite(k, "commutant_basis input");
    const Eigen::Index n = k.rows();
    const Eigen::Index n2 = n * n;

    // vec(sigma K - K sigma) = (K^T (x) I - I (x) K) vec(sigma), column-major vec.
    Matrix t = Matrix::Zero(n2, n2);
    const Matrix kt = k.transpose();
    for (Eigen::Index bi = 0; bi < n; ++bi)
        for (Eigen::Index bj = 0; bj < n; ++bj) {
            t.block(bi * n, bj * n, n, n) = kt(bi, bj) * Matrix::Identity(n, n);
            if (bi == bj) t.block(bi * n, bj * n, n, n) -= k;
        }

    Eigen::BDCSVD<Matrix> svd(t, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = 1e-10 * sv(0);

    // Null directions, ascending singular value (i.e. reversed column order).
    std::vector<Matrix> raw;
    for (Eigen::Index c = n2 - 1; c >= 0; --c) {
        if (sv(c) > cutoff) break;
        raw.push_back(Eigen::Map<const Matrix>(svd.matrixV().col(c).data(), n, n));
    }

    // Orthonormalize the deflation span, then project it out of each null
    // direction and re-orthonormalize what survives.
    std::vector<Matrix> basis;
    auto project_out = [&](Matrix m, const std::vector<Matrix>& span) {
        for (const auto& b : span) m -= frobenius_dot(m, b) * b;
        return m;
    };
    std::vector<Matrix> defl;
    for (const auto& d : deflate) {
        Matrix r = project_out(d, defl);
        const double nrm = r.norm();
        if (nrm > 1e-12 * std::max(1.0, d.norm())) defl.push_back(r / nrm);
    }

    CommutantBasis out;
    for (auto& g : raw) {
        Matrix r = project_out(project_out(g, defl), out.generators);
        const double nrm = r.norm();
        if (nrm < 1e-8) continue;
        r /= nrm;
        // Sign convention: first entry above noise (row-major scan) positive.
        for (Eigen::Index i = 0; i < n; ++i) {
            bool done = false;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (std::abs(r(i, j)) > 1e-10) {
                    if (r(i, j) < 0) r = -r;
                    done = true;
                    break;
                }
            }
            if (done) break;
        }
        out.residuals.push_back(commutator_residual(r, k));
        out.generators.push_back(std::move(r));
    }
    if (out.generators.empty()) throw EmptyCommutant();
    return out;
}

Matrix matrix_exp(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("matrix_exp: matrix must be square");
    require_finite(a, "matrix_exp input");
    const Eigen::Index n = a.rows();

    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();  // infinity norm
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Matrix as = a / std::ldexp(1.0, squarings);

    // Truncated Taylor series on the scaled matrix (||as|| <= 0.5).
    Matrix result = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int i = 1; i <= 40; ++i) {
        term = (term * as) / static_cast<double>(i);
        result += term;
        if (term.norm() < 1e-18 * result.norm()) break;
    }
    for (int i = 0; i < squarings; ++i) result = result * result;
    return result;
}

Matrix lstsq(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw DimensionMismatch("lstsq: row counts differ");
    require_finite(a, "lstsq A");
    require_finite(b, "lstsq B");
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-12);
    return svd.solve(b);
}

}  // namespace kfc::linalg
