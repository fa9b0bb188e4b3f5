#pragma once

#include <Eigen/Dense>
#include <vector>

namespace kfc::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Eigendecomposition of a real square matrix with a fixed deterministic
/// ordering: eigenvalues sorted by descending real part, then descending
/// imaginary part; complex-conjugate pairs end up adjacent with conjugate
/// eigenvectors. Columns of `eigenvectors` are unit-norm with a fixed phase.
struct Eigendecomposition {
    Eigen::VectorXcd eigenvalues;
    Eigen::MatrixXcd eigenvectors;  // U, columns are eigenvectors
    Eigen::MatrixXcd inverse;       // U^{-1}
    double condition_estimate = 0.0;

    Eigen::MatrixXcd reconstruct() const {
        return eigenvectors * eigenvalues.asDiagonal() * inverse;
    }
};

/// Orthonormal basis (Frobenius inner product) of nontrivial directions
/// commuting with a given matrix, with per-generator commutator residuals.
struct CommutantBasis {
    std::vector<Matrix> generators;
    std::vector<double> residuals;
};

/// Throws NonDiagonalizable when the eigenvector condition number exceeds
/// `condition_threshold`.
Eigendecomposition eig(const Matrix& k, double condition_threshold = 1e8);

/// Nullspace of the homogeneous Sylvester operator sigma*K - K*sigma = 0,
/// built densely as the N^2 x N^2 Kronecker operator (N <= 64), with the
/// span of `deflate` (typically {I, K}) projected out. Generators are
/// returned orthonormal, in ascending-singular-value order, sign-fixed.
/// Throws EmptyCommutant when nothing survives deflation.
CommutantBasis commutant_basis(const Matrix& k, const std::vector<Matrix>& deflate);

/// Scaling-and-squaring matrix exponential; relative error <= 1e-10 for
/// norms up to ~10.
Matrix matrix_exp(const Matrix& a);

/// Minimum-norm least-squares solution of A X = B via SVD with singular
/// values below 1e-12 * sigma_max treated as zero.
Matrix lstsq(const Matrix& a, const Matrix& b);

double commutator_residual(const Matrix& sigma, const Matrix& k);

}  // namespace kfc::linalg
