#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace pfpe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

/// Reduces a square matrix to upper Hessenberg form by Householder similarity
/// transforms. Eigenvalues are preserved.
Matrix hessenberg(const Matrix& a);

/**
 * All eigenvalues of a real square matrix, complex pairs included.
 *
 * Hessenberg reduction followed by Francis double-shift QR with deflation.
 * Intended for the small dense Jacobians met here (n up to a few dozen).
 * Throws EigenSolverFailure if an eigenvalue does not converge.
 */
std::vector<std::complex<double>> general_eigenvalues(const Matrix& a);

/// Largest real part over the spectrum.
double max_real_part(const std::vector<std::complex<double>>& eigenvalues);

/// Largest modulus over the spectrum.
double spectral_radius(const std::vector<std::complex<double>>& eigenvalues);

/// Eigenvalues of a symmetric matrix in ascending order.
Vector symmetric_eigenvalues(const Matrix& a);

Matrix symmetrize(const Matrix& a);

/// Operator 2-norm, from the top eigenvalue of A^T A.
double spectral_norm(const Matrix& a);

double smallest_singular_value(const Matrix& a);

/// Largest absolute entry of a - b.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace linalg
}  // namespace pfpe
