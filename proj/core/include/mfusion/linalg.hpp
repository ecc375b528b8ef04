#pragma once

#include <Eigen/Dense>

namespace mfusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Symmetry is checked to ||A - A^T||_inf <= 1e-10 ||A||_inf. Throws
/// NotPositiveDefinite carrying the 0-based pivot index when a pivot is not
/// strictly positive.
Matrix cholesky(const Matrix& a);

/// Solves L L^T x = b for a factor returned by cholesky().
Vector spd_solve(const Matrix& lower, const Vector& b);
Matrix spd_solve(const Matrix& lower, const Matrix& b);

/// Inverse of L L^T, built column by column from the factor.
Matrix spd_inverse(const Matrix& lower);

/// log det(L L^T) = 2 * sum(log L_ii).
double logdet(const Matrix& lower);

}  // namespace mfusion
