#include "mfusion/linalg.hpp"

#include <cmath>

#include "mfusion/error.hpp"

namespace mfusion {

namespace {

double inf_norm(const Matrix& a) { return a.cwiseAbs().rowwise().sum().maxCoeff(); }

void check_factor(const Matrix& lower, Eigen::Index rows) {
  if (lower.rows() != lower.cols()) throw InvalidArgument("Cholesky factor must be square");
  if (lower.rows() != rows) throw InvalidArgument("dimension mismatch in SPD solve");
}

}  // namespace

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("cholesky requires a square matrix");
  const Eigen::Index n = a.rows();
  if (n == 0) return Matrix(0, 0);
  const double norm = inf_norm(a);
  if (!std::isfinite(norm)) throw NumericalError("cholesky input contains non-finite entries");
  if (inf_norm(a - a.transpose()) > 1e-10 * norm) throw InvalidArgument("cholesky input is not symmetric");

  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j);
    if (j > 0) pivot -= l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0)) throw NotPositiveDefinite(static_cast<std::size_t>(j), pivot);
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    if (j + 1 < n) {
      const Eigen::Index rest = n - j - 1;
      Vector col = a.col(j).tail(rest);
      if (j > 0) col.noalias() -= l.bottomLeftCorner(rest, j) * l.row(j).head(j).transpose();
      l.col(j).tail(rest) = col / ljj;
    }
  }
  return l;
}

Vector spd_solve(const Matrix& lower, const Vector& b) {
  check_factor(lower, b.size());
  const auto tri = lower.triangularView<Eigen::Lower>();
  Vector x = tri.solve(b);
  tri.transpose().solveInPlace(x);
  return x;
}

Matrix spd_solve(const Matrix& lower, const Matrix& b) {
  check_factor(lower, b.rows());
  const auto tri = lower.triangularView<Eigen::Lower>();
  Matrix x = tri.solve(b);
  tri.transpose().solveInPlace(x);
  return x;
}

Matrix spd_inverse(const Matrix& lower) {
  return spd_solve(lower, Matrix::Identity(lower.rows(), lower.cols()).eval());
}

double logdet(const Matrix& lower) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < lower.rows(); ++i) sum += std::log(lower(i, i));
  return 2.0 * sum;
}

}  // namespace mfusion
