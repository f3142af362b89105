#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace fedcm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

/// Singular values below `kDefaultPinvTol * sigma_max` are treated as zero.
inline constexpr double kDefaultPinvTol = 1e-10;

Matrix symmetrize(const Matrix& a);

struct PseudoInverse {
  Matrix value;
  Index rank = 0;
  bool rank_deficient = false;
};

/// Moore-Penrose pseudoinverse through a deterministic SVD. Each singular
/// vector pair is sign-normalised so that the largest-magnitude entry of the
/// left vector is positive.
PseudoInverse pinv(const Matrix& a, double rel_tol = kDefaultPinvTol);

/// Minimum-norm solution of `a x = b` using `pinv`.
Vector pinv_solve(const Matrix& a, const Vector& b, double rel_tol = kDefaultPinvTol);

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns
};

SymmetricEigen sym_eig(const Matrix& a);

double min_eigenvalue(const Matrix& a);

/// max |eigenvalue| of a symmetric matrix.
double spectral_abs_max(const Matrix& a);

/// Symmetric square root with negative eigenvalues clipped at zero.
Matrix psd_sqrt(const Matrix& a);

/// Nearest PSD matrix in Frobenius norm (eigenvalue clipping).
Matrix psd_project(const Matrix& a);

constexpr Index upper_size(Index d) { return d * (d + 1) / 2; }

/// Upper triangle including the diagonal, row-major.
std::vector<double> pack_upper(const Matrix& a);
Matrix unpack_upper(std::span<const double> packed, Index d);

}  // namespace linalg
}  // namespace fedcm
