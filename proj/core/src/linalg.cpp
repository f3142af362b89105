#include "fedcm/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace fedcm::linalg {

Matrix symmetrize(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("symmetrize: matrix is not square");
  return 0.5 * (a + a.transpose());
}

PseudoInverse pinv(const Matrix& a, double rel_tol) {
  PseudoInverse out;
  out.value = Matrix::Zero(a.cols(), a.rows());
  if (a.size() == 0) return out;

  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix u = svd.matrixU();
  Matrix v = svd.matrixV();
  const Vector& s = svd.singularValues();

  for (Index i = 0; i < u.cols(); ++i) {
    Index arg = 0;
    u.col(i).cwiseAbs().maxCoeff(&arg);
    if (u(arg, i) < 0.0) {
      u.col(i) *= -1.0;
      v.col(i) *= -1.0;
    }
  }

  const double cutoff = rel_tol * (s.size() > 0 ? s(0) : 0.0);
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff && s(i) > 0.0) {
      out.value.noalias() += v.col(i) * (1.0 / s(i)) * u.col(i).transpose();
      ++out.rank;
    }
  }
  out.rank_deficient = out.rank < std::min(a.rows(), a.cols());
  return out;
}

Vector pinv_solve(const Matrix& a, const Vector& b, double rel_tol) {
  if (a.rows() != b.size()) throw std::invalid_argument("pinv_solve: dimension mismatch");
  return pinv(a, rel_tol).value * b;
}

SymmetricEigen sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("sym_eig: matrix is not square");
  if (a.size() == 0) return {};
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  if (es.info() != Eigen::Success) throw std::runtime_error("sym_eig: eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

double min_eigenvalue(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return sym_eig(a).values(0);
}

double spectral_abs_max(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return sym_eig(a).values.cwiseAbs().maxCoeff();
}

Matrix psd_sqrt(const Matrix& a) {
  if (a.size() == 0) return Matrix(a.rows(), a.cols());
  auto [values, vectors] = sym_eig(a);
  Vector root = values.cwiseMax(0.0).cwiseSqrt();
  return vectors * root.asDiagonal() * vectors.transpose();
}

Matrix psd_project(const Matrix& a) {
  if (a.size() == 0) return Matrix(a.rows(), a.cols());
  auto [values, vectors] = sym_eig(a);
  return symmetrize(vectors * values.cwiseMax(0.0).asDiagonal() * vectors.transpose());
}

std::vector<double> pack_upper(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("pack_upper: matrix is not square");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(upper_size(a.rows())));
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = i; j < a.cols(); ++j) out.push_back(a(i, j));
  return out;
}

Matrix unpack_upper(std::span<const double> packed, Index d) {
  if (static_cast<Index>(packed.size()) != upper_size(d))
    throw std::invalid_argument("unpack_upper: packed length does not match dimension");
  Matrix out(d, d);
  std::size_t k = 0;
  for (Index i = 0; i < d; ++i)
    for (Index j = i; j < d; ++j) {
      out(i, j) = packed[k];
      out(j, i) = packed[k];
      ++k;
    }
  return out;
}

}  // namespace fedcm::linalg
