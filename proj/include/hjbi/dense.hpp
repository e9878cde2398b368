#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace hjbi {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Smallest eigenvalue of the symmetric part of a square matrix.
template <typename Derived>
typename Derived::Scalar min_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0) return Scalar(0);
  const Matrix<Scalar> sym = (m + m.transpose()) / Scalar(2);
  if (sym.rows() == 1) return sym(0, 0);
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(sym, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

/// Component-wise minimum-image displacement on the unit torus, in [-1/2, 1/2].
template <typename Scalar>
Scalar torus_delta(Scalar d) {
  d = d - std::round(d);
  return d;
}

/// Euclidean length of the minimum-image displacement between two points of the unit torus.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar torus_distance(const Eigen::MatrixBase<DerivedA>& x, const Eigen::MatrixBase<DerivedB>& y) {
  using Scalar = typename DerivedA::Scalar;
  Scalar sum(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar d = torus_delta<Scalar>(x(i) - y(i));
    sum += d * d;
  }
  return std::sqrt(sum);
}

/// The matrix norm used throughout: (sum of squared entries)^(1/2).
template <typename Derived>
typename Derived::Scalar euclidean_norm(const Eigen::MatrixBase<Derived>& m) {
  return m.norm();
}

template <typename Scalar>
Scalar positive_part(Scalar v) {
  return v > Scalar(0) ? v : Scalar(0);
}

template <typename Scalar>
Scalar negative_part(Scalar v) {
  return v < Scalar(0) ? -v : Scalar(0);
}

}  // namespace hjbi
