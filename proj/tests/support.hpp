#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <random>

#include "nrsfm/types.hpp"

namespace nrsfm::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::MatrixXd gaussian(Rng& rng, Index rows, Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// Basis with orthonormal B0 rows and unit d_k, b rows orthonormal and
// orthogonal to B0 rows.
inline BasisSet random_basis(Rng& rng, Index K, Index L) {
  const Eigen::MatrixXd G = gaussian(rng, L, 3 + K);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(L, 3 + K);
  BasisSet basis;
  basis.B0 = Q.leftCols(3).transpose() * std::sqrt(static_cast<double>(L));
  basis.D = gaussian(rng, 3, K);
  for (Index k = 0; k < K; ++k) basis.D.col(k).normalize();
  basis.b = Q.rightCols(K).transpose() * std::sqrt(static_cast<double>(L));
  return basis;
}

// Attribute vector away from the gimbal singularity.
inline AttributeVector random_attributes(Rng& rng, Index K) {
  AttributeVector q(K);
  q[0] = uniform(rng, 0.6, 1.4);
  q[1] = uniform(rng, -0.2, 0.2);
  q[2] = uniform(rng, 0.6, 1.4);
  q[3] = uniform(rng, -1.0, 1.0);
  q[4] = uniform(rng, -1.0, 1.0);
  q[5] = uniform(rng, -std::numbers::pi + 0.1, std::numbers::pi - 0.1);
  for (Index k = 0; k < K; ++k) q[layout::kAlpha + k] = uniform(rng, -0.5, 0.5);
  q[layout::translation(K)] = uniform(rng, -1.0, 1.0);
  q[layout::translation(K) + 1] = uniform(rng, -1.0, 1.0);
  return q;
}

// Central differences of f: R^n -> R^m, m x n.
template <typename F>
Eigen::MatrixXd central_difference(F&& f, const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

}  // namespace nrsfm::testing
