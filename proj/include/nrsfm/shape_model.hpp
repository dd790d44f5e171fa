#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <utility>

#include "nrsfm/types.hpp"

namespace nrsfm {

template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Camera2x3 = Eigen::Matrix<Scalar, 2, 3>;

namespace detail {

template <typename Scalar>
Matrix3<Scalar> rot_x(Scalar a) {
  using std::cos, std::sin;
  Matrix3<Scalar> r;
  r << 1, 0, 0, 0, cos(a), -sin(a), 0, sin(a), cos(a);
  return r;
}
template <typename Scalar>
Matrix3<Scalar> rot_y(Scalar a) {
  using std::cos, std::sin;
  Matrix3<Scalar> r;
  r << cos(a), 0, sin(a), 0, 1, 0, -sin(a), 0, cos(a);
  return r;
}
template <typename Scalar>
Matrix3<Scalar> rot_z(Scalar a) {
  using std::cos, std::sin;
  Matrix3<Scalar> r;
  r << cos(a), -sin(a), 0, sin(a), cos(a), 0, 0, 0, 1;
  return r;
}
template <typename Scalar>
Matrix3<Scalar> drot_x(Scalar a) {
  using std::cos, std::sin;
  Matrix3<Scalar> r;
  r << 0, 0, 0, 0, -sin(a), -cos(a), 0, cos(a), -sin(a);
  return r;
}
template <typename Scalar>
Matrix3<Scalar> drot_y(Scalar a) {
  using std::cos, std::sin;
  Matrix3<Scalar> r;
  r << -sin(a), 0, cos(a), 0, 0, 0, -cos(a), 0, -sin(a);
  return r;
}
template <typename Scalar>
Matrix3<Scalar> drot_z(Scalar a) {
  using std::cos, std::sin;
  Matrix3<Scalar> r;
  r << -sin(a), -cos(a), 0, cos(a), -sin(a), 0, 0, 0, 0;
  return r;
}

template <typename Scalar>
void check_compatible(const BasicAttributeVector<Scalar>& q, const BasicBasisSet<Scalar>& basis) {
  if (q.num_shapes() != basis.K())
    throw DimensionError("attribute vector has " + std::to_string(q.num_shapes()) +
                         " shape coefficients but the basis has K=" + std::to_string(basis.K()));
}

}  // namespace detail

/// R(theta) = Rz(theta_z) * Ry(theta_y) * Rx(theta_x).
template <typename Derived>
Matrix3<typename Derived::Scalar> rotation_from_euler(const Eigen::MatrixBase<Derived>& theta) {
  using Scalar = typename Derived::Scalar;
  return detail::rot_z<Scalar>(theta[2]) * detail::rot_y<Scalar>(theta[1]) *
         detail::rot_x<Scalar>(theta[0]);
}

/// Inverse of rotation_from_euler with angles in (-pi, pi]. At gimbal lock
/// (|theta_y| = pi/2) theta_z is set to 0 and the remaining rotation is
/// folded into theta_x.
template <typename Scalar>
Vector3<Scalar> euler_from_rotation(const Matrix3<Scalar>& R) {
  using std::atan2, std::sqrt;
  const Scalar cy = sqrt(R(0, 0) * R(0, 0) + R(1, 0) * R(1, 0));
  Vector3<Scalar> theta;
  if (cy > Scalar(1e-12)) {
    theta << atan2(R(2, 1), R(2, 2)), atan2(-R(2, 0), cy), atan2(R(1, 0), R(0, 0));
  } else {
    theta << atan2(-R(1, 2), R(1, 1)), atan2(-R(2, 0), cy), Scalar(0);
  }
  for (Index i = 0; i < 3; ++i) theta[i] = wrap_angle(theta[i]);
  return theta;
}

/// Upper-triangular [[k11, k12], [0, k22]].
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 2, 2> camera_matrix(const Eigen::MatrixBase<Derived>& k) {
  Eigen::Matrix<typename Derived::Scalar, 2, 2> K;
  K << k[0], k[1], 0, k[2];
  return K;
}

/// M = K [I2 | 0] R(theta).
template <typename Scalar>
Camera2x3<Scalar> affine_camera(const BasicAttributeVector<Scalar>& q) {
  return camera_matrix(q.camera()) * rotation_from_euler(q.theta()).template topRows<2>();
}

/// R(q) = M [B0 + sum_k alpha_k B_k] + t 1^T.
template <typename Scalar>
Shape2<Scalar> project(const BasicAttributeVector<Scalar>& q, const BasicBasisSet<Scalar>& basis) {
  detail::check_compatible(q, basis);
  const Camera2x3<Scalar> M = affine_camera(q);
  Shape2<Scalar> X = M * basis.structure(q.alpha());
  X.colwise() += q.translation();
  return X;
}

/// d vec(R(q)) / dq with column-major vec of the 2 x L shape, so landmark j
/// occupies rows 2j (x) and 2j+1 (y). Size 2L x (8+K).
template <typename Scalar>
Matrix<Scalar> jacobian_q(const BasicAttributeVector<Scalar>& q, const BasicBasisSet<Scalar>& basis) {
  detail::check_compatible(q, basis);
  const Index L = basis.L();
  const Index K = basis.K();
  const auto theta = q.theta();
  const Eigen::Matrix<Scalar, 2, 2> Kc = camera_matrix(q.camera());
  const Matrix3<Scalar> Rx = detail::rot_x<Scalar>(theta[0]);
  const Matrix3<Scalar> Ry = detail::rot_y<Scalar>(theta[1]);
  const Matrix3<Scalar> Rz = detail::rot_z<Scalar>(theta[2]);
  const Matrix3<Scalar> R = Rz * Ry * Rx;
  const Eigen::Matrix<Scalar, 3, Eigen::Dynamic> S = basis.structure(q.alpha());
  const Eigen::Matrix<Scalar, 3, Eigen::Dynamic> RS = R * S;

  Matrix<Scalar> J = Matrix<Scalar>::Zero(2 * L, layout::dimension(K));
  auto put = [&](Index col, const Shape2<Scalar>& d) {
    J.col(col) = Eigen::Map<const Vector<Scalar>>(d.data(), 2 * L);
  };

  // Camera entries: dM/dk11 puts R row 0 into output row 0, and so on.
  Shape2<Scalar> d = Shape2<Scalar>::Zero(2, L);
  d.row(0) = RS.row(0);
  put(0, d);
  d.row(0) = RS.row(1);
  put(1, d);
  d.row(0).setZero();
  d.row(1) = RS.row(1);
  put(2, d);

  const Matrix3<Scalar> dR[3] = {Rz * Ry * detail::drot_x<Scalar>(theta[0]),
                                 Rz * detail::drot_y<Scalar>(theta[1]) * Rx,
                                 detail::drot_z<Scalar>(theta[2]) * Ry * Rx};
  for (Index i = 0; i < 3; ++i) put(layout::kTheta + i, Kc * dR[i].template topRows<2>() * S);

  const Camera2x3<Scalar> M = Kc * R.template topRows<2>();
  for (Index k = 0; k < K; ++k)
    put(layout::kAlpha + k, (M * basis.D.col(k)) * basis.b.row(k));

  const Index t0 = layout::translation(K);
  for (Index j = 0; j < L; ++j) {
    J(2 * j, t0) = Scalar(1);
    J(2 * j + 1, t0 + 1) = Scalar(1);
  }
  return J;
}

/// Camera parameters and Euler angles of an affine camera M = K [I2|0] R(theta).
struct CameraDecomposition {
  Eigen::Vector3d k;
  Eigen::Vector3d theta;
};

/// Factors a rank-2 2x3 camera as K [I2|0] R with k11, k22 > 0 and det R = +1.
/// Throws NumericalError naming the deficient row when M is rank deficient.
CameraDecomposition decompose_affine_camera(const Camera2x3<double>& M);

struct FitOptions {
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  int max_iterations = 200;
  double relative_tolerance = 1e-10;
};

struct FitResult {
  AttributeVector q;
  double residual = 0.0;          // ||R(q) - X||_F at the returned q
  double initial_residual = 0.0;  // same, at the initialization
  int iterations = 0;
  bool converged = false;  // false means the best iterate is returned with a warning
};

/// q* = argmin_q ||R(q) - X||_F^2 by Levenberg-Marquardt on jacobian_q.
/// Without `init`, starts from a rigid least-squares pre-fit of [M | t]
/// decomposed by decompose_affine_camera (alpha = 0).
FitResult fit_q(const Shape2D& X, const BasisSet& basis,
                const std::optional<AttributeVector>& init = std::nullopt,
                const FitOptions& options = {});

/// Rigid pre-fit used by fit_q when no initialization is supplied.
AttributeVector rigid_initialization(const Shape2D& X, const BasisSet& basis);

}  // namespace nrsfm
