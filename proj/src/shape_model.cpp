#include "nrsfm/shape_model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <limits>

namespace nrsfm {

std::vector<std::string> attribute_names(Index num_shapes) {
  std::vector<std::string> names = {"k11", "k12", "k22", "theta_x", "theta_y", "theta_z"};
  for (Index k = 0; k < num_shapes; ++k) names.push_back("alpha_" + std::to_string(k + 1));
  names.emplace_back("t_x");
  names.emplace_back("t_y");
  return names;
}

CameraDecomposition decompose_affine_camera(const Camera2x3<double>& M) {
  // RQ on the rows, bottom row first: m2 = k22 r2, m1 = k11 r1 + k12 r2.
  const Eigen::Vector3d m1 = M.row(0).transpose();
  const Eigen::Vector3d m2 = M.row(1).transpose();
  const double scale = std::max(m1.norm(), m2.norm());
  const double tol = 1e-12 * std::max(scale, std::numeric_limits<double>::min());
  if (m2.norm() <= tol || !m2.allFinite())
    throw NumericalError("decompose_affine_camera", "camera row 1 is zero; M is rank deficient");
  const double k22 = m2.norm();
  const Eigen::Vector3d r2 = m2 / k22;
  const double k12 = m1.dot(r2);
  const Eigen::Vector3d rest = m1 - k12 * r2;
  if (rest.norm() <= tol || !rest.allFinite())
    throw NumericalError("decompose_affine_camera",
                         "camera row 0 is parallel to row 1; M is rank deficient");
  const double k11 = rest.norm();
  const Eigen::Vector3d r1 = rest / k11;

  Matrix3<double> R;
  R.row(0) = r1.transpose();
  R.row(1) = r2.transpose();
  R.row(2) = r1.cross(r2).transpose();

  CameraDecomposition out;
  out.k << k11, k12, k22;
  out.theta = euler_from_rotation(R);
  return out;
}

AttributeVector rigid_initialization(const Shape2D& X, const BasisSet& basis) {
  const Index L = basis.L();
  // [M | t] = X [B0; 1^T]^+
  Eigen::Matrix<double, 4, Eigen::Dynamic> A(4, L);
  A.topRows<3>() = basis.B0;
  A.row(3).setOnes();
  const Eigen::Matrix<double, 2, 4> Mt =
      A.transpose().colPivHouseholderQr().solve(X.transpose()).transpose();
  AttributeVector q(basis.K());
  const CameraDecomposition dec = decompose_affine_camera(Mt.leftCols<3>());
  q.camera() = dec.k;
  q.theta() = dec.theta;
  q.translation() = Mt.col(3);
  return q;
}

namespace {

double residual_sq(const AttributeVector& q, const BasisSet& basis, const Shape2D& X) {
  return (project(q, basis) - X).squaredNorm();
}

}  // namespace

FitResult fit_q(const Shape2D& X, const BasisSet& basis, const std::optional<AttributeVector>& init,
                const FitOptions& options) {
  basis.validate();
  if (X.cols() != basis.L())
    throw DimensionError("fit_q: shape has " + std::to_string(X.cols()) + " landmarks, basis has " +
                         std::to_string(basis.L()));
  if (!X.allFinite()) throw NumericalError("fit_q", "non-finite landmarks");

  AttributeVector q = init ? *init : rigid_initialization(X, basis);
  detail::check_compatible(q, basis);
  q.wrap_angles();

  const Index L = basis.L();
  double f = residual_sq(q, basis, X);

  FitResult out;
  out.initial_residual = std::sqrt(f);
  double damping = options.initial_damping;

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (f == 0.0) {
      out.converged = true;
      break;
    }
    const Matrix<double> J = jacobian_q(q, basis);
    const Shape2D E = project(q, basis) - X;
    const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(E.data(), 2 * L);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    const Eigen::VectorXd diag = JtJ.diagonal().cwiseMax(1e-12 * std::max(1.0, JtJ.diagonal().maxCoeff()));

    bool accepted = false;
    double f_new = f;
    while (damping < 1e16) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += damping * diag;
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      AttributeVector trial(Eigen::VectorXd(q.packed() + step));
      trial.wrap_angles();
      f_new = residual_sq(trial, basis, X);
      if (std::isfinite(f_new) && f_new < f) {
        q = std::move(trial);
        damping = std::max(damping / options.damping_factor, 1e-15);
        accepted = true;
        break;
      }
      damping *= options.damping_factor;
    }
    if (!accepted) {
      // No descent direction left at numerical precision.
      out.converged = true;
      break;
    }
    const double decrease = (f - f_new) / f;
    f = f_new;
    if (decrease < options.relative_tolerance) {
      out.converged = true;
      ++it;
      break;
    }
  }

  out.q = std::move(q);
  out.residual = std::sqrt(f);
  out.iterations = it;
  return out;
}

}  // namespace nrsfm
