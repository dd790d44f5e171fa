#include "nrsfm/factorization.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace nrsfm {

Shape2D MeasurementMatrix::uncentered_frame(Index n) const {
  Shape2D X = frame(n);
  X.colwise() += centroids.row(n).transpose();
  return X;
}

MeasurementMatrix assemble_measurement(std::span<const Shape2D> shapes) {
  if (shapes.size() < 4)
    throw InvalidArgument("assemble_measurement: need at least 4 shapes, got " +
                          std::to_string(shapes.size()));
  const Index L = shapes.front().cols();
  if (L < 3) throw InvalidArgument("assemble_measurement: need at least 3 landmarks");
  const Index N = static_cast<Index>(shapes.size());

  MeasurementMatrix meas;
  meas.data.resize(2 * N, L);
  meas.centroids.resize(N, 2);
  for (Index n = 0; n < N; ++n) {
    const Shape2D& X = shapes[static_cast<std::size_t>(n)];
    if (X.cols() != L)
      throw DimensionError("assemble_measurement: frame " + std::to_string(n) + " has " +
                           std::to_string(X.cols()) + " landmarks, expected " + std::to_string(L));
    if (!X.allFinite())
      throw InvalidArgument("assemble_measurement: frame " + std::to_string(n) + " is not finite");
    const Eigen::Vector2d c = X.rowwise().mean();
    meas.centroids.row(n) = c.transpose();
    meas.data.middleRows<2>(2 * n) = X.colwise() - c;
  }
  return meas;
}

namespace {

// Flip singular pairs so the largest-magnitude entry of each right vector is positive.
void fix_signs(Eigen::Ref<Eigen::MatrixXd> U, Eigen::Ref<Eigen::MatrixXd> V) {
  for (Index i = 0; i < V.cols(); ++i) {
    Index arg = 0;
    V.col(i).cwiseAbs().maxCoeff(&arg);
    if (V(arg, i) < 0) {
      V.col(i) *= -1.0;
      if (U.cols() > i) U.col(i) *= -1.0;
    }
  }
}

}  // namespace

RigidFactorization rigid_factorization(const MeasurementMatrix& meas) {
  if (meas.data.rows() < 6 || meas.data.cols() < 3)
    throw InvalidArgument("rigid_factorization: measurement matrix too small");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(meas.data, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() < 3 || !(s[2] >= 1e-10 * s[0]) || s[0] == 0.0)
    throw NumericalError("rigid_factorization", "degenerate rigid structure");

  Eigen::MatrixXd U = svd.matrixU().leftCols(3);
  Eigen::MatrixXd V = svd.matrixV().leftCols(3);
  fix_signs(U, V);

  RigidFactorization out;
  out.M0 = U * s.head<3>().asDiagonal();
  out.B0 = V.transpose();
  return out;
}

std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> build_basis(
    const Eigen::Matrix<double, 3, Eigen::Dynamic>& D, const Eigen::MatrixXd& b) {
  if (D.cols() != b.rows())
    throw DimensionError("build_basis: D has " + std::to_string(D.cols()) + " columns, b has " +
                         std::to_string(b.rows()) + " rows");
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> out;
  out.reserve(static_cast<std::size_t>(D.cols()));
  for (Index k = 0; k < D.cols(); ++k) {
    const double n = D.col(k).norm();
    if (!(n > 0.0)) throw InvalidArgument("build_basis: d_" + std::to_string(k + 1) + " is zero");
    out.emplace_back((D.col(k) / n) * b.row(k));
  }
  return out;
}

Eigen::MatrixXd FactorizationResult::reconstruction() const {
  Eigen::MatrixXd X = M0 * basis.B0;
  if (basis.K() == 0) return X;
  // Row 2n+r, column k of (M0 D) is (M_n d_k)_r.
  Eigen::MatrixXd MD = M0 * basis.D;
  for (Index n = 0; n < N(); ++n) MD.middleRows<2>(2 * n).array().rowwise() *= alpha.row(n).array();
  X += MD * basis.b;
  return X;
}

double reconstruction_rmse(const FactorizationResult& result, const MeasurementMatrix& meas) {
  const Eigen::MatrixXd E = result.reconstruction() - meas.data;
  return std::sqrt(E.squaredNorm() / static_cast<double>(E.size()));
}

double factorization_objective(const MeasurementMatrix& meas, const Eigen::MatrixXd& M0,
                               const Eigen::Matrix<double, 3, Eigen::Dynamic>& B0,
                               const Eigen::Matrix<double, 3, Eigen::Dynamic>& D,
                               const Eigen::MatrixXd& b, const Eigen::MatrixXd& alpha, double lambda) {
  const Index K = D.cols();
  Eigen::MatrixXd X_hat = M0 * B0;
  if (K > 0) {
    // M^alpha = (alpha (x) 1_{2x3}) .* (1_K^T (x) M0)
    const Eigen::MatrixXd Malpha =
        Eigen::kroneckerProduct(alpha, Eigen::MatrixXd::Ones(2, 3)).eval().cwiseProduct(
            Eigen::kroneckerProduct(Eigen::RowVectorXd::Ones(K), M0).eval());
    // B = diag(vec(D)) (I_K (x) 1_3) b
    const Eigen::VectorXd vecD = Eigen::Map<const Eigen::VectorXd>(D.data(), 3 * K);
    const Eigen::MatrixXd B =
        vecD.asDiagonal() *
        (Eigen::kroneckerProduct(Eigen::MatrixXd::Identity(K, K), Eigen::VectorXd::Ones(3)).eval() * b);
    X_hat += Malpha * B;
  }
  const double penalty = (D.colwise().squaredNorm().array() - 1.0).square().sum();
  return (X_hat - meas.data).squaredNorm() + lambda * penalty;
}

namespace {

struct AdamRun {
  Eigen::Matrix<double, 3, Eigen::Dynamic> D;
  Eigen::MatrixXd alpha;
  std::vector<double> history;
};

// Adam on the decomposed objective with step acceptance: a step that raises
// the objective is undone, the moments are reset and the step size halved.
AdamRun run_adam(const Eigen::MatrixXd& M0, const Eigen::MatrixXd& P, double outside,
                 Eigen::Matrix<double, 3, Eigen::Dynamic> D, const OptimizerConfig& opt) {
  const Index N = M0.rows() / 2;
  const Index K = D.cols();

  // Least-squares alpha for the initial D.
  Eigen::MatrixXd alpha(N, K);
  {
    const Eigen::MatrixXd MD = M0 * D;
    for (Index n = 0; n < N; ++n)
      for (Index k = 0; k < K; ++k) {
        const Eigen::Vector2d md = MD.block<2, 1>(2 * n, k);
        const double den = md.squaredNorm();
        alpha(n, k) = den > 0.0 ? md.dot(P.block<2, 1>(2 * n, k)) / den : 0.0;
      }
  }

  Eigen::MatrixXd alpha_rep(2 * N, K);
  auto evaluate = [&](const Eigen::Matrix<double, 3, Eigen::Dynamic>& Dv, const Eigen::MatrixXd& av,
                      Eigen::MatrixXd* MD_out, Eigen::MatrixXd* E_out) {
    for (Index n = 0; n < N; ++n) alpha_rep.middleRows<2>(2 * n) = av.row(n).replicate<2, 1>();
    Eigen::MatrixXd MD = M0 * Dv;
    Eigen::MatrixXd E = MD.cwiseProduct(alpha_rep) - P;
    const Eigen::ArrayXd norms_sq = Dv.colwise().squaredNorm().transpose().array();
    const double f = E.squaredNorm() + outside + opt.lambda * (norms_sq - 1.0).square().sum();
    if (MD_out) *MD_out = std::move(MD);
    if (E_out) *E_out = std::move(E);
    return f;
  };

  AdamRun run;
  run.history.reserve(static_cast<std::size_t>(opt.max_steps) + 1);
  Eigen::MatrixXd MD, E;
  double f = evaluate(D, alpha, &MD, &E);
  if (!std::isfinite(f)) throw DivergenceError("initial objective is not finite", run.history);
  run.history.push_back(f);

  AdamMoments mom_D(3, K), mom_alpha(N, K);
  long adam_step = 0;
  double scale = 1.0;
  int rejected = 0;
  Eigen::MatrixXd grad_alpha(N, K);
  const double decay =
      opt.max_steps > 1 ? std::log(opt.final_lr_fraction) / static_cast<double>(opt.max_steps - 1) : 0.0;

  for (int step = 1; step <= opt.max_steps; ++step) {
    for (Index n = 0; n < N; ++n) alpha_rep.middleRows<2>(2 * n) = alpha.row(n).replicate<2, 1>();
    const Eigen::MatrixXd EM = E.cwiseProduct(MD);
    for (Index n = 0; n < N; ++n) grad_alpha.row(n) = 2.0 * (EM.row(2 * n) + EM.row(2 * n + 1));
    const Eigen::ArrayXd norms_sq = D.colwise().squaredNorm().transpose().array();
    Eigen::MatrixXd grad_D = 2.0 * M0.transpose() * E.cwiseProduct(alpha_rep);
    grad_D += 4.0 * opt.lambda * (D.array().rowwise() * (norms_sq - 1.0).transpose()).matrix();

    const double lr = scale * opt.adam.learning_rate * std::exp(decay * (step - 1));
    Eigen::Matrix<double, 3, Eigen::Dynamic> D_new = D;
    Eigen::MatrixXd alpha_new = alpha;
    ++adam_step;
    mom_D.update(D_new, grad_D, lr, opt.adam, adam_step);
    mom_alpha.update(alpha_new, grad_alpha, lr, opt.adam, adam_step);

    Eigen::MatrixXd MD_new, E_new;
    const double f_new = evaluate(D_new, alpha_new, &MD_new, &E_new);
    if (std::isfinite(f_new) && f_new <= f) {
      D = std::move(D_new);
      alpha = std::move(alpha_new);
      MD = std::move(MD_new);
      E = std::move(E_new);
      f = f_new;
      run.history.push_back(f);
      rejected = 0;
      scale = std::min(1.0, scale * 1.05);
      continue;
    }
    if (++rejected >= opt.divergence_window)
      throw DivergenceError("objective increased for " + std::to_string(rejected) + " consecutive steps",
                            run.history);
    mom_D = AdamMoments(3, K);
    mom_alpha = AdamMoments(N, K);
    adam_step = 0;
    scale *= 0.5;
  }
  run.D = std::move(D);
  run.alpha = std::move(alpha);
  return run;
}


Eigen::Matrix3d camera_facing_rotation(const Eigen::MatrixXd& M0) {
  // max_Q tr(Q^T C), C = sum_n [K_n^T M_n; 0]
  Eigen::Matrix3d C = Eigen::Matrix3d::Zero();
  const Index N = M0.rows() / 2;
  for (Index n = 0; n < N; ++n) {
    const Camera2x3<double> M = M0.middleRows<2>(2 * n);
    const CameraDecomposition dec = decompose_affine_camera(M);
    C.topRows<2>() += camera_matrix(dec.k).transpose() * M;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  S(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * S * svd.matrixV().transpose();
}

}  // namespace

FactorizationResult nonrigid_factorization(const MeasurementMatrix& meas, Index K,
                                           const OptimizerConfig& opt) {
  const Index L = meas.L();
  const Index N = meas.N();
  if (K < 0) throw InvalidArgument("nonrigid_factorization: K must be non-negative");
  if (K > L - 3)
    throw InvalidArgument("nonrigid_factorization: K=" + std::to_string(K) + " exceeds L-3=" +
                          std::to_string(L - 3));

  const RigidFactorization rigid = rigid_factorization(meas);
  const Eigen::MatrixXd dX = meas.data - rigid.M0 * rigid.B0;

  FactorizationResult result;
  result.M0 = rigid.M0;
  result.basis.B0 = rigid.B0;
  result.basis.D.resize(3, K);
  result.basis.b.resize(K, L);
  result.alpha.resize(N, K);

  if (K > 0) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dX, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd U = svd.matrixU().leftCols(K);
    Eigen::MatrixXd V = svd.matrixV().leftCols(K);
    fix_signs(U, V);
    const Eigen::MatrixXd b = V.transpose();

    // Rows of b are orthonormal, so the objective splits per (frame, k) into
    // ||alpha_nk M_n d_k - P_nk||^2 with P = dX b^T, plus the energy of dX
    // outside span(b).
    const Eigen::MatrixXd P = dX * b.transpose();  // 2N x K
    const double outside = std::max(0.0, dX.squaredNorm() - P.squaredNorm());

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int starts = std::max(1, opt.restarts);
    AdamRun best;
    for (int s = 0; s < starts; ++s) {
      Eigen::Matrix<double, 3, Eigen::Dynamic> D(3, K);
      for (Index k = 0; k < K; ++k) {
        for (Index r = 0; r < 3; ++r) D(r, k) = normal(rng);
        D.col(k).normalize();
      }
      AdamRun run = run_adam(rigid.M0, P, outside, D, opt);
      if (s == 0 || run.history.back() < best.history.back()) best = std::move(run);
    }

    result.residual_history = std::move(best.history);
    const Eigen::RowVectorXd norms = best.D.colwise().norm();
    result.max_unit_norm_deviation = (norms.array() - 1.0).abs().maxCoeff();
    for (Index k = 0; k < K; ++k) {
      if (!(norms[k] > 0.0))
        throw NumericalError("nonrigid_factorization", "d_" + std::to_string(k + 1) + " collapsed to zero");
      best.D.col(k) /= norms[k];
      best.alpha.col(k) *= norms[k];
    }
    result.basis.D = best.D;
    result.basis.b = b;
    result.alpha = best.alpha;
  }

  if (opt.align_to_camera) {
    const Eigen::Matrix3d Q = camera_facing_rotation(result.M0);
    result.alignment = Q;
    result.basis.B0 = Q * result.basis.B0;
    result.basis.D = Q * result.basis.D;
    result.M0 = result.M0 * Q.transpose();
  }

  result.final_residual = (result.reconstruction() - meas.data).squaredNorm();
  return result;
}

std::vector<FitResult> recover_frame_attributes(const FactorizationResult& result,
                                                const MeasurementMatrix& meas) {
  if (result.N() != meas.N() || result.basis.L() != meas.L())
    throw DimensionError("recover_frame_attributes: result and measurement disagree in N or L");
  std::vector<FitResult> out;
  out.reserve(static_cast<std::size_t>(meas.N()));
  for (Index n = 0; n < meas.N(); ++n) {
    const CameraDecomposition dec = decompose_affine_camera(result.M0.middleRows<2>(2 * n));
    AttributeVector q(result.basis.K());
    q.camera() = dec.k;
    q.theta() = dec.theta;
    q.alpha() = result.alpha.row(n).transpose();
    q.translation() = meas.centroids.row(n).transpose();
    out.push_back(fit_q(meas.uncentered_frame(n), result.basis, q));
  }
  return out;
}

double max_principal_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) throw DimensionError("max_principal_angle: row lengths differ");
  if (A.rows() == 0 || B.rows() == 0) return 0.0;
  Eigen::HouseholderQR<Eigen::MatrixXd> qa(A.transpose());
  Eigen::HouseholderQR<Eigen::MatrixXd> qb(B.transpose());
  const Eigen::MatrixXd Qa = qa.householderQ() * Eigen::MatrixXd::Identity(A.cols(), A.rows());
  const Eigen::MatrixXd Qb = qb.householderQ() * Eigen::MatrixXd::Identity(B.cols(), B.rows());
  // Component of span(B) outside span(A); sin of the largest angle is its 2-norm.
  const Eigen::MatrixXd R = Qb - Qa * (Qa.transpose() * Qb);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
  const double s = std::min(1.0, svd.singularValues()[0]);
  return std::asin(s);
}

}  // namespace nrsfm
