#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "nrsfm/adam.hpp"
#include "nrsfm/shape_model.hpp"
#include "nrsfm/types.hpp"

namespace nrsfm {

/// 2N x L stack of centred 2D shapes; frame n occupies rows 2n and 2n+1.
struct MeasurementMatrix {
  Eigen::MatrixXd data;
  Eigen::Matrix<double, Eigen::Dynamic, 2> centroids;  // N x 2, removed during assembly

  Index N() const { return data.rows() / 2; }
  Index L() const { return data.cols(); }

  auto frame(Index n) const { return data.middleRows<2>(2 * n); }
  /// Frame n with its centroid added back.
  Shape2D uncentered_frame(Index n) const;
};

/// Stacks shapes in order after subtracting each frame's centroid.
/// Requires N >= 4 shapes sharing L >= 3 landmarks.
MeasurementMatrix assemble_measurement(std::span<const Shape2D> shapes);

struct RigidFactorization {
  Eigen::MatrixXd M0;                           // 2N x 3, U0 * Lambda0
  Eigen::Matrix<double, 3, Eigen::Dynamic> B0;  // 3 x L, V0^T
};

/// Top-3 SVD of the measurement data. Each singular pair is sign-flipped so
/// the largest-magnitude entry of the right vector is positive.
RigidFactorization rigid_factorization(const MeasurementMatrix& meas);

struct OptimizerConfig {
  AdamConfig adam{};               // learning_rate defaults to 1e-2
  int max_steps = 5000;
  double lambda = 10.0;            // unit-norm penalty weight
  double final_lr_fraction = 1e-2; // learning rate decays exponentially to this fraction
  std::uint64_t seed = 0;          // initial D
  int divergence_window = 50;     // consecutive rejected (objective-raising) steps
  int restarts = 8;               // random D initializations; the lowest objective wins
  bool align_to_camera = true;     // rotate basis so frames face the camera at theta = 0
};

struct FactorizationResult {
  BasisSet basis;
  Eigen::MatrixXd M0;     // 2N x 3 stacked affine cameras (in the basis' frame)
  Eigen::MatrixXd alpha;  // N x K
  std::vector<double> residual_history;  // objective after each accepted step (non-increasing)
  double final_residual = 0.0;  // ||X_hat - X||_F^2 at termination
  double max_unit_norm_deviation = 0.0;  // max_k | ||d_k|| - 1 | before renormalization
  Eigen::Matrix3d alignment = Eigen::Matrix3d::Identity();  // rotation absorbed into B0 and D

  Index N() const { return M0.rows() / 2; }
  /// Model reconstruction of the centred data, M0 B0 + M^alpha B.
  Eigen::MatrixXd reconstruction() const;
};

/// Thrown when the factorization optimizer diverges; carries the objective history.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::vector<double> history)
      : NumericalError("nonrigid_factorization", what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// Rigid SVD, residual SVD for the b_k, then Adam on
///   ||X_hat(D, alpha) - X||_F^2 + lambda * sum_k (d_k^T d_k - 1)^2
/// from `restarts` random unit D. Steps that raise the objective are
/// rejected; `divergence_window` rejections in a row throw DivergenceError.
FactorizationResult nonrigid_factorization(const MeasurementMatrix& meas, Index K,
                                           const OptimizerConfig& opt = {});

/// The factorization objective evaluated directly from the Kronecker/Hadamard
/// construction of M^alpha and B. Quadratic in memory; meant for checks.
double factorization_objective(const MeasurementMatrix& meas, const Eigen::MatrixXd& M0,
                               const Eigen::Matrix<double, 3, Eigen::Dynamic>& B0,
                               const Eigen::Matrix<double, 3, Eigen::Dynamic>& D,
                               const Eigen::MatrixXd& b, const Eigen::MatrixXd& alpha, double lambda);

/// B_k = d_k b_k^T for every k, with d_k renormalized to unit length.
std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> build_basis(
    const Eigen::Matrix<double, 3, Eigen::Dynamic>& D, const Eigen::MatrixXd& b);

/// Per-frame attribute vectors: (k, theta) from decompose_affine_camera on M_n,
/// alpha from the factorization, t from the stored centroid, refined by fit_q
/// against the uncentred frame.
std::vector<FitResult> recover_frame_attributes(const FactorizationResult& result,
                                                const MeasurementMatrix& meas);

/// Largest principal angle (radians) between the row spaces of A and B.
double max_principal_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// Root-mean-square per coordinate of (reconstruction - data).
double reconstruction_rmse(const FactorizationResult& result, const MeasurementMatrix& meas);

}  // namespace nrsfm
