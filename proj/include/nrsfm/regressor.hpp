#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

#include "nrsfm/types.hpp"

namespace nrsfm {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Feed-forward regressor phi: w -> q. Hidden layers use a rectifier; the last
/// layer is affine and predicts z-scored attributes, which are mapped back as
/// q = output_mean + output_scale .* y.
struct MlpRegressor {
  std::vector<DenseLayer> layers;
  Eigen::VectorXd output_mean;
  Eigen::VectorXd output_scale;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }
  Index num_shapes() const { return output_dim() - layout::kFixed; }
  std::vector<Index> hidden_sizes() const;

  /// Throws DimensionError when layer shapes do not chain or parameters are non-finite.
  void validate() const;
};

/// Fan-in scaled uniform initialization (bound sqrt(6 / fan_in)), zero biases,
/// identity output normalization.
MlpRegressor make_regressor(Index input_dim, Index output_dim, const std::vector<Index>& hidden,
                            std::uint64_t seed);

AttributeVector forward(const MlpRegressor& model, const Eigen::VectorXd& w);

/// Column-wise forward pass; returns de-normalized outputs, one column per input.
Eigen::MatrixXd forward_batch(const MlpRegressor& model, const Eigen::MatrixXd& inputs);

/// Exact Jacobian d phi / d w, (8+K) x d_w. The rectifier derivative at 0 is 0.
Eigen::MatrixXd jacobian(const MlpRegressor& model, const Eigen::VectorXd& w);

/// J^T upstream by reverse accumulation, without forming J.
Eigen::VectorXd gradient_wrt_input(const MlpRegressor& model, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& upstream);

/// Smallest |pre-activation| over all hidden units at w; +inf for a linear model.
double min_abs_preactivation(const MlpRegressor& model, const Eigen::VectorXd& w);

/// Activation pattern at w, one bool per hidden unit (true = active).
std::vector<bool> activation_pattern(const MlpRegressor& model, const Eigen::VectorXd& w);

struct TrainingConfig {
  double learning_rate = 1e-4;
  Index batch_size = 128;
  int epochs = 300;
  double validation_fraction = 0.10;
  std::uint64_t seed = 0;
  int patience = 30;  // epochs without validation improvement; <= 0 disables early stopping
  std::vector<Index> hidden = std::vector<Index>(5, 512);
  double q_loss_weight = 0.0;  // auxiliary loss on z-scored q labels; off by default
  double weight_decay = 1.0;  // decoupled: weights shrink by lr * weight_decay per step; biases untouched
  std::function<void(int, double, double)> on_epoch;  // (epoch, train, validation)
};

struct TrainingReport {
  std::vector<double> train_loss;       // mean landmark loss per sample, end of each epoch
  std::vector<double> validation_loss;  // same on the validation split
  double initial_train_loss = 0.0;      // before the first update
  int best_epoch = -1;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
};

struct TrainedRegressor {
  MlpRegressor model;
  TrainingReport report;
};

/// Minimizes mean ||R(phi(w)) - X||_F^2 over the training split by Adam,
/// back-propagating through jacobian_q. Output normalization is fitted to
/// the fit_q recovery of each training shape. Returns the best-validation model.
TrainedRegressor train(const std::vector<Eigen::VectorXd>& latents, const std::vector<Shape2D>& shapes,
                       const BasisSet& basis, const TrainingConfig& cfg);

/// Mean per-sample landmark loss ||R(phi(w)) - X||_F^2 over the given indices.
double mean_landmark_loss(const MlpRegressor& model, const BasisSet& basis,
                          const std::vector<Eigen::VectorXd>& latents, const std::vector<Shape2D>& shapes,
                          const std::vector<std::size_t>& indices);

}  // namespace nrsfm
