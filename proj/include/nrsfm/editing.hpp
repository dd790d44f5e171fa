#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "nrsfm/regressor.hpp"
#include "nrsfm/synthetic.hpp"
#include "nrsfm/types.hpp"

namespace nrsfm {

/// Selects which attribute components an edit drives; packed order as in
/// `layout`. Unselected components keep the value phi(w0) gives them.
using AttributeMask = std::vector<bool>;

AttributeMask full_mask(Index num_shapes);

/// Parses a comma-separated list of component or group names into a mask.
/// Groups: camera, theta (rotation), alpha (shape), t (translation),
/// pose (camera + theta), all. Single names follow attribute_names().
AttributeMask parse_mask(const std::string& spec, Index num_shapes);

enum class EditMethod { Linear, Gradient };

struct MetricModel;

struct EditSettings {
  EditMethod method = EditMethod::Linear;
  double lambda = 0.0;            // regularizer weight (gradient method)
  int max_steps = 2000;
  double learning_rate = 1e-2;
  double tolerance = 1e-4;        // attribute loss, normalized q units
  double pinv_tolerance = 1e-6;   // relative to the largest singular value
  const MetricModel* preconditioner = nullptr;  // H_r^+ applied to gradient steps when set
};

struct EditRequest {
  Eigen::VectorXd w0;
  AttributeVector q_target;
  AttributeMask mask;
  EditSettings settings;
};

struct EditResult {
  Eigen::VectorXd w;
  bool converged = true;
  int steps = 0;
  double attribute_loss = 0.0;  // at w, normalized units
  double regularizer = 0.0;     // D(w, w0), gradient method only
  std::vector<double> objective;
  std::vector<double> attribute_history;
  std::vector<double> regularizer_history;
};

/// sum over masked i of ((phi(w) - q_target)_i / output_scale_i)^2.
double attribute_loss(const MlpRegressor& model, const Eigen::VectorXd& w, const AttributeVector& q_target,
                      const AttributeMask& mask);

/// w0 + J_mask^+ (q_target - phi(w0))_mask with rows expressed in normalized
/// units; singular values below pinv_tolerance * sigma_1 are dropped.
Eigen::VectorXd linear_edit(const EditRequest& req, const MlpRegressor& model);

/// Adam on ||phi(w) - q_target||^2_mask + lambda D(w, w0) from w0. Stops as
/// soon as the attribute loss falls below the tolerance; otherwise returns the
/// best-objective iterate flagged unconverged.
EditResult gradient_edit(const EditRequest& req, const MlpRegressor& model, const SimilarityOracle& oracle);

/// Dispatches on req.settings.method. The linear method ignores the oracle.
EditResult apply_edit(const EditRequest& req, const MlpRegressor& model, const SimilarityOracle& oracle);

/// Moves the masked attributes of w_src onto w_tgt.
EditResult attribute_transfer(const Eigen::VectorXd& w_src, const Eigen::VectorXd& w_tgt,
                              const MlpRegressor& model, const AttributeMask& components,
                              const EditSettings& settings, const SimilarityOracle& oracle);

/// Local metric tensor of the squared distance, truncated to its top eigenpairs.
struct MetricModel {
  Eigen::MatrixXd H;             // full symmetric estimate (negative eigenvalues clamped)
  Eigen::VectorXd eigenvalues;   // retained, descending
  Eigen::MatrixXd eigenvectors;  // d_w x rank
  bool clamped = false;          // negative eigenvalues beyond tolerance were clamped

  Index rank() const { return eigenvalues.size(); }
  Index dim() const { return H.rows(); }
  Eigen::MatrixXd truncated() const;
  /// H_r^+ g.
  Eigen::VectorXd apply_pseudo_inverse(const Eigen::VectorXd& g) const;
};

/// Hessian of w -> D(w, w0) at w0 from central differences of the oracle
/// gradient along `probes` directions (the first d_w form a random orthonormal
/// basis), symmetrized and truncated to the top `rank` eigenpairs.
MetricModel estimate_metric(const SimilarityOracle& oracle, const Eigen::VectorXd& w0, Index probes, Index rank,
                            double step = 1e-3, std::uint64_t seed = 0);

/// v^T H_r v.
double metric_norm(const MetricModel& metric, const Eigen::VectorXd& v);

}  // namespace nrsfm
