#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "nrsfm/editing.hpp"
#include "nrsfm/regressor.hpp"
#include "nrsfm/synthetic.hpp"

namespace nrsfm {

/// One attribute perturbation: component `component` moves by
/// `delta * output_scale[component]`, i.e. `delta` is in normalized units.
struct EditSpec {
  std::string name;
  Index component = 0;
  double delta = 0.0;
};

/// "default" (+-0.5 on theta_x, theta_y, alpha_1), "identity", or a
/// comma-separated list such as "theta_y=+0.5,alpha_1=-0.5".
std::vector<EditSpec> parse_edit_set(const std::string& spec, Index num_shapes);

struct EditRecord {
  Index sample = 0;
  std::string edit;
  double landmark_loss = 0.0;  // L_L(w_edit)
  double phi_loss = 0.0;       // ||phi(w_edit) - q_edit||^2
  double target_loss = 0.0;    // ||R(q_edit) - observed landmarks at w_edit||^2
  double identity_loss = 0.0;  // nuisance-feature distance between w_edit and w
  bool converged = true;
};

struct EvalReport {
  double landmark_loss_base = 0.0;   // mean L_L(w) over unedited samples
  double landmark_loss_edit = 0.0;   // means over converged edits
  double phi_loss = 0.0;
  double target_loss = 0.0;
  double identity_loss = 0.0;
  Index unconverged = 0;
  std::vector<double> base_losses;
  std::vector<EditRecord> records;  // N x edit count, sample-major

  // Configuration echo.
  Index N = 0;
  std::vector<EditSpec> edits;
  std::string method;
  double lambda = 0.0;
  std::uint64_t seed = 0;
};

/// ||R(phi(w)) - observed landmarks||_F^2 with the world's noise for `call_index`.
double landmark_loss(const MlpRegressor& model, const BasisSet& basis, const SyntheticGenerator& world,
                     const Eigen::VectorXd& w, std::uint64_t call_index = 0);

/// Samples N latents from `seed`, applies every edit with `settings`, and
/// aggregates the loss suite. Gradient edits regularize with the world's
/// nuisance distance; unconverged edits are counted, not averaged.
EvalReport evaluate_edits(const MlpRegressor& model, const BasisSet& basis, const SyntheticGenerator& world,
                          Index N, const std::vector<EditSpec>& edits, const EditSettings& settings,
                          std::uint64_t seed);

/// Plain-text table with one row of means and a note on provenance.
std::string format_report(const EvalReport& report);

}  // namespace nrsfm
