#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "nrsfm/shape_model.hpp"
#include "nrsfm/types.hpp"

namespace nrsfm {

struct WorldConfig {
  Index latent_dim = 64;
  Index K = 4;
  Index L = 40;
  double sigma = 1e-3;
  std::uint64_t seed = 0;
  Index nuisance_dim = 16;    // clipped to latent_dim - (8 + K)
  double nonlinearity = 0.1;  // amplitude of the saturating term
};

struct Observation {
  Shape2D landmarks;
  AttributeVector q_true;
  Eigen::VectorXd nuisance;
};

/// Ground-truth stand-in for a generator plus landmark extractor.
///
/// Attributes:  q(w) = c + s .* (u + a tanh(u)),  u = A w
/// Nuisance:    n(w) = v + a tanh(v),             v = N w
///
/// The rows of A and N are orthonormal and mutually orthogonal, so nuisance
/// features never respond to attribute directions at the linear level.
/// Landmarks are project(q(w), basis) plus Gaussian noise keyed to a call
/// index, which makes observe() a pure function.
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }
  Index latent_dim() const { return cfg_.latent_dim; }
  Index attribute_dim() const { return A_.rows(); }
  Index nuisance_dim() const { return N_.rows(); }
  const BasisSet& basis() const { return basis_; }

  const Eigen::MatrixXd& attribute_map() const { return A_; }
  const Eigen::MatrixXd& nuisance_map() const { return N_; }
  const Eigen::VectorXd& attribute_offset() const { return offset_; }
  const Eigen::VectorXd& attribute_spread() const { return spread_; }

  AttributeVector attributes(const Eigen::VectorXd& w) const;
  Eigen::MatrixXd attribute_jacobian(const Eigen::VectorXd& w) const;
  Eigen::VectorXd nuisance(const Eigen::VectorXd& w) const;
  Eigen::MatrixXd nuisance_jacobian(const Eigen::VectorXd& w) const;

  Observation observe(const Eigen::VectorXd& w, std::uint64_t call_index) const;
  /// The noise draw observe() adds for `call_index` (2 x L).
  Shape2D noise(std::uint64_t call_index) const;

 private:
  void check(const Eigen::VectorXd& w) const;

  WorldConfig cfg_;
  Eigen::MatrixXd A_;
  Eigen::MatrixXd N_;
  Eigen::VectorXd offset_;
  Eigen::VectorXd spread_;
  BasisSet basis_;
};

/// Validates cfg (latent_dim >= 8 + K + 4) and builds the world.
SyntheticGenerator make_world(const WorldConfig& cfg);

struct Dataset {
  std::vector<Eigen::VectorXd> latents;
  std::vector<Shape2D> shapes;
  // Ground truth; only oracles and sidecar files read these.
  std::vector<AttributeVector> q_true;
  std::vector<Eigen::VectorXd> nuisance;
  std::vector<std::uint64_t> call_indices;

  std::size_t size() const { return shapes.size(); }
};

/// N latents drawn i.i.d. standard normal from `seed`, paired with observations.
Dataset sample_dataset(const SyntheticGenerator& world, Index N, std::uint64_t seed);

/// Call index observe() uses for sample i of a dataset drawn with `seed`.
std::uint64_t dataset_call_index(std::uint64_t seed, Index i);

enum class DistanceKind { Nuisance, Latent, Quadratic };

/// Squared distance D(w, w0) with its gradient in w. Nuisance compares the
/// world's nuisance features (identity proxy); Latent is ||w - w0||^2;
/// Quadratic is (w - w0)^T A (w - w0) for a fixed A.
class SimilarityOracle {
 public:
  static SimilarityOracle nuisance(const SyntheticGenerator& world);
  static SimilarityOracle latent();
  static SimilarityOracle quadratic(Eigen::MatrixXd A);

  DistanceKind kind() const { return kind_; }
  double distance(const Eigen::VectorXd& w, const Eigen::VectorXd& w0) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& w, const Eigen::VectorXd& w0) const;

 private:
  SimilarityOracle(DistanceKind kind, const SyntheticGenerator* world, Eigen::MatrixXd A)
      : kind_(kind), world_(world), A_(std::move(A)) {}

  DistanceKind kind_;
  const SyntheticGenerator* world_ = nullptr;
  Eigen::MatrixXd A_;
};

struct RankOneSceneConfig {
  Index N = 500;
  Index K = 2;
  Index L = 40;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool balanced = true;   // Hadamard sign pattern on alpha within camera groups
  bool rigid = false;     // alpha identically zero
  double theta_spread = 0.25;
  double alpha_spread = 0.12;  // first coefficient; later ones shrink by 0.6
};

struct RankOneScene {
  BasisSet basis;
  std::vector<Shape2D> shapes;
  std::vector<AttributeVector> q_true;
};

/// Frames from a known rank-one model with centred, orthonormal basis rows.
/// With `balanced`, each random camera is reused for a block of frames whose
/// alpha signs follow rows of a Sylvester-Hadamard matrix, which decorrelates
/// rigid and non-rigid parts exactly.
RankOneScene make_rank_one_scene(const RankOneSceneConfig& cfg);

}  // namespace nrsfm
