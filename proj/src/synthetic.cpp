#include "nrsfm/synthetic.hpp"

#include <Eigen/QR>

#include <random>

namespace nrsfm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Eigen::MatrixXd random_normal(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // Fill in a fixed (column-major) order so results depend only on the seed.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

// Orthonormal columns spanning the columns of `m` (m must have full column rank).
Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& m) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

// Centred, mutually orthonormal rows: B0 (3 x L) and b (K x L).
BasisSet random_basis(std::mt19937_64& rng, Index K, Index L) {
  Eigen::MatrixXd P = random_normal(rng, L, 4 + K);
  P.col(0).setOnes();
  const Eigen::MatrixXd Q = orthonormal_columns(P);
  BasisSet basis;
  basis.B0 = Q.middleCols(1, 3).transpose();
  basis.b = Q.middleCols(4, K).transpose();
  basis.D = random_normal(rng, 3, K);
  for (Index k = 0; k < K; ++k) basis.D.col(k).normalize();
  return basis;
}

Eigen::VectorXd saturate(const Eigen::VectorXd& u, double a) {
  return (u.array() + a * u.array().tanh()).matrix();
}

Eigen::VectorXd saturate_derivative(const Eigen::VectorXd& u, double a) {
  return (1.0 + a * (1.0 - u.array().tanh().square())).matrix();
}

}  // namespace

SyntheticGenerator::SyntheticGenerator(const WorldConfig& cfg) : cfg_(cfg) {
  const Index q_dim = layout::dimension(cfg.K);
  if (cfg.K < 0) throw InvalidArgument("make_world: K must be non-negative");
  if (cfg.L < 3 + cfg.K + 1) throw InvalidArgument("make_world: L must be at least K + 4");
  if (cfg.latent_dim < q_dim + 4)
    throw InvalidArgument("make_world: latent_dim=" + std::to_string(cfg.latent_dim) +
                          " leaves fewer than 4 nuisance directions (need >= " +
                          std::to_string(q_dim + 4) + ")");
  if (!(cfg.sigma >= 0.0)) throw InvalidArgument("make_world: sigma must be non-negative");
  cfg_.nuisance_dim = std::clamp<Index>(cfg.nuisance_dim, 4, cfg.latent_dim - q_dim);

  std::mt19937_64 rng(cfg.seed);
  const Eigen::MatrixXd Q = orthonormal_columns(random_normal(rng, cfg.latent_dim, q_dim + cfg_.nuisance_dim));
  A_ = Q.leftCols(q_dim).transpose();
  N_ = Q.middleCols(q_dim, cfg_.nuisance_dim).transpose();

  offset_ = Eigen::VectorXd::Zero(q_dim);
  spread_ = Eigen::VectorXd::Zero(q_dim);
  // Camera entries, Euler angles, shape coefficients, translation.
  offset_.head<3>() << 0.5, 0.0, 0.5;
  spread_.head<3>() << 0.04, 0.02, 0.04;
  spread_.segment<3>(layout::kTheta) << 0.25, 0.25, 0.08;
  for (Index k = 0; k < cfg.K; ++k) spread_[layout::kAlpha + k] = 0.12 * std::pow(0.75, static_cast<double>(k));
  offset_.tail<2>().setConstant(0.5);
  spread_.tail<2>().setConstant(0.03);

  basis_ = random_basis(rng, cfg.K, cfg.L);
}

SyntheticGenerator make_world(const WorldConfig& cfg) { return SyntheticGenerator(cfg); }

void SyntheticGenerator::check(const Eigen::VectorXd& w) const {
  if (w.size() != cfg_.latent_dim)
    throw DimensionError("latent has dimension " + std::to_string(w.size()) + ", world expects " +
                         std::to_string(cfg_.latent_dim));
}

AttributeVector SyntheticGenerator::attributes(const Eigen::VectorXd& w) const {
  check(w);
  const Eigen::VectorXd u = A_ * w;
  return AttributeVector(Eigen::VectorXd(offset_ + spread_.cwiseProduct(saturate(u, cfg_.nonlinearity))));
}

Eigen::MatrixXd SyntheticGenerator::attribute_jacobian(const Eigen::VectorXd& w) const {
  check(w);
  const Eigen::VectorXd u = A_ * w;
  return spread_.cwiseProduct(saturate_derivative(u, cfg_.nonlinearity)).asDiagonal() * A_;
}

Eigen::VectorXd SyntheticGenerator::nuisance(const Eigen::VectorXd& w) const {
  check(w);
  return saturate(N_ * w, cfg_.nonlinearity);
}

Eigen::MatrixXd SyntheticGenerator::nuisance_jacobian(const Eigen::VectorXd& w) const {
  check(w);
  return saturate_derivative(N_ * w, cfg_.nonlinearity).asDiagonal() * N_;
}

Shape2D SyntheticGenerator::noise(std::uint64_t call_index) const {
  Shape2D e = Shape2D::Zero(2, cfg_.L);
  if (cfg_.sigma == 0.0) return e;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(call_index), static_cast<std::uint32_t>(call_index >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, cfg_.sigma);
  for (Index j = 0; j < cfg_.L; ++j)
    for (Index r = 0; r < 2; ++r) e(r, j) = normal(rng);
  return e;
}

Observation SyntheticGenerator::observe(const Eigen::VectorXd& w, std::uint64_t call_index) const {
  Observation obs;
  obs.q_true = attributes(w);
  obs.nuisance = nuisance(w);
  obs.landmarks = project(obs.q_true, basis_) + noise(call_index);
  return obs;
}

std::uint64_t dataset_call_index(std::uint64_t seed, Index i) {
  return splitmix64(seed) + static_cast<std::uint64_t>(i);
}

Dataset sample_dataset(const SyntheticGenerator& world, Index N, std::uint64_t seed) {
  if (N < 1) throw InvalidArgument("sample_dataset: N must be at least 1");
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.latents.reserve(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) {
    Eigen::VectorXd w = random_normal(rng, world.latent_dim(), 1);
    const std::uint64_t idx = dataset_call_index(seed, i);
    Observation obs = world.observe(w, idx);
    ds.latents.push_back(std::move(w));
    ds.shapes.push_back(std::move(obs.landmarks));
    ds.q_true.push_back(std::move(obs.q_true));
    ds.nuisance.push_back(std::move(obs.nuisance));
    ds.call_indices.push_back(idx);
  }
  return ds;
}

SimilarityOracle SimilarityOracle::nuisance(const SyntheticGenerator& world) {
  return SimilarityOracle(DistanceKind::Nuisance, &world, {});
}

SimilarityOracle SimilarityOracle::latent() { return SimilarityOracle(DistanceKind::Latent, nullptr, {}); }

SimilarityOracle SimilarityOracle::quadratic(Eigen::MatrixXd A) {
  if (A.rows() != A.cols()) throw DimensionError("quadratic oracle needs a square matrix");
  return SimilarityOracle(DistanceKind::Quadratic, nullptr, std::move(A));
}

double SimilarityOracle::distance(const Eigen::VectorXd& w, const Eigen::VectorXd& w0) const {
  if (w.size() != w0.size()) throw DimensionError("similarity: latent dimensions differ");
  switch (kind_) {
    case DistanceKind::Nuisance:
      return (world_->nuisance(w) - world_->nuisance(w0)).squaredNorm();
    case DistanceKind::Latent:
      return (w - w0).squaredNorm();
    case DistanceKind::Quadratic: {
      if (A_.rows() != w.size()) throw DimensionError("quadratic oracle: dimension mismatch");
      const Eigen::VectorXd d = w - w0;
      return d.dot(A_ * d);
    }
  }
  return 0.0;
}

Eigen::VectorXd SimilarityOracle::gradient(const Eigen::VectorXd& w, const Eigen::VectorXd& w0) const {
  if (w.size() != w0.size()) throw DimensionError("similarity: latent dimensions differ");
  switch (kind_) {
    case DistanceKind::Nuisance:
      return 2.0 * world_->nuisance_jacobian(w).transpose() * (world_->nuisance(w) - world_->nuisance(w0));
    case DistanceKind::Latent:
      return 2.0 * (w - w0);
    case DistanceKind::Quadratic: {
      if (A_.rows() != w.size()) throw DimensionError("quadratic oracle: dimension mismatch");
      const Eigen::VectorXd d = w - w0;
      return (A_ + A_.transpose()) * d;
    }
  }
  return Eigen::VectorXd::Zero(w.size());
}

RankOneScene make_rank_one_scene(const RankOneSceneConfig& cfg) {
  if (cfg.N < 4) throw InvalidArgument("make_rank_one_scene: N must be at least 4");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RankOneScene scene;
  scene.basis = random_basis(rng, cfg.K, cfg.L);

  Index group = 1;
  while (cfg.balanced && group < cfg.K + 1) group *= 2;
  // Sylvester-Hadamard matrix of order `group`: H(i, j) = (-1)^popcount(i & j).
  auto hadamard = [](Index i, Index j) { return std::popcount(static_cast<unsigned>(i & j)) % 2 ? -1.0 : 1.0; };

  Index n = 0;
  while (n < cfg.N) {
    AttributeVector base(cfg.K);
    base.camera() << 0.5 + 0.04 * normal(rng), 0.02 * normal(rng), 0.5 + 0.04 * normal(rng);
    for (Index i = 0; i < 3; ++i) base.theta()[i] = (i == 2 ? 0.3 : 1.0) * cfg.theta_spread * normal(rng);
    for (Index k = 0; k < cfg.K; ++k)
      base.alpha()[k] = cfg.rigid ? 0.0 : cfg.alpha_spread * std::pow(0.6, static_cast<double>(k)) * normal(rng);
    for (Index j = 0; j < group && n < cfg.N; ++j, ++n) {
      AttributeVector q = base;
      if (cfg.balanced)
        for (Index k = 0; k < cfg.K; ++k) q.alpha()[k] *= hadamard(k + 1, j);
      q.translation() << 0.5 + 0.03 * normal(rng), 0.5 + 0.03 * normal(rng);
      Shape2D X = project(q, scene.basis);
      if (cfg.sigma > 0.0)
        for (Index c = 0; c < cfg.L; ++c)
          for (Index r = 0; r < 2; ++r) X(r, c) += cfg.sigma * normal(rng);
      scene.shapes.push_back(std::move(X));
      scene.q_true.push_back(std::move(q));
    }
  }
  return scene;
}

}  // namespace nrsfm
