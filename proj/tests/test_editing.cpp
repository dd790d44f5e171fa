#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>

#include "nrsfm/editing.hpp"
#include "support.hpp"

using namespace nrsfm;
using namespace nrsfm::testing;

namespace {

// phi(w) = A w + c, realized as a single affine layer.
MlpRegressor linear_regressor(Rng& rng, Index d_w, Index K) {
  MlpRegressor m = make_regressor(d_w, layout::dimension(K), {}, rng());
  m.layers[0].weight = gaussian(rng, layout::dimension(K), d_w);
  m.layers[0].bias = gaussian(rng, layout::dimension(K), 1);
  return m;
}

MlpRegressor relu_regressor(Rng& rng, Index d_w, Index K) {
  MlpRegressor m = make_regressor(d_w, layout::dimension(K), {32, 32}, rng());
  for (auto& layer : m.layers) layer.bias = 0.1 * gaussian(rng, layer.bias.size(), 1);
  m.output_scale = Eigen::VectorXd::LinSpaced(m.output_dim(), 0.5, 2.0);
  return m;
}

EditRequest request(const Eigen::VectorXd& w0, const Eigen::VectorXd& q_target, Index K) {
  EditRequest req;
  req.w0 = w0;
  req.q_target = AttributeVector(q_target);
  req.mask = full_mask(K);
  return req;
}

}  // namespace

TEST_CASE("mask parsing by group and by name") {
  const auto all = parse_mask("all", 2);
  CHECK(std::count(all.begin(), all.end(), true) == 10);
  const auto theta = parse_mask("theta", 2);
  for (Index i = 0; i < 10; ++i) CHECK(theta[i] == (i >= 3 && i < 6));
  const auto pose = parse_mask("pose", 2);
  CHECK(std::count(pose.begin(), pose.end(), true) == 6);
  const auto mixed = parse_mask("alpha_2,t_x", 2);
  CHECK(std::count(mixed.begin(), mixed.end(), true) == 2);
  CHECK(mixed[7]);
  CHECK(mixed[8]);
  CHECK_THROWS_AS(parse_mask("alpha_3", 2), InvalidArgument);
  CHECK_THROWS_AS(parse_mask("", 2), InvalidArgument);
}

TEST_CASE("identity target returns w0 exactly") {
  Rng rng(1);
  const MlpRegressor m = relu_regressor(rng, 12, 2);
  const Eigen::VectorXd w0 = gaussian(rng, 12, 1);
  const EditRequest req = request(w0, forward(m, w0).packed(), 2);
  CHECK(linear_edit(req, m) == w0);
  EditRequest g = req;
  g.settings.method = EditMethod::Gradient;
  const EditResult r = apply_edit(g, m, SimilarityOracle::latent());
  CHECK(r.w == w0);
  CHECK(r.converged);
  CHECK(r.steps == 0);
}

TEST_CASE("linear edit on a linear regressor hits any target") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const MlpRegressor m = linear_regressor(rng, 20, 3);
    const Eigen::VectorXd w0 = gaussian(rng, 20, 1);
    const Eigen::VectorXd target = gaussian(rng, 11, 1);
    const Eigen::VectorXd w = linear_edit(request(w0, target, 3), m);
    CHECK((forward(m, w).packed() - target).norm() < 1e-8);
    // Minimum-norm step: orthogonal to the null space of A.
    const Eigen::MatrixXd& A = m.layers[0].weight;
    const Eigen::VectorXd lsq = A.completeOrthogonalDecomposition().solve(
        Eigen::VectorXd(target - forward(m, w0).packed()));
    CHECK((w - w0 - lsq).norm() < 1e-8);
  }
}

TEST_CASE("linear edit displacement scales with the target offset") {
  Rng rng(3);
  const MlpRegressor m = relu_regressor(rng, 12, 2);
  const Eigen::VectorXd w0 = gaussian(rng, 12, 1);
  const Eigen::VectorXd q0 = forward(m, w0).packed();
  const Eigen::VectorXd dq = gaussian(rng, 10, 1);
  const Eigen::VectorXd step = linear_edit(request(w0, q0 + dq, 2), m) - w0;
  for (double c : {-2.0, 0.5, 3.0}) {
    const Eigen::VectorXd scaled = linear_edit(request(w0, q0 + c * dq, 2), m) - w0;
    CHECK((scaled - c * step).norm() < 1e-12 * std::max(1.0, step.norm()));
  }
}

TEST_CASE("masked linear edits on a piecewise-affine regressor are exact inside the region") {
  Rng rng(4);
  int tested = 0;
  while (tested < 20) {
    const MlpRegressor m = relu_regressor(rng, 16, 2);
    const Eigen::VectorXd w0 = gaussian(rng, 16, 1);
    EditRequest req = request(w0, forward(m, w0).packed(), 2);
    req.mask = parse_mask("theta,alpha_1", 2);
    for (Index i = 3; i < 7; ++i) req.q_target[i] += 1e-4 * uniform(rng, -1, 1);
    const Eigen::VectorXd w = linear_edit(req, m);
    if (activation_pattern(m, w) != activation_pattern(m, w0)) continue;
    const Eigen::VectorXd q = forward(m, w).packed();
    for (Index i = 3; i < 7; ++i) CHECK(std::abs(q[i] - req.q_target[i]) < 1e-8);
    ++tested;
  }
}

TEST_CASE("uncontrollable component is reported") {
  Rng rng(5);
  MlpRegressor m = linear_regressor(rng, 12, 1);
  m.layers[0].weight.row(4).setZero();
  const Eigen::VectorXd w0 = gaussian(rng, 12, 1);
  EditRequest req = request(w0, forward(m, w0).packed(), 1);
  req.q_target[4] += 0.1;
  req.mask = parse_mask("theta_y", 1);
  try {
    linear_edit(req, m);
    FAIL("expected a numerical failure");
  } catch (const NumericalError& e) {
    CHECK(e.operation() == "linear_edit");
    CHECK(std::string(e.what()).find("not controllable") != std::string::npos);
  }
}

TEST_CASE("edit requests are validated") {
  Rng rng(6);
  const MlpRegressor m = linear_regressor(rng, 12, 1);
  EditRequest req = request(Eigen::VectorXd::Zero(11), Eigen::VectorXd::Zero(9), 1);
  CHECK_THROWS_AS(linear_edit(req, m), DimensionError);
  req.w0 = Eigen::VectorXd::Zero(12);
  req.mask = AttributeMask(9, false);
  CHECK_THROWS_AS(linear_edit(req, m), InvalidArgument);
  req.mask = full_mask(1);
  req.settings.lambda = -1.0;
  CHECK_THROWS_AS(gradient_edit(req, m, SimilarityOracle::latent()), InvalidArgument);
}

TEST_CASE("unregularized gradient edit reaches a linear target") {
  Rng rng(7);
  const MlpRegressor m = linear_regressor(rng, 20, 2);
  const Eigen::VectorXd w0 = gaussian(rng, 20, 1);
  const Eigen::VectorXd target = forward(m, w0).packed() + 0.3 * gaussian(rng, 10, 1);
  EditRequest req = request(w0, target, 2);
  req.settings.method = EditMethod::Gradient;
  req.settings.max_steps = 500;
  req.settings.tolerance = 1e-12;
  const EditResult r = gradient_edit(req, m, SimilarityOracle::latent());
  CHECK(r.steps <= 500);
  CHECK((forward(m, r.w).packed() - target).norm() < 1e-6);
}

TEST_CASE("gradient edit never ends above its initial attribute loss") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpRegressor m = relu_regressor(rng, 12, 2);
    const Eigen::VectorXd w0 = gaussian(rng, 12, 1);
    EditRequest req = request(w0, forward(m, w0).packed() + gaussian(rng, 10, 1), 2);
    req.settings.method = EditMethod::Gradient;
    req.settings.max_steps = 200;
    const EditResult r = gradient_edit(req, m, SimilarityOracle::latent());
    CHECK(r.attribute_loss <= attribute_loss(m, w0, req.q_target, req.mask));
    CHECK(r.attribute_loss == doctest::Approx(attribute_loss(m, r.w, req.q_target, req.mask)));
    REQUIRE(!r.objective.empty());
    CHECK(r.objective.size() == r.attribute_history.size());
  }
}

TEST_CASE("huge regularization pins the latent") {
  Rng rng(9);
  const MlpRegressor m = relu_regressor(rng, 12, 2);
  const Eigen::VectorXd w0 = gaussian(rng, 12, 1);
  EditRequest req = request(w0, forward(m, w0).packed() + gaussian(rng, 10, 1), 2);
  req.settings.method = EditMethod::Gradient;
  req.settings.lambda = 1e6;
  req.settings.max_steps = 300;
  const EditResult r = gradient_edit(req, m, SimilarityOracle::latent());
  CHECK((r.w - w0).norm() < 1e-3);
  CHECK_FALSE(r.converged);
}

TEST_CASE("attribute transfer fixed point and masked agreement") {
  Rng rng(10);
  const MlpRegressor m = linear_regressor(rng, 20, 2);
  const Eigen::VectorXd w = gaussian(rng, 20, 1);
  EditSettings settings;
  const EditResult same = attribute_transfer(w, w, m, full_mask(2), settings, SimilarityOracle::latent());
  CHECK((same.w - w).norm() < 1e-12);
  const Eigen::VectorXd src = gaussian(rng, 20, 1);
  const AttributeMask mask = parse_mask("theta", 2);
  const EditResult moved = attribute_transfer(src, w, m, mask, settings, SimilarityOracle::latent());
  CHECK((forward(m, moved.w).theta() - forward(m, src).theta()).norm() < 1e-8);
}

TEST_CASE("metric of the squared Euclidean distance is twice the identity") {
  Rng rng(11);
  const Eigen::VectorXd w0 = gaussian(rng, 10, 1);
  const MetricModel metric = estimate_metric(SimilarityOracle::latent(), w0, 10, 10);
  const Eigen::MatrixXd two = 2.0 * Eigen::MatrixXd::Identity(10, 10);
  CHECK((metric.H - two).norm() / two.norm() < 5e-2);
  CHECK(metric.rank() == 10);
  CHECK((metric.truncated() - metric.H).norm() < 1e-10);
  CHECK_FALSE(metric.clamped);
  Eigen::VectorXd unit = gaussian(rng, 10, 1).normalized();
  CHECK(metric_norm(metric, unit) == doctest::Approx(2.0).epsilon(5e-2));
  CHECK(metric_norm(metric, Eigen::VectorXd::Zero(10)) == 0.0);
}

TEST_CASE("metric estimate structure on a quadratic and on the nuisance distance") {
  Rng rng(12);
  const Eigen::MatrixXd G = gaussian(rng, 8, 8);
  const Eigen::MatrixXd A = G * G.transpose();
  const Eigen::VectorXd w0 = gaussian(rng, 8, 1);
  const MetricModel q = estimate_metric(SimilarityOracle::quadratic(A), w0, 16, 8);
  CHECK((q.H - q.H.transpose()).norm() < 1e-10);
  CHECK((q.H - 2.0 * A).norm() / (2.0 * A).norm() < 1e-6);
  for (Index i = 1; i < q.rank(); ++i) CHECK(q.eigenvalues[i] <= q.eigenvalues[i - 1]);
  CHECK(q.eigenvalues.minCoeff() >= -1e-10);

  WorldConfig cfg;
  const SyntheticGenerator world = make_world(cfg);
  const Eigen::VectorXd w = gaussian(rng, cfg.latent_dim, 1);
  const auto oracle = SimilarityOracle::nuisance(world);
  double previous = std::numeric_limits<double>::infinity();
  for (Index r : {1, 4, 8, 16, 32, 64}) {
    const MetricModel m = estimate_metric(oracle, w, cfg.latent_dim, r);
    const double err = (m.H - m.truncated()).norm() / m.H.norm();
    CHECK(err <= previous + 1e-12);
    previous = err;
  }
  CHECK(previous < 1e-10);
}

TEST_CASE("metric norm is a quadratic form and homogeneous of degree two") {
  Rng rng(13);
  const Eigen::MatrixXd G = gaussian(rng, 8, 8);
  const MetricModel m = estimate_metric(SimilarityOracle::quadratic(G * G.transpose()), gaussian(rng, 8, 1), 8, 5);
  const Eigen::MatrixXd Hr = m.truncated();
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd v = gaussian(rng, 8, 1);
    const double n = metric_norm(m, v);
    CHECK(n >= 0.0);
    CHECK(std::abs(n - v.dot(Hr * v)) < 1e-10 * std::max(1.0, n));
    const double c = uniform(rng, -4, 4);
    CHECK(std::abs(metric_norm(m, c * v) - c * c * n) < 1e-12 * std::max(1.0, c * c * n));
  }
  CHECK_THROWS_AS(metric_norm(m, Eigen::VectorXd::Zero(7)), DimensionError);
  CHECK_THROWS_AS(estimate_metric(SimilarityOracle::latent(), Eigen::VectorXd::Zero(8), 7, 4), InvalidArgument);
  CHECK_THROWS_AS(estimate_metric(SimilarityOracle::latent(), Eigen::VectorXd::Zero(8), 8, 9), InvalidArgument);
}

TEST_CASE("pseudo-inverse preconditioner inverts on the retained subspace") {
  Rng rng(14);
  const Eigen::MatrixXd G = gaussian(rng, 6, 6);
  const MetricModel m = estimate_metric(SimilarityOracle::quadratic(G * G.transpose()), gaussian(rng, 6, 1), 6, 6);
  const Eigen::VectorXd g = gaussian(rng, 6, 1);
  CHECK((m.H * m.apply_pseudo_inverse(g) - g).norm() < 1e-6 * g.norm());
}
