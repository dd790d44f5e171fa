#include "nrsfm/editing.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "nrsfm/adam.hpp"

namespace nrsfm {

AttributeMask full_mask(Index num_shapes) {
  return AttributeMask(static_cast<std::size_t>(layout::dimension(num_shapes)), true);
}

AttributeMask parse_mask(const std::string& spec, Index num_shapes) {
  const Index dim = layout::dimension(num_shapes);
  AttributeMask mask(static_cast<std::size_t>(dim), false);
  const std::vector<std::string> names = attribute_names(num_shapes);
  auto set_range = [&](Index begin, Index count) {
    for (Index i = begin; i < begin + count; ++i) mask[static_cast<std::size_t>(i)] = true;
  };
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "all") {
      set_range(0, dim);
    } else if (item == "camera" || item == "k") {
      set_range(layout::kCamera, 3);
    } else if (item == "theta" || item == "rotation") {
      set_range(layout::kTheta, 3);
    } else if (item == "pose") {
      set_range(0, 6);
    } else if (item == "alpha" || item == "shape") {
      set_range(layout::kAlpha, num_shapes);
    } else if (item == "t" || item == "translation") {
      set_range(layout::translation(num_shapes), 2);
    } else {
      const auto it = std::find(names.begin(), names.end(), item);
      if (it == names.end()) throw InvalidArgument("unknown attribute component '" + item + "'");
      mask[static_cast<std::size_t>(it - names.begin())] = true;
    }
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw InvalidArgument("attribute mask selects no components");
  return mask;
}

namespace {

std::vector<Index> selected(const AttributeMask& mask, Index dim) {
  if (static_cast<Index>(mask.size()) != dim)
    throw DimensionError("attribute mask has " + std::to_string(mask.size()) + " entries, expected " +
                         std::to_string(dim));
  std::vector<Index> rows;
  for (Index i = 0; i < dim; ++i)
    if (mask[static_cast<std::size_t>(i)]) rows.push_back(i);
  if (rows.empty()) throw InvalidArgument("attribute mask selects no components");
  return rows;
}

void check_request(const EditRequest& req, const MlpRegressor& model) {
  if (req.w0.size() != model.input_dim())
    throw DimensionError("edit: w0 has dimension " + std::to_string(req.w0.size()) + ", regressor expects " +
                         std::to_string(model.input_dim()));
  if (req.q_target.size() != model.output_dim())
    throw DimensionError("edit: q_target has dimension " + std::to_string(req.q_target.size()) +
                         ", regressor predicts " + std::to_string(model.output_dim()));
  if (!(req.settings.lambda >= 0.0)) throw InvalidArgument("edit: lambda must be non-negative");
}

}  // namespace

double attribute_loss(const MlpRegressor& model, const Eigen::VectorXd& w, const AttributeVector& q_target,
                      const AttributeMask& mask) {
  const Eigen::VectorXd q = forward(model, w).packed();
  double total = 0.0;
  for (Index i : selected(mask, q.size())) {
    const double r = (q[i] - q_target[i]) / model.output_scale[i];
    total += r * r;
  }
  return total;
}

Eigen::VectorXd linear_edit(const EditRequest& req, const MlpRegressor& model) {
  check_request(req, model);
  const std::vector<Index> rows = selected(req.mask, model.output_dim());
  const Eigen::VectorXd q0 = forward(model, req.w0).packed();
  const Eigen::MatrixXd J = jacobian(model, req.w0);

  const Index m = static_cast<Index>(rows.size());
  Eigen::MatrixXd Jm(m, J.cols());
  Eigen::VectorXd delta(m);
  for (Index r = 0; r < m; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    const double s = model.output_scale[i];
    Jm.row(r) = J.row(i) / s;
    delta[r] = (req.q_target[i] - q0[i]) / s;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Jm, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv[0] > 1e-300))
    throw NumericalError("linear_edit", "attribute not controllable at w0");
  const double cutoff = req.settings.pinv_tolerance * sv[0];
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) inv[i] = 1.0 / sv[i];
  const Eigen::VectorXd step = svd.matrixV() * inv.asDiagonal() * (svd.matrixU().transpose() * delta);
  return req.w0 + step;
}

EditResult gradient_edit(const EditRequest& req, const MlpRegressor& model, const SimilarityOracle& oracle) {
  check_request(req, model);
  const EditSettings& cfg = req.settings;
  const std::vector<Index> rows = selected(req.mask, model.output_dim());
  if (cfg.preconditioner && cfg.preconditioner->dim() != req.w0.size())
    throw DimensionError("gradient_edit: metric dimension does not match the latent dimension");

  Eigen::VectorXd w = req.w0;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  AdamMoments mom(w.size(), 1);

  EditResult out;
  Eigen::VectorXd best_w = w;
  double best_objective = std::numeric_limits<double>::infinity();
  double best_attr = 0.0, best_reg = 0.0;
  out.converged = false;

  for (int step = 0; step <= cfg.max_steps; ++step) {
    const Eigen::VectorXd q = forward(model, w).packed();
    Eigen::VectorXd upstream = Eigen::VectorXd::Zero(q.size());
    double attr = 0.0;
    for (Index i : rows) {
      const double s = model.output_scale[i];
      const double r = (q[i] - req.q_target[i]) / s;
      attr += r * r;
      upstream[i] = 2.0 * r / s;
    }
    const double reg = cfg.lambda > 0.0 ? oracle.distance(w, req.w0) : 0.0;
    const double objective = attr + cfg.lambda * reg;
    if (!std::isfinite(objective))
      throw NumericalError("gradient_edit", "non-finite loss at step " + std::to_string(step));
    out.objective.push_back(objective);
    out.attribute_history.push_back(attr);
    out.regularizer_history.push_back(reg);
    if (objective < best_objective) {
      best_objective = objective;
      best_w = w;
      best_attr = attr;
      best_reg = reg;
    }
    if (attr < cfg.tolerance) {
      out.converged = true;
      out.w = w;
      out.steps = step;
      out.attribute_loss = attr;
      out.regularizer = reg;
      return out;
    }
    if (step == cfg.max_steps) break;

    Eigen::VectorXd grad = gradient_wrt_input(model, w, upstream);
    if (cfg.lambda > 0.0) grad += cfg.lambda * oracle.gradient(w, req.w0);
    if (cfg.preconditioner) grad = cfg.preconditioner->apply_pseudo_inverse(grad);
    mom.update(w, grad, cfg.learning_rate, adam, step + 1);
  }
  out.w = best_w;
  out.steps = cfg.max_steps;
  out.attribute_loss = best_attr;
  out.regularizer = best_reg;
  return out;
}

EditResult apply_edit(const EditRequest& req, const MlpRegressor& model, const SimilarityOracle& oracle) {
  if (req.settings.method == EditMethod::Gradient) return gradient_edit(req, model, oracle);
  EditResult out;
  out.w = linear_edit(req, model);
  out.attribute_loss = attribute_loss(model, out.w, req.q_target, req.mask);
  out.converged = true;
  return out;
}

EditResult attribute_transfer(const Eigen::VectorXd& w_src, const Eigen::VectorXd& w_tgt,
                              const MlpRegressor& model, const AttributeMask& components,
                              const EditSettings& settings, const SimilarityOracle& oracle) {
  const AttributeVector q_src = forward(model, w_src);
  EditRequest req;
  req.w0 = w_tgt;
  req.q_target = forward(model, w_tgt);
  req.mask = components;
  req.settings = settings;
  for (Index i : selected(components, model.output_dim())) req.q_target[i] = q_src[i];
  return apply_edit(req, model, oracle);
}

Eigen::MatrixXd MetricModel::truncated() const {
  return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
}

Eigen::VectorXd MetricModel::apply_pseudo_inverse(const Eigen::VectorXd& g) const {
  if (g.size() != dim()) throw DimensionError("metric: vector dimension mismatch");
  const double top = eigenvalues.size() ? eigenvalues[0] : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(eigenvalues.size());
  for (Index i = 0; i < eigenvalues.size(); ++i)
    if (eigenvalues[i] > 1e-12 * top) inv[i] = 1.0 / eigenvalues[i];
  return eigenvectors * inv.asDiagonal() * (eigenvectors.transpose() * g);
}

MetricModel estimate_metric(const SimilarityOracle& oracle, const Eigen::VectorXd& w0, Index probes, Index rank,
                            double step, std::uint64_t seed) {
  const Index d = w0.size();
  if (probes < d) throw InvalidArgument("estimate_metric: need at least d_w probes");
  if (rank < 1 || rank > d) throw InvalidArgument("estimate_metric: rank must lie in [1, d_w]");
  if (!(step > 0.0)) throw InvalidArgument("estimate_metric: step must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd V(d, probes);
  for (Index j = 0; j < probes; ++j)
    for (Index i = 0; i < d; ++i) V(i, j) = normal(rng);
  {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(V.leftCols(d));
    V.leftCols(d) = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  }
  for (Index j = d; j < probes; ++j) V.col(j).normalize();

  // Columns of G approximate H v_j.
  Eigen::MatrixXd G(d, probes);
  for (Index j = 0; j < probes; ++j) {
    const Eigen::VectorXd h = step * V.col(j);
    G.col(j) = (oracle.gradient(w0 + h, w0) - oracle.gradient(w0 - h, w0)) / (2.0 * step);
  }
  // H V = G in the least-squares sense: H = G V^T (V V^T)^-1.
  const Eigen::MatrixXd VVt = V * V.transpose();
  Eigen::MatrixXd H = VVt.ldlt().solve(V * G.transpose()).transpose();
  H = 0.5 * (H + H.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
  Eigen::VectorXd values = eig.eigenvalues().reverse();
  Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();

  MetricModel metric;
  const double top = std::max(std::abs(values[0]), std::abs(values[values.size() - 1]));
  for (Index i = 0; i < values.size(); ++i) {
    if (values[i] < 0.0) {
      if (values[i] < -1e-10 * std::max(1.0, top)) metric.clamped = true;
      values[i] = 0.0;
    }
  }
  metric.H = vectors * values.asDiagonal() * vectors.transpose();
  metric.eigenvalues = values.head(rank);
  metric.eigenvectors = vectors.leftCols(rank);
  return metric;
}

double metric_norm(const MetricModel& metric, const Eigen::VectorXd& v) {
  if (v.size() != metric.dim()) throw DimensionError("metric_norm: vector dimension mismatch");
  const Eigen::VectorXd c = metric.eigenvectors.transpose() * v;
  return c.dot(metric.eigenvalues.cwiseProduct(c));
}

}  // namespace nrsfm
