#include "nrsfm/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "nrsfm/adam.hpp"
#include "nrsfm/shape_model.hpp"

namespace nrsfm {

std::vector<Index> MlpRegressor::hidden_sizes() const {
  std::vector<Index> out;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) out.push_back(layers[l].weight.rows());
  return out;
}

void MlpRegressor::validate() const {
  if (layers.empty()) throw DimensionError("regressor has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    if (layer.bias.size() != layer.weight.rows())
      throw DimensionError("regressor layer " + std::to_string(l) + ": bias length does not match");
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows())
      throw DimensionError("regressor layer " + std::to_string(l) + ": input width " +
                           std::to_string(layer.weight.cols()) + " does not match previous output " +
                           std::to_string(layers[l - 1].weight.rows()));
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw DimensionError("regressor layer " + std::to_string(l) + " has non-finite parameters");
  }
  if (output_mean.size() != output_dim() || output_scale.size() != output_dim())
    throw DimensionError("regressor output normalization has the wrong length");
  if (output_dim() < layout::kFixed) throw DimensionError("regressor output dimension below 8");
}

MlpRegressor make_regressor(Index input_dim, Index output_dim, const std::vector<Index>& hidden,
                            std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1) throw InvalidArgument("make_regressor: dimensions must be positive");
  std::mt19937_64 rng(seed);
  MlpRegressor model;
  Index fan_in = input_dim;
  auto add = [&](Index out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, fan_in);
    for (Index j = 0; j < fan_in; ++j)
      for (Index i = 0; i < out; ++i) layer.weight(i, j) = uni(rng);
    layer.bias = Eigen::VectorXd::Zero(out);
    model.layers.push_back(std::move(layer));
    fan_in = out;
  };
  for (Index h : hidden) {
    if (h < 1) throw InvalidArgument("make_regressor: hidden widths must be positive");
    add(h);
  }
  add(output_dim);
  model.output_mean = Eigen::VectorXd::Zero(output_dim);
  model.output_scale = Eigen::VectorXd::Ones(output_dim);
  return model;
}

namespace {

void check_input(const MlpRegressor& model, Index dim) {
  if (dim != model.input_dim())
    throw DimensionError("regressor expects latent dimension " + std::to_string(model.input_dim()) +
                         ", got " + std::to_string(dim));
}

// Pre-activations of every hidden layer plus the normalized output.
struct Trace {
  std::vector<Eigen::MatrixXd> pre;   // hidden pre-activations
  std::vector<Eigen::MatrixXd> act;   // act[0] = input, act[l] = relu(pre[l-1])
  Eigen::MatrixXd output;             // normalized
};

Trace run(const MlpRegressor& model, const Eigen::MatrixXd& inputs) {
  Trace t;
  t.act.push_back(inputs);
  const std::size_t n = model.layers.size();
  for (std::size_t l = 0; l + 1 < n; ++l) {
    Eigen::MatrixXd z = model.layers[l].weight * t.act.back();
    z.colwise() += model.layers[l].bias;
    t.act.push_back(z.cwiseMax(0.0));
    t.pre.push_back(std::move(z));
  }
  t.output = model.layers.back().weight * t.act.back();
  t.output.colwise() += model.layers.back().bias;
  return t;
}

Eigen::MatrixXd denormalize(const MlpRegressor& model, const Eigen::MatrixXd& y) {
  return (model.output_scale.asDiagonal() * y).colwise() + model.output_mean;
}

}  // namespace

Eigen::MatrixXd forward_batch(const MlpRegressor& model, const Eigen::MatrixXd& inputs) {
  check_input(model, inputs.rows());
  return denormalize(model, run(model, inputs).output);
}

AttributeVector forward(const MlpRegressor& model, const Eigen::VectorXd& w) {
  return AttributeVector(Eigen::VectorXd(forward_batch(model, w)));
}

Eigen::MatrixXd jacobian(const MlpRegressor& model, const Eigen::VectorXd& w) {
  check_input(model, w.size());
  const Trace t = run(model, w);
  Eigen::MatrixXd G = model.output_scale.asDiagonal() * model.layers.back().weight;
  for (std::size_t l = model.layers.size() - 1; l-- > 0;) {
    const Eigen::ArrayXd mask = (t.pre[l].array() > 0.0).cast<double>();
    G = (G.array().rowwise() * mask.transpose()).matrix() * model.layers[l].weight;
  }
  return G;
}

Eigen::VectorXd gradient_wrt_input(const MlpRegressor& model, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& upstream) {
  check_input(model, w.size());
  if (upstream.size() != model.output_dim())
    throw DimensionError("gradient_wrt_input: upstream has length " + std::to_string(upstream.size()) +
                         ", expected " + std::to_string(model.output_dim()));
  const Trace t = run(model, w);
  Eigen::VectorXd g = model.layers.back().weight.transpose() * upstream.cwiseProduct(model.output_scale);
  for (std::size_t l = model.layers.size() - 1; l-- > 0;) {
    g = g.cwiseProduct((t.pre[l].array() > 0.0).cast<double>().matrix());
    g = model.layers[l].weight.transpose() * g;
  }
  return g;
}

double min_abs_preactivation(const MlpRegressor& model, const Eigen::VectorXd& w) {
  check_input(model, w.size());
  const Trace t = run(model, w);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& z : t.pre) m = std::min(m, z.cwiseAbs().minCoeff());
  return m;
}

std::vector<bool> activation_pattern(const MlpRegressor& model, const Eigen::VectorXd& w) {
  check_input(model, w.size());
  const Trace t = run(model, w);
  std::vector<bool> out;
  for (const auto& z : t.pre)
    for (Index i = 0; i < z.size(); ++i) out.push_back(z(i) > 0.0);
  return out;
}

double mean_landmark_loss(const MlpRegressor& model, const BasisSet& basis,
                          const std::vector<Eigen::VectorXd>& latents, const std::vector<Shape2D>& shapes,
                          const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  Eigen::MatrixXd W(model.input_dim(), static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) W.col(static_cast<Index>(i)) = latents[indices[i]];
  const Eigen::MatrixXd Q = forward_batch(model, W);
  double total = 0.0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const AttributeVector q(Eigen::VectorXd(Q.col(static_cast<Index>(i))));
    total += (project(q, basis) - shapes[indices[i]]).squaredNorm();
  }
  return total / static_cast<double>(indices.size());
}

TrainedRegressor train(const std::vector<Eigen::VectorXd>& latents, const std::vector<Shape2D>& shapes,
                       const BasisSet& basis, const TrainingConfig& cfg) {
  if (latents.empty() || shapes.empty()) throw InvalidArgument("train: empty dataset");
  if (latents.size() != shapes.size()) throw DimensionError("train: latents and shapes differ in count");
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0))
    throw InvalidArgument("train: validation fraction must lie in (0, 1)");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || !(cfg.learning_rate > 0.0))
    throw InvalidArgument("train: batch size, epochs and learning rate must be positive");
  basis.validate();
  const Index d_w = latents.front().size();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].cols() != basis.L())
      throw DimensionError("train: shape " + std::to_string(i) + " has " + std::to_string(shapes[i].cols()) +
                           " landmarks, basis has " + std::to_string(basis.L()));
    if (latents[i].size() != d_w) throw DimensionError("train: latent dimensions are inconsistent");
  }

  const std::size_t N = shapes.size();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = N > 1 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                             cfg.validation_fraction * static_cast<double>(N))))
                            : 0;
  n_val = std::min(n_val, N - 1);

  TrainedRegressor out;
  TrainingReport& report = out.report;
  report.validation_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  report.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const auto& train_idx = report.train_indices;

  // Attribute labels for output normalization (and the optional q-space loss).
  const Index q_dim = layout::dimension(basis.K());
  std::vector<Eigen::VectorXd> labels(N);
  for (std::size_t i : train_idx) labels[i] = fit_q(shapes[i], basis).q.packed();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(q_dim);
  for (std::size_t i : train_idx) mean += labels[i];
  mean /= static_cast<double>(train_idx.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(q_dim);
  for (std::size_t i : train_idx) var += (labels[i] - mean).cwiseAbs2();
  var /= static_cast<double>(train_idx.size());
  Eigen::VectorXd scale = var.cwiseSqrt();
  for (Index j = 0; j < q_dim; ++j)
    if (!(scale[j] > 1e-12)) scale[j] = 1.0;

  MlpRegressor model = make_regressor(d_w, q_dim, cfg.hidden, cfg.seed ^ 0x5eedULL);
  model.output_mean = mean;
  model.output_scale = scale;

  std::vector<AdamMoments> mom_w, mom_b;
  for (const auto& layer : model.layers) {
    mom_w.emplace_back(layer.weight.rows(), layer.weight.cols());
    mom_b.emplace_back(layer.bias.size(), 1);
  }
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;

  auto evaluate = [&](const MlpRegressor& m, const std::vector<std::size_t>& idx) {
    return mean_landmark_loss(m, basis, latents, shapes, idx);
  };

  report.initial_train_loss = evaluate(model, train_idx);
  double best_val = std::numeric_limits<double>::infinity();
  MlpRegressor best = model;
  int since_best = 0;
  long step = 0;
  std::vector<std::size_t> perm = train_idx;
  const std::size_t n_layers = model.layers.size();
  const Index B = cfg.batch_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(B)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(B));
      const Index nb = static_cast<Index>(stop - start);
      Eigen::MatrixXd Win(d_w, nb);
      for (Index c = 0; c < nb; ++c) Win.col(c) = latents[perm[start + static_cast<std::size_t>(c)]];

      const Trace t = run(model, Win);
      const Eigen::MatrixXd Q = denormalize(model, t.output);
      Eigen::MatrixXd dY(q_dim, nb);
      double batch_loss = 0.0;
      for (Index c = 0; c < nb; ++c) {
        const std::size_t i = perm[start + static_cast<std::size_t>(c)];
        const AttributeVector q(Eigen::VectorXd(Q.col(c)));
        const Shape2D E = project(q, basis) - shapes[i];
        batch_loss += E.squaredNorm();
        const Eigen::Map<const Eigen::VectorXd> r(E.data(), E.size());
        Eigen::VectorXd dq = 2.0 * jacobian_q(q, basis).transpose() * r;
        dY.col(c) = dq.cwiseProduct(scale);
        if (cfg.q_loss_weight > 0.0) {
          const Eigen::VectorXd dz = t.output.col(c) - (labels[i] - mean).cwiseQuotient(scale);
          batch_loss += cfg.q_loss_weight * dz.squaredNorm();
          dY.col(c) += 2.0 * cfg.q_loss_weight * dz;
        }
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite landmark loss at epoch " << epoch << ", step " << step
            << " (learning rate " << cfg.learning_rate << ")";
        throw NumericalError("train", msg.str());
      }
      dY /= static_cast<double>(nb);

      ++step;
      Eigen::MatrixXd dZ = std::move(dY);
      for (std::size_t l = n_layers; l-- > 0;) {
        const Eigen::MatrixXd gW = dZ * t.act[l].transpose();
        const Eigen::VectorXd gb = dZ.rowwise().sum();
        if (l > 0) {
          Eigen::MatrixXd dH = model.layers[l].weight.transpose() * dZ;
          dZ = dH.cwiseProduct((t.pre[l - 1].array() > 0.0).cast<double>().matrix());
        }
        if (cfg.weight_decay > 0.0) model.layers[l].weight *= 1.0 - cfg.learning_rate * cfg.weight_decay;
        mom_w[l].update(model.layers[l].weight, gW, cfg.learning_rate, adam, step);
        mom_b[l].update(model.layers[l].bias, gb, cfg.learning_rate, adam, step);
      }
    }

    const double train_loss = evaluate(model, train_idx);
    const double val_loss = report.validation_indices.empty() ? train_loss
                                                              : evaluate(model, report.validation_indices);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw NumericalError("train", "non-finite loss after epoch " + std::to_string(epoch));
    report.train_loss.push_back(train_loss);
    report.validation_loss.push_back(val_loss);
    if (cfg.on_epoch) cfg.on_epoch(epoch, train_loss, val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best = model;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  out.model = std::move(best);
  return out;
}

}  // namespace nrsfm
