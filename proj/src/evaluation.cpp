#include "nrsfm/evaluation.hpp"

#include <cstdio>
#include <random>
#include <sstream>

#include "nrsfm/shape_model.hpp"

namespace nrsfm {

std::vector<EditSpec> parse_edit_set(const std::string& spec, Index num_shapes) {
  const std::vector<std::string> names = attribute_names(num_shapes);
  auto component = [&](const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("unknown attribute component '" + name + "'");
    return static_cast<Index>(it - names.begin());
  };
  auto make = [&](const std::string& name, double delta) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%+g", name.c_str(), delta);
    return EditSpec{buf, component(name), delta};
  };

  std::vector<EditSpec> out;
  if (spec == "identity") {
    out.push_back(EditSpec{"identity", 0, 0.0});
    return out;
  }
  if (spec == "default") {
    for (const char* name : {"theta_x", "theta_y"}) {
      out.push_back(make(name, 0.5));
      out.push_back(make(name, -0.5));
    }
    if (num_shapes > 0) {
      out.push_back(make("alpha_1", 0.5));
      out.push_back(make("alpha_1", -0.5));
    }
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArgument("edit '" + item + "' is not of the form name=delta");
    const std::string name = item.substr(0, eq);
    double delta = 0.0;
    try {
      delta = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw InvalidArgument("edit '" + item + "' has a malformed delta");
    }
    out.push_back(make(name, delta));
  }
  if (out.empty()) throw InvalidArgument("empty edit set");
  return out;
}

double landmark_loss(const MlpRegressor& model, const BasisSet& basis, const SyntheticGenerator& world,
                     const Eigen::VectorXd& w, std::uint64_t call_index) {
  if (basis.L() != world.config().L)
    throw DimensionError("landmark_loss: basis has L=" + std::to_string(basis.L()) + ", world has L=" +
                         std::to_string(world.config().L));
  const Shape2D observed = world.observe(w, call_index).landmarks;
  return (project(forward(model, w), basis) - observed).squaredNorm();
}

EvalReport evaluate_edits(const MlpRegressor& model, const BasisSet& basis, const SyntheticGenerator& world,
                          Index N, const std::vector<EditSpec>& edits, const EditSettings& settings,
                          std::uint64_t seed) {
  if (N < 1) throw InvalidArgument("evaluate_edits: N must be at least 1");
  if (edits.empty()) throw InvalidArgument("evaluate_edits: empty edit set");
  if (model.input_dim() != world.latent_dim())
    throw DimensionError("evaluate_edits: regressor and world disagree on the latent dimension");

  EvalReport report;
  report.N = N;
  report.edits = edits;
  report.method = settings.method == EditMethod::Linear ? "linear" : "gradient";
  report.lambda = settings.lambda;
  report.seed = seed;

  const SimilarityOracle identity = SimilarityOracle::nuisance(world);
  const Dataset samples = sample_dataset(world, N, seed);
  const Index E = static_cast<Index>(edits.size());

  double base_sum = 0.0;
  double sums[4] = {0.0, 0.0, 0.0, 0.0};
  Index converged = 0;
  for (Index n = 0; n < N; ++n) {
    const Eigen::VectorXd& w = samples.latents[static_cast<std::size_t>(n)];
    const AttributeVector q0 = forward(model, w);
    const double base = (project(q0, basis) - samples.shapes[static_cast<std::size_t>(n)]).squaredNorm();
    report.base_losses.push_back(base);
    base_sum += base;

    for (Index e = 0; e < E; ++e) {
      const EditSpec& spec = edits[static_cast<std::size_t>(e)];
      EditRequest req;
      req.w0 = w;
      req.q_target = q0;
      req.q_target[spec.component] += spec.delta * model.output_scale[spec.component];
      req.mask = full_mask(model.num_shapes());
      req.settings = settings;
      const EditResult res = apply_edit(req, model, identity);

      const std::uint64_t idx = dataset_call_index(seed ^ 0xed17ULL, n * E + e);
      const Shape2D observed = world.observe(res.w, idx).landmarks;
      EditRecord rec;
      rec.sample = n;
      rec.edit = spec.name;
      rec.converged = res.converged;
      const AttributeVector q_edit_hat = forward(model, res.w);
      rec.landmark_loss = (project(q_edit_hat, basis) - observed).squaredNorm();
      rec.phi_loss = (q_edit_hat.packed() - req.q_target.packed()).squaredNorm();
      rec.target_loss = (project(req.q_target, basis) - observed).squaredNorm();
      rec.identity_loss = identity.distance(res.w, w);
      if (rec.converged) {
        sums[0] += rec.landmark_loss;
        sums[1] += rec.phi_loss;
        sums[2] += rec.target_loss;
        sums[3] += rec.identity_loss;
        ++converged;
      } else {
        ++report.unconverged;
      }
      report.records.push_back(std::move(rec));
    }
  }
  report.landmark_loss_base = base_sum / static_cast<double>(N);
  if (converged > 0) {
    const double c = static_cast<double>(converged);
    report.landmark_loss_edit = sums[0] / c;
    report.phi_loss = sums[1] / c;
    report.target_loss = sums[2] / c;
    report.identity_loss = sums[3] / c;
  }
  return report;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "# synthetic-world evaluation; absolute values are not comparable to numbers\n"
     << "# obtained with pretrained image generators and landmark extractors\n";
  os << "# N=" << r.N << " method=" << r.method << " lambda=" << r.lambda << " seed=" << r.seed << " edits=";
  for (std::size_t i = 0; i < r.edits.size(); ++i) os << (i ? "," : "") << r.edits[i].name;
  os << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%14s %14s %14s %14s %14s %12s\n", "L_L(w)", "L_L(w_edit)", "L_phi", "L_R",
                "L_ID", "unconverged");
  os << line;
  std::snprintf(line, sizeof line, "%14.6e %14.6e %14.6e %14.6e %14.6e %12lld\n", r.landmark_loss_base,
                r.landmark_loss_edit, r.phi_loss, r.target_loss, r.identity_loss,
                static_cast<long long>(r.unconverged));
  os << line;
  return os.str();
}

}  // namespace nrsfm
