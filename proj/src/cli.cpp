#include "nrsfm/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "nrsfm/editing.hpp"
#include "nrsfm/evaluation.hpp"
#include "nrsfm/factorization.hpp"
#include "nrsfm/io.hpp"
#include "nrsfm/regressor.hpp"
#include "nrsfm/shape_model.hpp"
#include "nrsfm/svg.hpp"
#include "nrsfm/synthetic.hpp"

namespace nrsfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
};

// Options shared by edit and transfer.
struct EditOptions {
  std::string model;
  std::string method = "linear";
  double lambda = 0.0;
  int steps = 2000;
  double lr = 1e-2;
  double tolerance = 1e-4;
  std::string world;
};

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

json attributes_json(const AttributeVector& q) {
  const auto names = attribute_names(q.num_shapes());
  json obj = json::object();
  for (Index i = 0; i < q.size(); ++i) obj[names[static_cast<std::size_t>(i)]] = q[i];
  return obj;
}

fs::path in_dir_file(const std::string& in, const char* name) {
  const fs::path p(in);
  return fs::is_directory(p) ? p / name : p;
}

fs::path sibling(const std::string& in, const char* name) {
  const fs::path p(in);
  return fs::is_directory(p) ? p / name : p.parent_path() / name;
}

EditMethod parse_method(const std::string& s) {
  if (s == "linear") return EditMethod::Linear;
  if (s == "gradient") return EditMethod::Gradient;
  throw InvalidArgument("unknown edit method '" + s + "' (linear or gradient)");
}

EditSettings make_settings(const EditOptions& o) {
  EditSettings s;
  s.method = parse_method(o.method);
  s.lambda = o.lambda;
  s.max_steps = o.steps;
  s.learning_rate = o.lr;
  s.tolerance = o.tolerance;
  return s;
}

const MlpRegressor& require_regressor(const io::ModelFile& m, const std::string& path) {
  if (!m.regressor) throw InvalidArgument(path + " holds a basis only; run `train` first");
  return *m.regressor;
}

std::vector<Index> parse_hidden(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    Index v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size() || v < 1)
      throw InvalidArgument("hidden layer sizes must be positive integers, got '" + s + "'");
    out.push_back(v);
  }
  return out;
}

// "name=+0.3" (delta) or "name=0.3" (absolute when `absolute`).
void apply_assignment(const std::string& item, bool absolute, AttributeVector& q, const AttributeVector& q0) {
  const auto eq = item.find('=');
  if (eq == std::string::npos) throw InvalidArgument("'" + item + "' is not of the form name=value");
  const std::string name = item.substr(0, eq);
  const auto names = attribute_names(q.num_shapes());
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InvalidArgument("unknown attribute component '" + name + "'");
  std::string text = item.substr(eq + 1);
  if (!text.empty() && text[0] == '+') text.erase(0, 1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw InvalidArgument("'" + item + "' has a malformed value");
  const Index i = static_cast<Index>(it - names.begin());
  q[i] = absolute ? v : q0[i] + v;
}

void write_edit_outputs(const fs::path& out, const std::string& svg_path, const Eigen::VectorXd& w0,
                        const AttributeVector& q_target, const EditResult& res, const MlpRegressor& model,
                        const BasisSet& basis, const EditOptions& o, std::ostream& os) {
  const AttributeVector q_before = forward(model, w0);
  const AttributeVector q_after = forward(model, res.w);
  json j;
  j["w"] = to_json(res.w);
  j["w0"] = to_json(w0);
  j["method"] = o.method;
  j["lambda"] = o.lambda;
  j["converged"] = res.converged;
  j["steps"] = res.steps;
  j["attribute_loss"] = res.attribute_loss;
  j["q_before"] = attributes_json(q_before);
  j["q_target"] = attributes_json(q_target);
  j["q_after"] = attributes_json(q_after);
  io::write_text_atomic(out, j.dump(2) + "\n");

  const fs::path svg = svg_path.empty() ? fs::path(out).replace_extension(".svg") : fs::path(svg_path);
  std::vector<SvgSeries> series;
  series.push_back({project(q_before, basis), "before", "#1f77b4"});
  series.push_back({project(q_after, basis), "after", "#d62728"});
  io::write_text_atomic(svg, landmark_svg(series));

  os << "converged = " << (res.converged ? "true" : "false") << "\n";
  os << "attribute_loss = " << fmt(res.attribute_loss) << "\n";
  os << "edited latent written to " << out.string() << "\n";
  os << "plot written to " << svg.string() << "\n";
}

SimilarityOracle edit_oracle(const EditOptions& o, std::optional<SyntheticGenerator>& world) {
  if (o.world.empty()) return SimilarityOracle::latent();
  world.emplace(make_world(io::read_world_config(o.world)));
  return SimilarityOracle::nuisance(*world);
}

void print_config(const CLI::App& app, const CLI::App& sub, const Globals& g, std::ostream& os) {
  os << "# resolved configuration\n";
  os << "seed=" << g.seed << "\n";
  if (!g.out.empty()) os << "out=\"" << g.out << "\"\n";
  os << "[" << sub.get_name() << "]\n";
  os << sub.config_to_str(true, false);
  (void)app;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rank-one non-rigid structure from motion and latent attribute editing", "nrsfm"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "TOML configuration; one [section] per subcommand");

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--out", g.out, "Output path (file or directory, per subcommand)");

  // synth
  WorldConfig world_cfg;
  Index synth_n = 2000;
  std::string synth_world;
  auto* synth = app.add_subcommand("synth", "Sample a synthetic world and write a landmark dataset");
  synth->add_option("--n", synth_n, "Number of frames")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--k", world_cfg.K, "Number of rank-one basis shapes")->capture_default_str();
  synth->add_option("--l", world_cfg.L, "Landmarks per frame")->capture_default_str();
  synth->add_option("--d-w", world_cfg.latent_dim, "Latent dimension")->capture_default_str();
  synth->add_option("--sigma", world_cfg.sigma, "Landmark noise standard deviation")->capture_default_str();
  synth->add_option("--nuisance-dim", world_cfg.nuisance_dim, "Nuisance feature dimension")->capture_default_str();
  synth->add_option("--nonlinearity", world_cfg.nonlinearity, "Amplitude of the saturating term")
      ->capture_default_str();
  synth->add_option("--world", synth_world, "World configuration file; overrides the flags above");

  // factorize
  std::string fac_in;
  Index fac_k = 4;
  OptimizerConfig opt;
  auto* factorize = app.add_subcommand("factorize", "Recover a rank-one basis from a landmark dataset");
  factorize->add_option("--in", fac_in, "Landmark file or dataset directory")->required();
  factorize->add_option("--k", fac_k, "Number of rank-one basis shapes")->capture_default_str();
  factorize->add_option("--steps", opt.max_steps, "Optimizer steps")->capture_default_str();
  factorize->add_option("--lambda", opt.lambda, "Unit-norm penalty weight")->capture_default_str();
  factorize->add_option("--lr", opt.adam.learning_rate, "Initial learning rate")->capture_default_str();

  // fit
  std::string fit_model, fit_in;
  auto* fit = app.add_subcommand("fit", "Fit attribute vectors to every frame of a landmark file");
  fit->add_option("--model", fit_model, "Model file")->required();
  fit->add_option("--in", fit_in, "Landmark file or dataset directory")->required();

  // train
  std::string train_model, train_in, train_hidden = "512,512,512,512,512";
  TrainingConfig tcfg;
  auto* trainc = app.add_subcommand("train", "Train the latent-to-attribute regressor");
  trainc->add_option("--model", train_model, "Model file providing the basis")->required();
  trainc->add_option("--in", train_in, "Dataset directory with landmarks.txt and latents.txt")->required();
  trainc->add_option("--epochs", tcfg.epochs, "Maximum epochs")->capture_default_str();
  trainc->add_option("--lr", tcfg.learning_rate, "Learning rate")->capture_default_str();
  trainc->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay coefficient")->capture_default_str();
  trainc->add_option("--batch", tcfg.batch_size, "Minibatch size")->capture_default_str();
  trainc->add_option("--patience", tcfg.patience, "Early-stopping patience in epochs")->capture_default_str();
  trainc->add_option("--val", tcfg.validation_fraction, "Validation fraction")->capture_default_str();
  trainc->add_option("--hidden", train_hidden, "Hidden layer widths, comma separated")->capture_default_str();

  // edit
  EditOptions eo;
  std::string edit_w0, edit_svg;
  std::vector<std::string> edit_set, edit_to;
  auto add_edit_options = [](CLI::App* sub, EditOptions& o) {
    sub->add_option("--model", o.model, "Model file with a trained regressor")->required();
    sub->add_option("--method", o.method, "linear or gradient")->capture_default_str();
    sub->add_option("--lambda", o.lambda, "Similarity weight (gradient method)")->capture_default_str();
    sub->add_option("--steps", o.steps, "Gradient steps")->capture_default_str();
    sub->add_option("--lr", o.lr, "Gradient learning rate")->capture_default_str();
    sub->add_option("--tolerance", o.tolerance, "Attribute loss tolerance, normalized units")
        ->capture_default_str();
    sub->add_option("--world", o.world, "World configuration; enables the nuisance similarity measure");
  };
  auto* edit = app.add_subcommand("edit", "Edit attributes of a latent code");
  add_edit_options(edit, eo);
  edit->add_option("--w0", edit_w0, "Latent code as JSON")->required();
  edit->add_option("--set", edit_set, "Relative change, e.g. theta_y=+0.3 (attribute units)");
  edit->add_option("--to", edit_to, "Absolute target, e.g. alpha_1=0.1");
  edit->add_option("--svg", edit_svg, "Before/after landmark plot (default: next to --out)");

  // transfer
  EditOptions to;
  std::string tr_src, tr_tgt, tr_components = "theta", tr_svg;
  auto* transfer = app.add_subcommand("transfer", "Copy attribute components from one latent to another");
  add_edit_options(transfer, to);
  transfer->add_option("--source", tr_src, "Source latent JSON")->required();
  transfer->add_option("--target", tr_tgt, "Target latent JSON")->required();
  transfer->add_option("--components", tr_components, "Components to copy (names or groups)")
      ->capture_default_str();
  transfer->add_option("--svg", tr_svg, "Before/after landmark plot (default: next to --out)");

  // eval
  EditOptions ev;
  std::string ev_edits = "default";
  Index ev_n = 200;
  auto* eval = app.add_subcommand("eval", "Evaluate an edit method on a synthetic world");
  eval->add_option("--model", ev.model, "Model file with a trained regressor")->required();
  eval->add_option("--world", ev.world, "World configuration file")->required();
  eval->add_option("--edits", ev_edits, "default, identity, or name=delta list (normalized units)")
      ->capture_default_str();
  eval->add_option("--n", ev_n, "Number of sampled latents")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--method", ev.method, "linear or gradient")->capture_default_str();
  eval->add_option("--lambda", ev.lambda, "Similarity weight")->capture_default_str();
  eval->add_option("--steps", ev.steps, "Gradient steps")->capture_default_str();
  eval->add_option("--lr", ev.lr, "Gradient learning rate")->capture_default_str();
  eval->add_option("--tolerance", ev.tolerance, "Attribute loss tolerance")->capture_default_str();

  // inspect
  std::string ins_path;
  auto* inspect = app.add_subcommand("inspect", "Summarize a model or landmark file");
  inspect->add_option("path", ins_path, "File to inspect")->required();

  std::vector<const char*> argv{"nrsfm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "nrsfm\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    print_config(app, *sub, g, out);
    if (sub == synth) {
      if (!synth_world.empty()) world_cfg = io::read_world_config(synth_world);
      world_cfg.seed = g.seed;
      const SyntheticGenerator world = make_world(world_cfg);
      const Dataset data = sample_dataset(world, synth_n, g.seed ^ 0x5eedULL);
      const fs::path dir = g.out.empty() ? fs::path("data") : fs::path(g.out);
      fs::create_directories(dir);
      io::LandmarkFile lf;
      lf.L = world_cfg.L;
      lf.seed = g.seed;
      lf.shapes = data.shapes;
      lf.normalized = std::all_of(lf.shapes.begin(), lf.shapes.end(),
                                  [](const Shape2D& X) { return X.minCoeff() >= 0.0 && X.maxCoeff() <= 1.0; });
      io::write_landmarks(dir / "landmarks.txt", lf);
      io::write_latents(dir / "latents.txt", data.latents);
      io::write_truth(dir / "truth.txt", io::TruthSidecar{data.q_true, data.nuisance});
      io::write_world_config(dir / "world.toml", world_cfg);
      out << "frames = " << data.size() << "\nnormalized = " << (lf.normalized ? "true" : "false") << "\n";
      out << "dataset written to " << dir.string() << "\n";
    } else if (sub == factorize) {
      const io::LandmarkFile lf = io::read_landmarks(in_dir_file(fac_in, "landmarks.txt"));
      const MeasurementMatrix meas = assemble_measurement(lf.shapes);
      opt.seed = g.seed;
      const FactorizationResult res = nonrigid_factorization(meas, fac_k, opt);
      const fs::path model_path = g.out.empty() ? fs::path("model.bin") : fs::path(g.out);
      io::write_model(model_path, io::ModelFile{res.basis, std::nullopt});
      out << "final_residual = " << fmt(res.final_residual) << "\n";
      out << "reconstruction_rmse = " << fmt(reconstruction_rmse(res, meas)) << "\n";
      out << "max_unit_norm_deviation = " << fmt(res.max_unit_norm_deviation) << "\n";
      const fs::path world_file = sibling(fac_in, "world.toml");
      if (fs::exists(world_file)) out << "noise_sigma = " << fmt(io::read_world_config(world_file).sigma) << "\n";
      out << "model written to " << model_path.string() << "\n";
    } else if (sub == fit) {
      const io::ModelFile model = io::read_model(fit_model);
      const io::LandmarkFile lf = io::read_landmarks(in_dir_file(fit_in, "landmarks.txt"));
      const auto names = attribute_names(model.basis.K());
      std::string s = "# nrsfm attributes\nversion 1\nN " + std::to_string(lf.N()) + "\nframe";
      for (const auto& n : names) s += " " + n;
      s += " residual\n";
      double total = 0.0;
      for (Index n = 0; n < lf.N(); ++n) {
        const FitResult r = fit_q(lf.shapes[static_cast<std::size_t>(n)], model.basis);
        s += std::to_string(n);
        for (Index i = 0; i < r.q.size(); ++i) s += " " + fmt(r.q[i]);
        s += " " + fmt(r.residual) + "\n";
        total += r.residual;
      }
      const fs::path path = g.out.empty() ? fs::path("attributes.txt") : fs::path(g.out);
      io::write_text_atomic(path, s);
      out << "mean_residual = " << fmt(lf.N() ? total / static_cast<double>(lf.N()) : 0.0) << "\n";
      out << "attributes written to " << path.string() << "\n";
    } else if (sub == trainc) {
      io::ModelFile model = io::read_model(train_model);
      const io::LandmarkFile lf = io::read_landmarks(in_dir_file(train_in, "landmarks.txt"));
      const auto latents = io::read_latents(sibling(train_in, "latents.txt"));
      if (latents.size() != lf.shapes.size())
        throw InvalidArgument("latent and landmark files hold different frame counts");
      tcfg.seed = g.seed;
      tcfg.hidden = parse_hidden(train_hidden);
      tcfg.on_epoch = [&out](int epoch, double tr, double va) {
        out << "epoch " << epoch << " train " << fmt(tr) << " validation " << fmt(va) << "\n";
      };
      const TrainedRegressor trained = train(latents, lf.shapes, model.basis, tcfg);
      model.regressor = trained.model;
      const fs::path path = g.out.empty() ? fs::path(train_model) : fs::path(g.out);
      io::write_model(path, model);
      const auto& rep = trained.report;
      const double best =
          rep.best_epoch >= 0 ? rep.validation_loss[static_cast<std::size_t>(rep.best_epoch)] : 0.0;
      out << "best_epoch = " << rep.best_epoch << "\nbest_validation_loss = " << fmt(best) << "\n";
      out << "model written to " << path.string() << "\n";
    } else if (sub == edit) {
      const io::ModelFile model = io::read_model(eo.model);
      const MlpRegressor& reg = require_regressor(model, eo.model);
      if (edit_set.empty() && edit_to.empty()) throw InvalidArgument("edit: give at least one --set or --to");
      EditRequest req;
      req.w0 = io::read_latent_json(edit_w0);
      const AttributeVector q0 = forward(reg, req.w0);
      req.q_target = q0;
      for (const auto& s : edit_set) apply_assignment(s, false, req.q_target, q0);
      for (const auto& s : edit_to) apply_assignment(s, true, req.q_target, q0);
      req.mask = full_mask(reg.num_shapes());
      req.settings = make_settings(eo);
      std::optional<SyntheticGenerator> world;
      const SimilarityOracle oracle = edit_oracle(eo, world);
      const EditResult res = apply_edit(req, reg, oracle);
      write_edit_outputs(g.out.empty() ? fs::path("edited.json") : fs::path(g.out), edit_svg, req.w0,
                         req.q_target, res, reg, model.basis, eo, out);
    } else if (sub == transfer) {
      const io::ModelFile model = io::read_model(to.model);
      const MlpRegressor& reg = require_regressor(model, to.model);
      const Eigen::VectorXd ws = io::read_latent_json(tr_src);
      const Eigen::VectorXd wt = io::read_latent_json(tr_tgt);
      const AttributeMask mask = parse_mask(tr_components, reg.num_shapes());
      std::optional<SyntheticGenerator> world;
      const SimilarityOracle oracle = edit_oracle(to, world);
      const EditResult res = attribute_transfer(ws, wt, reg, mask, make_settings(to), oracle);
      AttributeVector q_target = forward(reg, wt);
      const AttributeVector q_src = forward(reg, ws);
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) q_target[static_cast<Index>(i)] = q_src[static_cast<Index>(i)];
      write_edit_outputs(g.out.empty() ? fs::path("transferred.json") : fs::path(g.out), tr_svg, wt, q_target,
                         res, reg, model.basis, to, out);
    } else if (sub == eval) {
      const io::ModelFile model = io::read_model(ev.model);
      const MlpRegressor& reg = require_regressor(model, ev.model);
      const SyntheticGenerator world = make_world(io::read_world_config(ev.world));
      const auto edits = parse_edit_set(ev_edits, reg.num_shapes());
      const EvalReport rep = evaluate_edits(reg, model.basis, world, ev_n, edits, make_settings(ev), g.seed);
      out << format_report(rep);
      if (!g.out.empty()) {
        json j;
        j["N"] = rep.N;
        j["method"] = rep.method;
        j["lambda"] = rep.lambda;
        j["seed"] = rep.seed;
        json ed = json::array();
        for (const auto& e : rep.edits) ed.push_back({{"name", e.name}, {"component", e.component}, {"delta", e.delta}});
        j["edits"] = ed;
        j["means"] = {{"L_L_base", rep.landmark_loss_base}, {"L_L_edit", rep.landmark_loss_edit},
                      {"L_phi", rep.phi_loss},            {"L_R", rep.target_loss},
                      {"L_ID", rep.identity_loss},        {"unconverged", rep.unconverged}};
        json recs = json::array();
        for (const auto& r : rep.records)
          recs.push_back({{"sample", r.sample},
                          {"edit", r.edit},
                          {"L_L_base", rep.base_losses[static_cast<std::size_t>(r.sample)]},
                          {"L_L_edit", r.landmark_loss},
                          {"L_phi", r.phi_loss},
                          {"L_R", r.target_loss},
                          {"L_ID", r.identity_loss},
                          {"converged", r.converged}});
        j["records"] = recs;
        io::write_text_atomic(g.out, j.dump(1) + "\n");
        out << "records written to " << g.out << "\n";
      }
    } else if (sub == inspect) {
      std::ifstream probe(ins_path, std::ios::binary);
      if (!probe) throw io::IoError(io::IoErrorKind::Open, "cannot open " + ins_path);
      char magic[8] = {};
      probe.read(magic, sizeof magic);
      probe.close();
      if (std::string(magic, 8) == "NRSFMMOD") {
        const io::ModelFile m = io::read_model(ins_path);
        out << "kind = model\nK = " << m.basis.K() << "\nL = " << m.basis.L() << "\n";
        if (m.regressor) {
          out << "regressor.input_dim = " << m.regressor->input_dim() << "\nregressor.hidden =";
          for (Index h : m.regressor->hidden_sizes()) out << " " << h;
          out << "\n";
        } else {
          out << "regressor = none\n";
        }
      } else {
        const io::LandmarkFile lf = io::read_landmarks(ins_path);
        out << "kind = landmarks\nN = " << lf.N() << "\nL = " << lf.L << "\nnormalized = "
            << (lf.normalized ? "true" : "false") << "\nseed = " << lf.seed << "\n";
      }
    }
  } catch (const NumericalError& e) {
    err << "numerical failure in " << e.what() << "\n";  // what() starts with the operation
    return 2;
  } catch (const io::IoError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace nrsfm
