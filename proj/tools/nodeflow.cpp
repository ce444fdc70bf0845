// nodeflow command line tool.
#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodeflow/bounds.hpp"
#include "nodeflow/config.hpp"
#include "nodeflow/errors.hpp"
#include "nodeflow/experiments.hpp"
#include "nodeflow/nets.hpp"
#include "nodeflow/spectral.hpp"
#include "nodeflow/training.hpp"

namespace nf = nodeflow;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = ".";
  std::string config;
};

std::string in_out_dir(const Globals& g, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.is_absolute() || g.out_dir.empty()) return path;
  std::filesystem::create_directories(g.out_dir);
  return (std::filesystem::path(g.out_dir) / p).string();
}

// sine | moons | csv:<path> | mnist:<dir>
nf::DataSplit load_dataset(const std::string& spec, std::uint64_t seed, std::size_t samples) {
  if (spec == "sine") return {nf::gen_sine(samples ? samples : 500, seed), nf::sine_test_set()};
  if (spec == "moons") return nf::holdout_split(nf::gen_two_moons(samples ? samples : 1000, 0.1, seed), 0.2, seed);
  if (spec.rfind("csv:", 0) == 0) {
    nf::Dataset d = nf::load_csv(spec.substr(4));
    return {d, d};
  }
  if (spec.rfind("mnist:", 0) == 0) {
    const std::string dir = spec.substr(6);
    nf::Dataset train = nf::load_mnist(dir, "train");
    nf::Dataset test = nf::load_mnist(dir, "test");
    std::vector<std::size_t> a(std::min<std::size_t>(samples ? samples : 2000, train.size()));
    std::vector<std::size_t> b(std::min<std::size_t>(1000, test.size()));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = i;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = i;
    return {train.subset(a), test.subset(b)};
  }
  throw nf::ParseError("unknown dataset \"" + spec + "\" (expected sine, moons, csv:<path> or mnist:<dir>)");
}

nf::ShallowFlowNet load_flow_net(const std::string& path) {
  nf::Model m = nf::load_model(path);
  auto* net = std::get_if<nf::ShallowFlowNet>(&m);
  if (!net) throw nf::ContractError(path + " does not hold a flow network");
  return *net;
}

nf::CompactGrid grid_from(const std::string& grid, const std::string& points) {
  if (!points.empty()) return nf::CompactGrid::from_points(nf::load_csv(points).inputs);
  return nf::parse_grid(grid);
}

std::vector<double> parse_list(const std::string& text) {
  nf::Config c;
  c.set("list", text);
  return c.get_doubles("list");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shallow networks with neural ODE flow activations: spectral analysis, stabilization and bounds"};
  app.require_subcommand(1);
  Globals g;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Random seed")
      ->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();
  app.add_option("--config", g.config, "Flat key = value configuration file");

  // lognorm
  auto* lognorm = app.add_subcommand("lognorm", "delta_star and delta_prime of a matrix over Omega_alpha");
  std::string matrix_path;
  double alpha = 0.1;
  lognorm->add_option("--matrix", matrix_path, "Matrix file")->required();
  lognorm->add_option("--alpha", alpha, "Minimal activation slope")->capture_default_str();

  // stabilize
  auto* stab = app.add_subcommand("stabilize", "Perturbation Delta with delta_star(A + Delta) = delta");
  double delta = 0.0;
  std::string out_path;
  std::string stab_model;
  auto* stab_matrix = stab->add_option("--matrix", matrix_path, "Matrix file");
  auto* stab_net = stab->add_option("--model", stab_model, "Flow network; --out then receives the stabilized network");
  stab_matrix->excludes(stab_net);
  stab->add_option("--alpha", alpha)->capture_default_str();
  stab->add_option("--delta", delta, "Target delta")->required();
  stab->add_option("--out", out_path, "Output file for Delta (or the stabilized network)")->required();

  // train
  auto* trn = app.add_subcommand("train", "Train a network");
  std::string arch_name = "flow", dataset = "sine", activation = "leaky-relu", history_path;
  std::size_t d = 10, samples = 0;
  int epochs = 1000, euler_steps = nf::kDefaultEulerSteps;
  std::vector<double> constraint;
  bool freeze_ode = false;
  nf::TrainConfig tc;
  trn->add_option("--arch", arch_name, "flow | shallow | two-hidden")->capture_default_str();
  trn->add_option("--dataset", dataset, "sine | moons | csv:<path> | mnist:<dir>")->capture_default_str();
  trn->add_option("--d", d, "Hidden width")->capture_default_str();
  trn->add_option("--epochs", epochs)->capture_default_str();
  trn->add_option("--samples", samples, "Training samples (0: dataset default)");
  trn->add_option("--alpha", alpha)->capture_default_str();
  trn->add_option("--activation", activation, "leaky-relu | smoothed-leaky-relu")->capture_default_str();
  trn->add_option("--euler-steps", euler_steps)->capture_default_str();
  trn->add_option("--lr-max", tc.lr_max)->capture_default_str();
  trn->add_option("--lr-min", tc.lr_min)->capture_default_str();
  trn->add_option("--cycle", tc.cycle_len)->capture_default_str();
  trn->add_option("--batch", tc.batch, "Batch size (0: full batch up to 1000 samples)");
  trn->add_option("--constraint", constraint, "Target norms c1 c2 of A1 and A2")->expected(2);
  trn->add_flag("--freeze-ode", freeze_ode, "Keep A and b fixed");
  trn->add_option("--out", out_path, "Model file")->required();
  trn->add_option("--history", history_path, "History CSV (default <out>.history.csv)");
  std::string init_model;
  trn->add_option("--init", init_model, "Start from this model instead of a fresh one");

  // attack
  auto* atk = app.add_subcommand("attack", "FGSM accuracy curve");
  std::string model_path, etas_text = "0,0.02,0.04,0.06,0.08,0.1,0.12";
  atk->add_option("--model", model_path)->required();
  atk->add_option("--dataset", dataset)->required();
  atk->add_option("--samples", samples);
  atk->add_option("--etas", etas_text)->capture_default_str();
  atk->add_option("--out", out_path, "CSV file (default stdout)");

  // region
  auto* reg = app.add_subcommand("region", "Where the lower bound assumption holds");
  std::string stabilized_path, grid_spec = "box=-1,1,-1,1;h=0.05", points_path;
  double tbar = 0.3, tstep = 0.05;
  reg->add_option("--model", model_path)->required();
  reg->add_option("--stabilized", stabilized_path)->required();
  reg->add_option("--grid", grid_spec)->capture_default_str();
  reg->add_option("--points", points_path, "CSV whose x columns form the point set");
  reg->add_option("--alpha", alpha)->capture_default_str();
  reg->add_option("--tbar", tbar)->capture_default_str();
  reg->add_option("--tstep", tstep)->capture_default_str();
  reg->add_option("--out", out_path)->required();

  // bounds
  auto* bnd = app.add_subcommand("bounds", "Evaluate and check the upper and lower bounds");
  std::string target = "self";
  bnd->add_option("--model", model_path)->required();
  bnd->add_option("--stabilized", stabilized_path)->required();
  bnd->add_option("--target", target, "self | csv:<path>")->capture_default_str();
  bnd->add_option("--grid", grid_spec)->capture_default_str();
  bnd->add_option("--points", points_path);
  bnd->add_option("--alpha", alpha)->capture_default_str();
  bnd->add_option("--tbar", tbar)->capture_default_str();

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a reproducible experiment");
  std::string exp_name;
  std::vector<std::string> overrides;
  exp->add_option("name", exp_name, "efficiency | example1 | example2 | mnist-desk")->required();
  exp->add_option("--set", overrides, "Override a configuration key (key=value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 5;
  }

  try {
    if (*lognorm) {
      const nf::Matrix a = nf::load_matrix(matrix_path);
      const nf::OmegaBox box(a.rows(), alpha);
      const auto ds = nf::delta_star(a, box, {.seed = g.seed});
      const double dp = nf::delta_prime(a, box, {.seed = g.seed});
      nlohmann::ordered_json j;
      j["delta_star"] = ds.value;
      j["delta_prime"] = dp;
      j["argmax"] = ds.argmax.to_string();
      j["method"] = nf::to_string(ds.method);
      std::cout << j.dump() << '\n';
    } else if (*stab) {
      if (matrix_path.empty() == stab_model.empty()) throw nf::ParseError("stabilize: give --matrix or --model");
      const std::optional<nf::ShallowFlowNet> net =
          stab_model.empty() ? std::nullopt : std::optional(load_flow_net(stab_model));
      const nf::Matrix a = net ? net->ode.A : nf::load_matrix(matrix_path);
      nf::StabilizeOptions so;
      so.lognorm.seed = g.seed;
      const auto r = nf::stabilize(a, nf::OmegaBox(a.rows(), alpha), delta, so);
      if (net) {
        nf::save_model(in_out_dir(g, out_path), nf::stabilized(*net, r));
      } else {
        nf::save_matrix(in_out_dir(g, out_path), r.Delta);
      }
      nlohmann::ordered_json j;
      j["delta_target"] = r.delta_target;
      j["delta_achieved"] = r.delta_achieved;
      j["frob_norm"] = r.frob_norm;
      j["baseline_norm"] = r.baseline_norm;
      j["iterations"] = r.iterations;
      j["source"] = r.source;
      std::cout << j.dump() << '\n';
    } else if (*trn) {
      const nf::ActivationSpec act = nf::parse_activation_kind(activation) == nf::ActivationKind::leaky_relu
                                         ? nf::ActivationSpec::leaky_relu(alpha)
                                         : nf::ActivationSpec::smoothed(alpha);
      const nf::DataSplit data = load_dataset(dataset, g.seed, samples);
      tc.epochs = epochs;
      tc.seed = g.seed;
      tc.freeze_ode = freeze_ode;
      if (!constraint.empty()) tc.constraint = nf::NormConstraint{constraint[0], constraint[1]};
      nf::Model model = init_model.empty()
                            ? nf::make_model(nf::parse_arch(arch_name), data.train.input_dim(), d,
                                             data.train.output_dim(), act, euler_steps, g.seed)
                            : nf::load_model(init_model);
      const auto result = nf::train(std::move(model), data.train, &data.test, tc);
      const std::string model_file = in_out_dir(g, out_path);
      nf::save_model(model_file, result.model);
      std::ofstream h(history_path.empty() ? model_file + ".history.csv" : in_out_dir(g, history_path));
      nf::write_history(h, result.history);
      const auto& last = result.history.back();
      nlohmann::ordered_json j;
      j["epochs"] = last.epoch;
      j["train_loss"] = last.train_loss;
      j["test_loss"] = last.test_loss;
      if (data.train.task() == nf::TaskKind::classification) {
        j["train_accuracy"] = nf::accuracy(result.model, data.train);
        j["test_accuracy"] = nf::accuracy(result.model, data.test);
      }
      std::cout << j.dump() << '\n';
    } else if (*atk) {
      const nf::Model model = nf::load_model(model_path);
      const nf::DataSplit data = load_dataset(dataset, g.seed, samples);
      const auto etas = parse_list(etas_text);
      const auto rep = nf::attack_curve(model, data.test, etas);
      std::ostringstream os;
      os << "eta,accuracy\n";
      for (std::size_t i = 0; i < rep.etas.size(); ++i) {
        os << nf::format_double(rep.etas[i]) << ',' << nf::format_double(rep.accuracy[i]) << '\n';
      }
      if (out_path.empty()) {
        std::cout << os.str();
      } else {
        std::ofstream(in_out_dir(g, out_path)) << os.str();
      }
    } else if (*reg) {
      const auto net = load_flow_net(model_path);
      const auto netbar = load_flow_net(stabilized_path);
      const nf::CompactGrid grid = grid_from(grid_spec, points_path);
      const nf::Matrix Delta = netbar.ode.A - net.ode.A;
      nf::RegionOptions ro;
      ro.tbar = tbar;
      ro.tstep = tstep;
      const auto map = nf::region_map(net, netbar, Delta, grid, nf::OmegaBox(net.hidden_dim(), alpha), ro);
      std::ofstream out(in_out_dir(g, out_path));
      for (std::size_t j = 0; j < grid.dim(); ++j) out << 'x' << j + 1 << ',';
      out << "eta,holds,undefined\n";
      for (const auto& p : map.points) {
        for (double v : p.x) out << nf::format_double(v) << ',';
        out << (p.undefined ? std::string("nan") : nf::format_double(p.eta)) << ',' << p.holds << ','
            << p.undefined << '\n';
      }
      std::cout << "{\"fraction_green\":" << nf::format_double(map.fraction_green()) << "}\n";
    } else if (*bnd) {
      const auto net = load_flow_net(model_path);
      const auto netbar = load_flow_net(stabilized_path);
      nf::VectorFunction f;
      nf::CompactGrid grid;
      if (target == "self") {
        grid = grid_from(grid_spec, points_path);
      } else if (target.rfind("csv:", 0) == 0) {
        // Target values given at the CSV points; those points form K.
        const nf::Dataset data = nf::load_csv(target.substr(4));
        if (data.task() != nf::TaskKind::regression) throw nf::ContractError("bounds: target CSV needs y columns");
        grid = nf::CompactGrid::from_points(data.inputs);
        auto table = std::make_shared<nf::Dataset>(data);
        f = [table](std::span<const double> x) -> nf::Vector {
          for (std::size_t i = 0; i < table->size(); ++i) {
            if (std::equal(x.begin(), x.end(), table->inputs[i].begin())) return table->targets[i];
          }
          throw nf::ContractError("bounds: no target value for a grid point");
        };
      } else {
        throw nf::ParseError("unknown target \"" + target + "\" (expected self or csv:<path>)");
      }
      nf::BoundOptions bo;
      bo.tbar = tbar;
      bo.throw_on_violation = false;
      const auto rep = nf::verify_bounds(f, net, netbar, grid, nf::OmegaBox(net.hidden_dim(), alpha), bo);
      std::cout << rep.to_json() << '\n';
      if (rep.upper_violated || rep.lower_violations > 0) {
        std::cerr << "bound violation: upper_violated=" << rep.upper_violated
                  << " lower_violations=" << rep.lower_violations << '\n';
        return 4;
      }
    } else if (*exp) {
      nf::ExperimentConfig cfg = nf::default_experiment_config(nf::parse_experiment(exp_name));
      if (!g.config.empty()) cfg.values.merge_file(g.config);
      for (const auto& o : overrides) cfg.values.apply_override(o);
      if (g.seed_set) cfg.set_base_seed(g.seed);
      cfg.out_dir = g.out_dir;
      switch (cfg.id) {
        case nf::ExperimentId::efficiency: {
          const auto r = nf::experiment_efficiency(cfg);
          std::cout << "efficiency: " << r.rows.size() << " runs, target variance "
                    << nf::format_double(r.target_variance) << '\n';
          break;
        }
        case nf::ExperimentId::example1: {
          const auto r = nf::experiment_example1(cfg);
          for (const auto& s : r.summary) {
            std::cout << s.law << " offset " << nf::format_double(s.offset) << ": mean fraction_green "
                      << nf::format_double(s.mean) << " (sd " << nf::format_double(s.stddev) << ")\n";
          }
          break;
        }
        case nf::ExperimentId::example2: {
          const auto r = nf::experiment_example2(cfg);
          std::cout << "example2: seed " << r.seed_used << ", train accuracy " << nf::format_double(r.train_accuracy)
                    << ", delta_star " << nf::format_double(r.delta_star) << '\n';
          for (const auto& row : r.rows) {
            std::cout << "  delta " << nf::format_double(row.delta) << ": fraction_green "
                      << nf::format_double(row.fraction_green) << ", accuracy " << nf::format_double(row.accuracy)
                      << '\n';
          }
          break;
        }
        case nf::ExperimentId::mnist_desk: {
          const auto r = nf::experiment_mnist_desk(cfg);
          std::cout << "mnist-desk: delta_star " << nf::format_double(r.delta_star) << " (" << r.delta_star_method
                    << "), clean accuracy " << nf::format_double(r.clean_accuracy) << '\n';
          break;
        }
      }
    }
  } catch (const nf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return nf::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
