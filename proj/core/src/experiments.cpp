#include "nodeflow/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <algorithm>

#include "nodeflow/bounds.hpp"
#include "nodeflow/errors.hpp"
#include "nodeflow/spectral.hpp"

namespace nodeflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

ActivationSpec activation_from(const Config& c) {
  const auto kind = parse_activation_kind(c.get("activation"));
  const double alpha = c.get_double("alpha");
  return kind == ActivationKind::leaky_relu ? ActivationSpec::leaky_relu(alpha) : ActivationSpec::smoothed(alpha);
}

TrainConfig train_config_from(const Config& c, const std::string& prefix = "") {
  TrainConfig t;
  t.epochs = static_cast<int>(c.get_int(prefix + "epochs"));
  t.batch = static_cast<std::size_t>(c.get_int("batch"));
  t.lr_max = c.get_double("lr_max");
  t.lr_min = c.get_double("lr_min");
  t.cycle_len = static_cast<int>(c.get_int("cycle_len"));
  return t;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9e3779b97f4a7c15ull + b + 0x632be59bd9b4e019ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

void ensure_out_dir(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw Error("cannot create output directory " + cfg.out_dir + ": " + ec.message());
  write_config_snapshot(cfg);
}

void set_defaults(Config& c, std::initializer_list<std::pair<const char*, const char*>> kv) {
  for (const auto& [k, v] : kv) c.set(k, v);
}

}  // namespace

const char* to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::efficiency:
      return "efficiency";
    case ExperimentId::example1:
      return "example1";
    case ExperimentId::example2:
      return "example2";
    case ExperimentId::mnist_desk:
      return "mnist-desk";
  }
  return "?";
}

ExperimentId parse_experiment(const std::string& s) {
  if (s == "efficiency") return ExperimentId::efficiency;
  if (s == "example1") return ExperimentId::example1;
  if (s == "example2") return ExperimentId::example2;
  if (s == "mnist-desk") return ExperimentId::mnist_desk;
  throw ParseError("unknown experiment \"" + s + "\"");
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (long long s : values.get_ints("seeds")) {
    if (s < 0) throw ContractError("seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw ContractError("experiment needs at least one seed");
  return out;
}

void ExperimentConfig::set_base_seed(std::uint64_t base) {
  const std::size_t n = seeds().size();
  std::string list;
  for (std::size_t i = 0; i < n; ++i) list += (i ? "," : "") + std::to_string(base + i);
  values.set("seeds", list);
}

ExperimentConfig default_experiment_config(ExperimentId id) {
  ExperimentConfig cfg;
  cfg.id = id;
  Config& c = cfg.values;
  c.set("experiment", to_string(id));
  set_defaults(c, {{"alpha", "0.1"},
                   {"activation", "leaky-relu"},
                   {"euler_steps", "20"},
                   {"lr_max", "0.01"},
                   {"lr_min", "0.0001"},
                   {"cycle_len", "100"},
                   {"batch", "0"}});
  switch (id) {
    case ExperimentId::efficiency:
      set_defaults(c, {{"seeds", "0"}, {"Ns", "10,50,100,500,1000"}, {"ds", "5,10,50,100"}, {"epochs", "1000"}});
      break;
    case ExperimentId::example1:
      set_defaults(c, {{"seeds", "0,1,2,3,4,5,6,7,8,9"},
                       {"laws", "uniform,normal"},
                       {"offsets", "0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09"},
                       {"grid", "box=-1,1,-1,1;h=0.05"},
                       {"tbar", "0.3"},
                       {"tstep", "0.05"},
                       {"verify", "true"}});
      break;
    case ExperimentId::example2:
      set_defaults(c, {{"seeds", "0"},
                       {"retries", "5"},
                       {"samples", "1000"},
                       {"noise", "0.1"},
                       {"test_fraction", "0.2"},
                       {"d", "4"},
                       {"epochs", "3000"},
                       {"near_offsets", "0.006,0.004,0.002"},
                       {"far_offsets", "3,2,1"},
                       {"tbar", "0.3"},
                       {"tstep", "0.05"},
                       {"etas", "0,0.02,0.04,0.06,0.08,0.1,0.12"}});
      break;
    case ExperimentId::mnist_desk:
      set_defaults(c, {{"seeds", "0"},
                       {"data_dir", "data/mnist"},
                       {"train_size", "2000"},
                       {"test_size", "1000"},
                       {"d", "64"},
                       {"c1", "1"},
                       {"epochs", "30"},
                       {"retrain_epochs", "30"},
                       {"batch", "128"},
                       {"offsets", "2,1,0"},
                       {"etas", "0,0.02,0.04,0.06,0.08,0.1,0.12"}});
      break;
  }
  return cfg;
}

void CsvTable::write(const std::string& path, const std::string& config_hash) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  out << "# config-hash=" << config_hash << '\n';
}

void write_config_snapshot(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  std::ofstream out(out_path(cfg, std::string(to_string(cfg.id)) + ".config"));
  if (!out) throw Error("cannot write config snapshot into " + cfg.out_dir);
  out << "# config-hash=" << cfg.values.hash_hex() << '\n' << cfg.values.serialize();
}

// ---------------------------------------------------------------------------
// Efficiency sweep

EfficiencyResult experiment_efficiency(const ExperimentConfig& cfg) {
  const Config& c = cfg.values;
  ensure_out_dir(cfg);
  const ActivationSpec act = activation_from(c);
  const int steps = static_cast<int>(c.get_int("euler_steps"));
  TrainConfig tc = train_config_from(c);
  tc.eval_every = 0;

  const Dataset test = sine_test_set();
  EfficiencyResult result;
  {
    double mean = 0.0;
    for (const auto& t : test.targets) mean += t[0];
    mean /= static_cast<double>(test.size());
    double var = 0.0;
    for (const auto& t : test.targets) var += (t[0] - mean) * (t[0] - mean);
    result.target_variance = var / static_cast<double>(test.size());
  }

  for (std::uint64_t seed : cfg.seeds()) {
    for (long long N : c.get_ints("Ns")) {
      for (long long d : c.get_ints("ds")) {
        if (N < 1 || d < 1) throw ContractError("efficiency: N and d must be positive");
        // One training set per (N, d) pair, shared by all three architectures.
        const Dataset train_set = gen_sine(static_cast<std::size_t>(N), mix_seed(seed, static_cast<std::uint64_t>(N * 1000 + d)));
        for (Arch arch : {Arch::flow, Arch::shallow, Arch::two_hidden}) {
          EfficiencyRow row{to_string(arch), static_cast<std::size_t>(N), static_cast<std::size_t>(d), seed, kNaN, "ok"};
          try {
            Model model = make_model(arch, 1, static_cast<std::size_t>(d), 1, act, steps, seed);
            tc.seed = seed;
            const TrainResult tr = train(std::move(model), train_set, &test, tc);
            row.test_mse = tr.history.back().test_loss;
          } catch (const DivergenceError& e) {
            row.status = std::string("diverged: ") + e.what();
          }
          result.rows.push_back(std::move(row));
        }
      }
    }
  }

  if (!cfg.out_dir.empty()) {
    CsvTable t{{"arch", "N", "d", "seed", "test_mse"}, {}};
    for (const auto& r : result.rows) {
      t.rows.push_back({r.arch, std::to_string(r.N), std::to_string(r.d), std::to_string(r.seed), num(r.test_mse)});
    }
    t.write(out_path(cfg, "efficiency.csv"), c.hash_hex());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Example 1

namespace {

ShallowFlowNet identity_wrapped(const Matrix& A, const Vector& b, const ActivationSpec& act, int steps) {
  const std::size_t d = b.size();
  ShallowFlowNet net;
  net.A1 = Matrix::identity(d);
  net.b1.assign(d, 0.0);
  net.ode = NeuralOde(A, b, act, steps);
  net.A2 = Matrix::identity(d);
  net.b2.assign(d, 0.0);
  return net;
}

}  // namespace

Example1Result experiment_example1(const ExperimentConfig& cfg) {
  const Config& c = cfg.values;
  ensure_out_dir(cfg);
  const ActivationSpec act = activation_from(c);
  const int steps = static_cast<int>(c.get_int("euler_steps"));
  const CompactGrid grid = parse_grid(c.get("grid"));
  const OmegaBox box(2, act.alpha());
  RegionOptions ropts;
  ropts.tbar = c.get_double("tbar");
  ropts.tstep = c.get_double("tstep");
  BoundOptions bopts;
  bopts.tbar = ropts.tbar;
  bopts.throw_on_violation = false;
  const bool verify = c.get_bool("verify");
  const auto offsets = c.get_doubles("offsets");

  std::vector<std::string> laws;
  {
    std::istringstream is(c.get("laws"));
    std::string law;
    while (std::getline(is, law, ',')) {
      if (law != "uniform" && law != "normal") throw ParseError("example1: unknown sampling law \"" + law + "\"");
      laws.push_back(law);
    }
  }

  Example1Result result;
  for (std::size_t li = 0; li < laws.size(); ++li) {
    const std::string& law = laws[li];
    for (std::uint64_t seed : cfg.seeds()) {
      std::mt19937_64 rng(mix_seed(seed, law == "uniform" ? 1 : 2));
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      auto draw = [&] { return law == "uniform" ? uni(rng) : gauss(rng); };
      Matrix A(2, 2);
      for (double& v : A.data()) v = draw();
      Vector b(2);
      for (double& v : b) v = draw();
      const ShallowFlowNet net = identity_wrapped(A, b, act, steps);
      const LogNormMaxResult ds = delta_star(A, box);

      for (double offset : offsets) {
        Example1Row row;
        row.law = law;
        row.seed = seed;
        row.offset = offset;
        row.delta_star = ds.value;
        row.delta_target = ds.value - offset;
        row.status = "ok";
        try {
          const StabilizationResult st = stabilize(A, box, row.delta_target);
          row.delta_achieved = st.delta_achieved;
          row.frob_norm = st.frob_norm;
          row.baseline_norm = st.baseline_norm;
          const ShallowFlowNet netbar = stabilized(net, st);
          row.fraction_green = region_map(net, netbar, st.Delta, grid, box, ropts).fraction_green();
          if (verify) {
            const BoundReport rep = verify_bounds({}, net, netbar, grid, box, bopts);
            row.verified = true;
            row.empirical_sup = rep.empirical_sup;
            row.upper_value = rep.upper_value;
            row.upper_violated = rep.upper_violated;
            row.lower_checked = rep.lower_checked;
            row.lower_violations = rep.lower_violations;
            row.integrator_disagreement = rep.integrator_disagreement;
          }
        } catch (const Error& e) {
          row.status = e.what();
        }
        result.rows.push_back(std::move(row));
      }
    }
    for (double offset : offsets) {
      Example1Summary s;
      s.law = law;
      s.offset = offset;
      std::vector<double> vals;
      for (const auto& r : result.rows) {
        if (r.law == law && r.offset == offset && r.status == "ok") vals.push_back(r.fraction_green);
      }
      s.count = vals.size();
      if (!vals.empty()) {
        s.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
        double ss = 0.0;
        for (double v : vals) ss += (v - s.mean) * (v - s.mean);
        s.stddev = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
      }
      result.summary.push_back(s);
    }
  }

  if (!cfg.out_dir.empty()) {
    const std::string hash = c.hash_hex();
    CsvTable t{{"law", "seed", "delta_offset", "fraction_green"}, {}};
    CsvTable b{{"law", "seed", "delta_offset", "delta_star", "delta_target", "delta_achieved", "frob_norm",
                "baseline_norm", "empirical_sup", "upper_value", "upper_violated", "lower_checked",
                "lower_violations", "integrator_disagreement", "status"},
               {}};
    for (const auto& r : result.rows) {
      t.rows.push_back({r.law, std::to_string(r.seed), num(r.offset), num(r.fraction_green)});
      b.rows.push_back({r.law, std::to_string(r.seed), num(r.offset), num(r.delta_star), num(r.delta_target),
                        num(r.delta_achieved), num(r.frob_norm), num(r.baseline_norm), num(r.empirical_sup),
                        num(r.upper_value), r.upper_violated ? "1" : "0", std::to_string(r.lower_checked),
                        std::to_string(r.lower_violations), num(r.integrator_disagreement),
                        r.status == "ok" ? "ok" : "error"});
    }
    CsvTable s{{"law", "delta_offset", "mean_fraction_green", "std_fraction_green", "count"}, {}};
    for (const auto& r : result.summary) {
      s.rows.push_back({r.law, num(r.offset), num(r.mean), num(r.stddev), std::to_string(r.count)});
    }
    t.write(out_path(cfg, "example1.csv"), hash);
    b.write(out_path(cfg, "example1_bounds.csv"), hash);
    s.write(out_path(cfg, "example1_summary.csv"), hash);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Example 2

Example2Result experiment_example2(const ExperimentConfig& cfg) {
  const Config& c = cfg.values;
  ensure_out_dir(cfg);
  const ActivationSpec act = activation_from(c);
  const int steps = static_cast<int>(c.get_int("euler_steps"));
  const auto d = static_cast<std::size_t>(c.get_int("d"));
  const int retries = static_cast<int>(c.get_int("retries"));
  TrainConfig tc = train_config_from(c);
  tc.eval_every = 0;

  Example2Result result;
  std::vector<EpochRecord> history;
  const std::uint64_t base = cfg.seeds().front();
  for (int attempt = 0; attempt < std::max(1, retries); ++attempt) {
    const std::uint64_t seed = base + static_cast<std::uint64_t>(attempt);
    const Dataset all = gen_two_moons(static_cast<std::size_t>(c.get_int("samples")), c.get_double("noise"), seed);
    DataSplit split = holdout_split(all, c.get_double("test_fraction"), mix_seed(seed, 7));
    tc.seed = seed;
    ++result.attempts;
    try {
      TrainResult tr = train(make_flow_net(2, d, 2, act, steps, seed), split.train, &split.test, tc);
      const double acc = accuracy(tr.model, split.train);
      if (result.attempts == 1 || acc >= result.train_accuracy) {
        result.seed_used = seed;
        result.train_accuracy = acc;
        result.net = std::get<ShallowFlowNet>(tr.model);
        result.data = std::move(split);
        history = std::move(tr.history);
      }
      if (acc == 1.0) break;
    } catch (const DivergenceError&) {
      continue;
    }
  }
  if (result.net.A1.empty()) throw ConvergenceError("example2: every training attempt diverged");
  result.reached_full_accuracy = result.train_accuracy == 1.0;
  const Model model{result.net};
  result.test_accuracy = accuracy(model, result.data.test);

  const OmegaBox box(d, act.alpha());
  result.delta_star = delta_star(result.net.ode.A, box).value;
  const CompactGrid K = CompactGrid::from_points(result.data.train.inputs);
  RegionOptions ropts;
  ropts.tbar = c.get_double("tbar");
  ropts.tstep = c.get_double("tstep");

  std::vector<std::pair<std::string, RegionMap>> maps;
  for (const char* set : {"near", "far"}) {
    for (double offset : c.get_doubles(std::string(set) + "_offsets")) {
      Example2Row row;
      row.set = set;
      row.offset = offset;
      row.delta = result.delta_star - offset;
      row.status = "ok";
      try {
        const StabilizationResult st = stabilize(result.net.ode.A, box, row.delta);
        row.delta_achieved = st.delta_achieved;
        const ShallowFlowNet netbar = stabilized(result.net, st);
        RegionMap map = region_map(result.net, netbar, st.Delta, K, box, ropts);
        row.fraction_green = map.fraction_green();
        row.accuracy = accuracy(Model{netbar}, result.data.train);
        maps.emplace_back(std::string(set) + "_" + format_double(offset), std::move(map));
      } catch (const Error& e) {
        row.status = e.what();
        row.fraction_green = kNaN;
        row.accuracy = kNaN;
      }
      result.rows.push_back(std::move(row));
    }
  }
  result.attack = attack_curve(model, result.data.test, c.get_doubles("etas"));

  if (!cfg.out_dir.empty()) {
    const std::string hash = c.hash_hex();
    CsvTable t{{"delta", "fraction_green", "accuracy"}, {}};
    for (const auto& r : result.rows) t.rows.push_back({num(r.delta), num(r.fraction_green), num(r.accuracy)});
    t.write(out_path(cfg, "example2.csv"), hash);

    CsvTable s{{"key", "value"},
               {{"seed_used", std::to_string(result.seed_used)},
                {"attempts", std::to_string(result.attempts)},
                {"train_accuracy", num(result.train_accuracy)},
                {"test_accuracy", num(result.test_accuracy)},
                {"delta_star", num(result.delta_star)}}};
    s.write(out_path(cfg, "example2_summary.csv"), hash);

    for (const auto& [name, map] : maps) {
      CsvTable r{{"x1", "x2", "eta", "holds", "undefined"}, {}};
      for (const auto& p : map.points) {
        r.rows.push_back({num(p.x[0]), num(p.x[1]), num(p.eta), p.holds ? "1" : "0", p.undefined ? "1" : "0"});
      }
      r.write(out_path(cfg, "example2_region_" + name + ".csv"), hash);
    }
    CsvTable a{{"eta", "accuracy"}, {}};
    for (std::size_t i = 0; i < result.attack.etas.size(); ++i) {
      a.rows.push_back({num(result.attack.etas[i]), num(result.attack.accuracy[i])});
    }
    a.write(out_path(cfg, "example2_attack.csv"), hash);
    save_model(out_path(cfg, "example2_model.txt"), model);
    std::ofstream h(out_path(cfg, "example2_history.csv"));
    write_history(h, history);
    h << "# config-hash=" << hash << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// MNIST at desk scale

MnistResult experiment_mnist_desk(const ExperimentConfig& cfg) {
  const Config& c = cfg.values;
  const std::string dir = c.get("data_dir");
  Dataset train_all = load_mnist(dir, "train");
  Dataset test_all = load_mnist(dir, "test");
  ensure_out_dir(cfg);
  const std::uint64_t seed = cfg.seeds().front();
  auto pick = [seed](const Dataset& data, std::size_t n, std::uint64_t salt) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, salt));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, idx.size()));
    return data.subset(idx);
  };
  const Dataset train_set = pick(train_all, static_cast<std::size_t>(c.get_int("train_size")), 11);
  const Dataset test_set = pick(test_all, static_cast<std::size_t>(c.get_int("test_size")), 12);

  const ActivationSpec act = activation_from(c);
  const auto d = static_cast<std::size_t>(c.get_int("d"));
  TrainConfig tc = train_config_from(c);
  tc.seed = seed;
  tc.eval_every = 0;
  tc.constraint = NormConstraint{c.get_double("c1"), 1.0};

  Model model = make_flow_net(train_set.input_dim(), d, train_set.output_dim(), act,
                              static_cast<int>(c.get_int("euler_steps")), seed);
  const TrainResult tr = train(std::move(model), train_set, &test_set, tc);
  const auto& net = std::get<ShallowFlowNet>(tr.model);

  MnistResult result;
  const OmegaBox box(d, act.alpha());
  const LogNormMaxResult ds = delta_star(net.ode.A, box);
  result.delta_star = ds.value;
  result.delta_star_method = to_string(ds.method);
  result.clean_accuracy = accuracy(tr.model, test_set);
  result.attack = attack_curve(tr.model, test_set, c.get_doubles("etas"));

  TrainConfig retrain = train_config_from(c, "retrain_");
  retrain.seed = seed;
  retrain.eval_every = 0;
  retrain.constraint = tc.constraint;
  retrain.freeze_ode = true;
  for (double offset : c.get_doubles("offsets")) {
    MnistRow row;
    row.offset = offset;
    row.delta = ds.value - offset;
    row.status = "ok";
    try {
      const Matrix Delta = offset > 0.0 ? stabilize(net.ode.A, box, row.delta).Delta
                                        : Matrix(d, d, 0.0);
      const ShallowFlowNet bar = stabilized(net, Delta);
      row.accuracy_stabilized = accuracy(Model{bar}, test_set);
      const TrainResult rt = train(Model{bar}, train_set, &test_set, retrain);
      row.accuracy_retrained = accuracy(rt.model, test_set);
    } catch (const Error& e) {
      row.status = e.what();
      row.accuracy_stabilized = row.accuracy_retrained = kNaN;
    }
    result.rows.push_back(std::move(row));
  }

  if (!cfg.out_dir.empty()) {
    const std::string hash = c.hash_hex();
    CsvTable a{{"eta", "accuracy"}, {}};
    for (std::size_t i = 0; i < result.attack.etas.size(); ++i) {
      a.rows.push_back({num(result.attack.etas[i]), num(result.attack.accuracy[i])});
    }
    a.write(out_path(cfg, "mnist_attack.csv"), hash);
    CsvTable s{{"delta_offset", "delta", "accuracy_stabilized", "accuracy_retrained"}, {}};
    for (const auto& r : result.rows) {
      s.rows.push_back({num(r.offset), num(r.delta), num(r.accuracy_stabilized), num(r.accuracy_retrained)});
    }
    s.write(out_path(cfg, "mnist_stability.csv"), hash);
    CsvTable m{{"key", "value"},
               {{"delta_star", num(result.delta_star)},
                {"delta_star_method", result.delta_star_method},
                {"clean_accuracy", num(result.clean_accuracy)}}};
    m.write(out_path(cfg, "mnist_summary.csv"), hash);
  }
  return result;
}

}  // namespace nodeflow
