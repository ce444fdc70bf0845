#include "nodeflow/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "nodeflow/errors.hpp"

namespace nodeflow {

std::size_t Dataset::output_dim() const noexcept {
  if (task() == TaskKind::regression) return targets.front().size();
  return num_classes;
}

void Dataset::validate() const {
  if (inputs.empty()) throw ContractError("dataset: no samples");
  const std::size_t m = inputs.front().size();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != m) throw DimensionError("dataset: sample " + std::to_string(i) + " has wrong length");
    if (!all_finite(inputs[i])) throw ContractError("dataset: sample " + std::to_string(i) + " is not finite");
  }
  if (!targets.empty() && !labels.empty()) throw ContractError("dataset: both targets and labels set");
  if (task() == TaskKind::regression) {
    if (targets.size() != inputs.size()) throw DimensionError("dataset: inputs and targets differ in count");
    for (const auto& t : targets) {
      if (t.size() != targets.front().size()) throw DimensionError("dataset: ragged targets");
    }
  } else {
    if (labels.size() != inputs.size()) throw DimensionError("dataset: inputs and labels differ in count");
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
        throw ContractError("dataset: label " + std::to_string(l) + " out of range");
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.split = split;
  for (std::size_t i : indices) {
    out.inputs.push_back(inputs.at(i));
    if (!targets.empty()) out.targets.push_back(targets.at(i));
    if (!labels.empty()) out.labels.push_back(labels.at(i));
  }
  return out;
}

double sine_target(double x) { return std::sin(10.0 * x) + x; }

Dataset gen_sine(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ContractError("gen_sine: need at least one point");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d;
  d.split = "train";
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng);
    d.inputs.push_back({x});
    d.targets.push_back({sine_target(x)});
  }
  return d;
}

Dataset sine_test_set() {
  Dataset d = gen_sine(kSineTestSize, kSineTestSeed);
  d.split = "test";
  return d;
}

Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw ContractError("gen_two_moons: need at least two points");
  if (!(noise >= 0.0)) throw ContractError("gen_two_moons: noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(0.0, std::numbers::pi);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d;
  d.num_classes = 2;
  d.split = "all";
  const std::size_t n0 = (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n0 ? 0 : 1;
    const double t = ut(rng);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      x += noise * g(rng);
      y += noise * g(rng);
    }
    d.inputs.push_back({x, y});
    d.labels.push_back(label);
  }
  return d;
}

DataSplit holdout_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ContractError("holdout_split: fraction outside [0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(data.size())));
  const std::size_t n_train = data.size() - n_test;
  DataSplit s;
  s.train = data.subset(std::span(idx).first(n_train));
  s.test = data.subset(std::span(idx).subspan(n_train));
  s.train.split = "train";
  s.test.split = "test";
  return s;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& path) {
  if (offset + 4 > b.size()) {
    throw ParseError(path + ": truncated at byte " + std::to_string(b.size()) + ", expected 4 bytes at offset " +
                     std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void expect_magic(const std::vector<unsigned char>& b, std::uint32_t magic, const std::string& path) {
  const std::uint32_t got = read_be32(b, 0, path);
  if (got != magic) {
    std::ostringstream os;
    os << path << ": bad magic 0x" << std::hex << got << " at byte 0, expected 0x" << magic;
    throw ParseError(os.str());
  }
}

void expect_payload(const std::vector<unsigned char>& b, std::size_t offset, std::size_t count,
                    const std::string& path) {
  if (b.size() < offset + count) {
    throw ParseError(path + ": truncated at byte " + std::to_string(b.size()) + ", payload needs bytes " +
                     std::to_string(offset) + ".." + std::to_string(offset + count));
  }
}

}  // namespace

std::vector<Vector> load_idx_images(const std::string& path) {
  const auto b = read_bytes(path);
  expect_magic(b, 0x00000803u, path);
  const std::size_t n = read_be32(b, 4, path);
  const std::size_t rows = read_be32(b, 8, path);
  const std::size_t cols = read_be32(b, 12, path);
  const std::size_t px = rows * cols;
  expect_payload(b, 16, n * px, path);
  std::vector<Vector> images(n, Vector(px));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < px; ++j) images[i][j] = b[16 + i * px + j] / 255.0;
  }
  return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto b = read_bytes(path);
  expect_magic(b, 0x00000801u, path);
  const std::size_t n = read_be32(b, 4, path);
  expect_payload(b, 8, n, path);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = b[8 + i];
  return labels;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset d;
  d.inputs = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  if (d.inputs.size() != d.labels.size()) {
    throw ParseError(images_path + " holds " + std::to_string(d.inputs.size()) + " images but " + labels_path +
                     " holds " + std::to_string(d.labels.size()) + " labels");
  }
  int top = 0;
  for (int l : d.labels) top = std::max(top, l);
  d.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(top) + 1);
  return d;
}

Dataset load_mnist(const std::string& dir, const std::string& split) {
  const std::string prefix = split == "test" ? "t10k" : "train";
  const std::filesystem::path base(dir);
  const auto images = base / (prefix + "-images-idx3-ubyte");
  const auto labels = base / (prefix + "-labels-idx1-ubyte");
  for (const auto& p : {images, labels}) {
    if (!std::filesystem::exists(p)) {
      throw PreconditionError("MNIST file " + p.string() +
                              " not found. Download train-images-idx3-ubyte, train-labels-idx1-ubyte, "
                              "t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte (gunzipped) into " +
                              dir);
    }
  }
  Dataset d = load_idx(images.string(), labels.string());
  d.split = split;
  return d;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, const std::string& source, std::size_t line, std::size_t col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last || !std::isfinite(v)) {
    throw ParseError(source + ": line " + std::to_string(line) + ", column " + std::to_string(col) +
                     ": not a number \"" + cell + "\"");
  }
  return v;
}

}  // namespace

Dataset read_csv(std::istream& is, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw ParseError(source + ": empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  std::size_t m = 0, n = 0;
  bool labelled = false;
  for (const auto& h : header) {
    if (h.size() > 1 && h[0] == 'x') {
      if (n || labelled) throw ParseError(source + ": line 1: input columns must come first");
      ++m;
    } else if (h.size() > 1 && h[0] == 'y') {
      if (labelled) throw ParseError(source + ": line 1: mixed label and target columns");
      ++n;
    } else if (h == "label") {
      if (labelled || n) throw ParseError(source + ": line 1: mixed label and target columns");
      labelled = true;
    } else {
      throw ParseError(source + ": line 1: unexpected column \"" + h + "\"");
    }
  }
  if (m == 0 || (n == 0 && !labelled)) throw ParseError(source + ": line 1: header needs x and y (or label) columns");

  Dataset d;
  d.split = source;
  int top = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw ParseError(source + ": line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(cells.size()));
    }
    Vector x(m);
    for (std::size_t j = 0; j < m; ++j) x[j] = parse_cell(cells[j], source, lineno, j + 1);
    d.inputs.push_back(std::move(x));
    if (labelled) {
      const double v = parse_cell(cells[m], source, lineno, m + 1);
      if (v < 0 || v != std::floor(v)) {
        throw ParseError(source + ": line " + std::to_string(lineno) + ": label must be a non-negative integer");
      }
      d.labels.push_back(static_cast<int>(v));
      top = std::max(top, d.labels.back());
    } else {
      Vector y(n);
      for (std::size_t j = 0; j < n; ++j) y[j] = parse_cell(cells[m + j], source, lineno, m + j + 1);
      d.targets.push_back(std::move(y));
    }
  }
  if (d.inputs.empty()) throw ParseError(source + ": no data rows");
  if (labelled) d.num_classes = static_cast<std::size_t>(top) + 1;
  return d;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read_csv(in, path);
}

void write_csv(std::ostream& os, const Dataset& data) {
  data.validate();
  const std::size_t m = data.input_dim();
  for (std::size_t j = 0; j < m; ++j) os << (j ? "," : "") << 'x' << j + 1;
  if (data.task() == TaskKind::regression) {
    for (std::size_t j = 0; j < data.targets.front().size(); ++j) os << ",y" << j + 1;
  } else {
    os << ",label";
  }
  os << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) os << (j ? "," : "") << format_double(data.inputs[i][j]);
    if (data.task() == TaskKind::regression) {
      for (double y : data.targets[i]) os << ',' << format_double(y);
    } else {
      os << ',' << data.labels[i];
    }
    os << '\n';
  }
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_csv(out, data);
}

// ---------------------------------------------------------------------------
// Losses

double mse(std::span<const double> pred, std::span<const double> target, Vector* grad) {
  if (pred.size() != target.size() || pred.empty()) throw DimensionError("mse: prediction and target lengths differ");
  const double n = static_cast<double>(pred.size());
  double s = 0.0;
  if (grad) grad->resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    s += r * r;
    if (grad) (*grad)[i] = 2.0 * r / n;
  }
  return s / n;
}

double cross_entropy_logits(std::span<const double> logits, int label, Vector* grad) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.size()) + " classes");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - top);
  const double lse = top + std::log(z);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
    (*grad)[label] -= 1.0;
  }
  return lse - logits[label];
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState AdamState::zeros_like(const std::vector<std::span<double>>& params) {
  AdamState s;
  for (auto p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, const std::vector<std::span<double>>& params, const std::vector<Vector>& grads,
               double lr, const AdamConfig& cfg) {
  if (state.m.empty()) state = AdamState::zeros_like(params);
  if (params.size() != grads.size() || state.m.size() != params.size()) {
    throw DimensionError("adam_step: parameter and gradient lists differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    const Vector& g = grads[k];
    Vector& m = state.m[k];
    Vector& v = state.v[k];
    if (g.size() != p.size() || m.size() != p.size()) throw DimensionError("adam_step: tensor shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ContractError("train: epochs must be non-negative");
  if (!(lr_min <= lr_max) || !(lr_min >= 0.0)) throw ContractError("train: need 0 <= lr_min <= lr_max");
  if (cycle_len < 1) throw ContractError("train: cycle length must be positive");
  if (constraint && constraint->c1 < 1.0) throw ContractError("train: constraint c1 must be >= 1");
}

std::size_t TrainConfig::batch_size(std::size_t n) const {
  if (batch > 0) return std::min(batch, n);
  return n <= kFullBatchLimit ? n : kDefaultBatch;
}

double cosine_cyclic_lr(int epoch, const TrainConfig& cfg) {
  const double phase = static_cast<double>(epoch % cfg.cycle_len) / cfg.cycle_len;
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

// ---------------------------------------------------------------------------
// Training

namespace {

double sample_loss(const Model& model, const Dataset& data, std::size_t i, ForwardCache* cache, Vector* grad) {
  const Vector out = forward(model, data.inputs[i], cache);
  if (data.task() == TaskKind::regression) return mse(out, data.targets[i], grad);
  return cross_entropy_logits(out, data.labels[i], grad);
}

void check_compatible(const Model& model, const Dataset& data) {
  data.validate();
  if (input_dim(model) != data.input_dim()) {
    throw DimensionError("model takes inputs of length " + std::to_string(input_dim(model)) + " but the data has " +
                         std::to_string(data.input_dim()));
  }
  if (output_dim(model) != data.output_dim()) {
    throw DimensionError("model has " + std::to_string(output_dim(model)) + " outputs but the data needs " +
                         std::to_string(data.output_dim()));
  }
}

}  // namespace

double evaluate_loss(const Model& model, const Dataset& data) {
  check_compatible(model, data);
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += sample_loss(model, data, i, nullptr, nullptr);
  return s / static_cast<double>(data.size());
}

double accuracy(const Model& model, const Dataset& data) {
  check_compatible(model, data);
  if (data.task() != TaskKind::classification) throw ContractError("accuracy: dataset has no labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax(forward(model, data.inputs[i])) == static_cast<std::size_t>(data.labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train(Model model, const Dataset& train_data, const Dataset* test_data, const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(model, train_data);
  if (test_data) check_compatible(model, *test_data);
  auto* flow_net = std::get_if<ShallowFlowNet>(&model);
  if ((cfg.constraint || cfg.freeze_ode) && !flow_net) {
    throw ContractError("train: norm constraints and frozen ODEs need the flow architecture");
  }
  if (cfg.constraint) project_norms(*flow_net, *cfg.constraint);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  TrainResult result;
  auto record = [&](int epoch, double lr, double train_loss, bool eval) {
    const double test_loss = eval && test_data ? evaluate_loss(model, *test_data) : nan;
    result.history.push_back({epoch, lr, train_loss, test_loss});
  };
  const double initial = evaluate_loss(model, train_data);
  if (!std::isfinite(initial)) throw DivergenceError("train: initial loss is not finite", 0);
  record(0, cosine_cyclic_lr(0, cfg), initial, true);

  const auto params = parameters(model);
  AdamState state = AdamState::zeros_like(params);
  Gradients grads = Gradients::zeros_like(model);
  ForwardCache cache;
  Vector upstream;

  const std::size_t n = train_data.size();
  const std::size_t bs = cfg.batch_size(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cosine_cyclic_lr(epoch - 1, cfg);
    if (bs < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const double scale = 1.0 / static_cast<double>(stop - start);
      grads.set_zero();
      for (std::size_t k = start; k < stop; ++k) {
        double loss = 0.0;
        try {
          loss = sample_loss(model, train_data, order[k], &cache, &upstream);
        } catch (const OverflowError& e) {
          throw DivergenceError(std::string("train: ") + e.what() + " in epoch " + std::to_string(epoch), epoch);
        }
        if (!std::isfinite(loss)) {
          throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch), epoch);
        }
        epoch_loss += loss;
        for (double& u : upstream) u *= scale;
        backward(model, cache, upstream, grads);
      }
      if (cfg.freeze_ode) {
        std::fill(grads.tensors[2].begin(), grads.tensors[2].end(), 0.0);
        std::fill(grads.tensors[3].begin(), grads.tensors[3].end(), 0.0);
      }
      adam_step(state, params, grads.tensors, lr, cfg.adam);
      if (cfg.constraint) project_norms(*flow_net, *cfg.constraint);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch), epoch);
    }
    const bool eval = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
    record(epoch, lr, epoch_loss, eval);
  }
  result.model = std::move(model);
  return result;
}

void write_history(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,lr,train_loss,test_loss\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
       << (std::isnan(r.test_loss) ? std::string() : format_double(r.test_loss)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// FGSM

Vector fgsm(const Model& model, std::span<const double> x, int label, double eta) {
  if (!(eta >= 0.0)) throw ContractError("fgsm: eta must be non-negative");
  ForwardCache cache;
  const Vector out = forward(model, x, &cache);
  Vector upstream;
  cross_entropy_logits(out, label, &upstream);
  const Gradients g = backward(model, cache, upstream);
  Vector adv(x.begin(), x.end());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double s = g.input[i] > 0.0 ? 1.0 : (g.input[i] < 0.0 ? -1.0 : 0.0);
    adv[i] += eta * s;
  }
  return adv;
}

std::vector<double> default_attack_etas() {
  std::vector<double> etas;
  for (int i = 0; i <= 6; ++i) etas.push_back(0.02 * i);
  return etas;
}

AttackReport attack_curve(const Model& model, const Dataset& data, std::span<const double> etas) {
  check_compatible(model, data);
  if (data.task() != TaskKind::classification) throw ContractError("attack_curve: dataset has no labels");
  AttackReport r;
  r.etas.assign(etas.begin(), etas.end());
  for (double eta : etas) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Vector adv = fgsm(model, data.inputs[i], data.labels[i], eta);
      if (argmax(forward(model, adv)) == static_cast<std::size_t>(data.labels[i])) ++hits;
    }
    r.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(data.size()));
  }
  return r;
}

}  // namespace nodeflow
