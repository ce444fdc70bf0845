#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodeflow/linalg.hpp"
#include "nodeflow/nets.hpp"

namespace nodeflow {

enum class TaskKind { regression, classification };

// Either regression targets or class labels are populated, never both.
struct Dataset {
  std::vector<Vector> inputs;
  std::vector<Vector> targets;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;

  TaskKind task() const noexcept { return labels.empty() && !targets.empty() ? TaskKind::regression
                                                                               : TaskKind::classification; }
  std::size_t size() const noexcept { return inputs.size(); }
  std::size_t input_dim() const noexcept { return inputs.empty() ? 0 : inputs.front().size(); }
  // Regression: target length. Classification: number of classes.
  std::size_t output_dim() const noexcept;
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

// Seed of the fixed 1000-point sine test set.
inline constexpr std::uint64_t kSineTestSeed = 0x5eed7e57;
inline constexpr std::size_t kSineTestSize = 1000;

double sine_target(double x);

// Inputs uniform on [0, 1], targets sin(10 x) + x.
Dataset gen_sine(std::size_t n, std::uint64_t seed);
Dataset sine_test_set();

// n/2 points per class on the two half circles, plus N(0, noise^2) jitter.
Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

// Seeded shuffle, then the last round(test_fraction * n) points form the test split.
DataSplit holdout_split(const Dataset& data, double test_fraction, std::uint64_t seed);

// IDX files (big endian). Images are scaled to [0, 1].
std::vector<Vector> load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Standard MNIST file names inside `dir`; split is "train" or "test" (t10k).
Dataset load_mnist(const std::string& dir, const std::string& split);

// CSV with header "x1,..,xm,y1,..,yn" (regression) or "x1,..,xm,label".
Dataset read_csv(std::istream& is, const std::string& source = "<stream>");
Dataset load_csv(const std::string& path);
void write_csv(std::ostream& os, const Dataset& data);
void write_csv(const std::string& path, const Dataset& data);

// Mean of squared entries of pred - target; grad (if given) receives d loss / d pred.
double mse(std::span<const double> pred, std::span<const double> target, Vector* grad = nullptr);
// -log softmax(logits)[label], evaluated with max subtraction.
double cross_entropy_logits(std::span<const double> logits, int label, Vector* grad = nullptr);

std::size_t argmax(std::span<const double> v);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  long step = 0;

  static AdamState zeros_like(const std::vector<std::span<double>>& params);
};

// One bias-corrected Adam update of every tensor in `params`.
void adam_step(AdamState& state, const std::vector<std::span<double>>& params, const std::vector<Vector>& grads,
               double lr, const AdamConfig& cfg = {});

struct TrainConfig {
  int epochs = 1000;
  // 0 selects full batch for up to kFullBatchLimit samples and kDefaultBatch above.
  std::size_t batch = 0;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  int cycle_len = 100;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::optional<NormConstraint> constraint;
  bool freeze_ode = false;
  // Test loss is recorded every `eval_every` epochs (and always after the last); 0 means last only.
  int eval_every = 1;

  static constexpr std::size_t kFullBatchLimit = 1000;
  static constexpr std::size_t kDefaultBatch = 128;

  void validate() const;
  std::size_t batch_size(std::size_t n) const;
};

// lr_min + (lr_max - lr_min) (1 + cos(pi (epoch mod cycle) / cycle)) / 2
double cosine_cyclic_lr(int epoch, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;  // NaN when not evaluated that epoch
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;  // row 0 is the untrained model
};

// Mean loss of the model over a dataset (MSE or cross entropy).
double evaluate_loss(const Model& model, const Dataset& data);
// Fraction of correctly classified samples.
double accuracy(const Model& model, const Dataset& data);

TrainResult train(Model model, const Dataset& train_data, const Dataset* test_data, const TrainConfig& cfg);

// History CSV: "epoch,lr,train_loss,test_loss".
void write_history(std::ostream& os, const std::vector<EpochRecord>& history);

// x + eta sign(d loss / d x); sign(0) = 0.
Vector fgsm(const Model& model, std::span<const double> x, int label, double eta);

struct AttackReport {
  std::vector<double> etas;
  std::vector<double> accuracy;
};

std::vector<double> default_attack_etas();  // 0, 0.02, ..., 0.12
AttackReport attack_curve(const Model& model, const Dataset& data, std::span<const double> etas);

}  // namespace nodeflow
