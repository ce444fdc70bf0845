#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nodeflow/config.hpp"
#include "nodeflow/training.hpp"

namespace nodeflow {

enum class ExperimentId { efficiency, example1, example2, mnist_desk };

const char* to_string(ExperimentId id);
ExperimentId parse_experiment(const std::string& s);

struct ExperimentConfig {
  ExperimentId id = ExperimentId::efficiency;
  std::string out_dir;  // empty: nothing is written
  Config values;        // every key of the experiment, defaults filled in

  std::vector<std::uint64_t> seeds() const;
  // Replaces the seed list with base, base + 1, ... keeping its length.
  void set_base_seed(std::uint64_t base);
};

ExperimentConfig default_experiment_config(ExperimentId id);

// CSV with a header row and the trailing "# config-hash=<hex>" line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(const std::string& path, const std::string& config_hash) const;
};

// Writes <out_dir>/<experiment>.config holding every effective setting.
void write_config_snapshot(const ExperimentConfig& cfg);

struct EfficiencyRow {
  std::string arch;
  std::size_t N = 0;
  std::size_t d = 0;
  std::uint64_t seed = 0;
  double test_mse = 0.0;  // NaN when the run diverged
  std::string status;     // "ok" or the failure
};

struct EfficiencyResult {
  std::vector<EfficiencyRow> rows;
  double target_variance = 0.0;  // empirical variance of the sine test targets
};

EfficiencyResult experiment_efficiency(const ExperimentConfig& cfg);

struct Example1Row {
  std::string law;  // "uniform" or "normal"
  std::uint64_t seed = 0;
  double offset = 0.0;
  double delta_star = 0.0;
  double delta_target = 0.0;
  double delta_achieved = 0.0;
  double frob_norm = 0.0;
  double baseline_norm = 0.0;
  double fraction_green = 0.0;  // on the Euler grid of the network
  bool verified = false;
  double empirical_sup = 0.0;
  double upper_value = 0.0;
  bool upper_violated = false;
  std::size_t lower_checked = 0;
  std::size_t lower_violations = 0;
  double integrator_disagreement = 0.0;
  std::string status;
};

struct Example1Summary {
  std::string law;
  double offset = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct Example1Result {
  std::vector<Example1Row> rows;
  std::vector<Example1Summary> summary;
};

Example1Result experiment_example1(const ExperimentConfig& cfg);

struct Example2Row {
  std::string set;  // "near" or "far"
  double offset = 0.0;
  double delta = 0.0;
  double delta_achieved = 0.0;
  double fraction_green = 0.0;
  double accuracy = 0.0;
  std::string status;
};

struct Example2Result {
  std::uint64_t seed_used = 0;
  int attempts = 0;
  bool reached_full_accuracy = false;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double delta_star = 0.0;
  ShallowFlowNet net;
  DataSplit data;
  std::vector<Example2Row> rows;
  AttackReport attack;
};

Example2Result experiment_example2(const ExperimentConfig& cfg);

struct MnistRow {
  double offset = 0.0;
  double delta = 0.0;
  double accuracy_stabilized = 0.0;
  double accuracy_retrained = 0.0;
  std::string status;
};

struct MnistResult {
  double delta_star = 0.0;
  std::string delta_star_method;
  double clean_accuracy = 0.0;
  AttackReport attack;
  std::vector<MnistRow> rows;
};

MnistResult experiment_mnist_desk(const ExperimentConfig& cfg);

}  // namespace nodeflow
