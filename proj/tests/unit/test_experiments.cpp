#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "nodeflow/config.hpp"
#include "nodeflow/errors.hpp"
#include "nodeflow/experiments.hpp"

using namespace nodeflow;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "nodeflow_test_experiments" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void expect_well_formed(const fs::path& p, std::size_t data_rows) {
  const auto ls = lines_of(p);
  ASSERT_EQ(ls.size(), data_rows + 2) << p;
  EXPECT_EQ(ls.back().rfind("# config-hash=", 0), 0u) << p;
  EXPECT_EQ(ls.back().size(), std::string("# config-hash=").size() + 16);
  const auto cols = std::count(ls.front().begin(), ls.front().end(), ',');
  for (std::size_t i = 1; i + 1 < ls.size(); ++i) EXPECT_EQ(std::count(ls[i].begin(), ls[i].end(), ','), cols);
}

void put_u32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

// Synthetic 4x4 "digits": class k lights pixel k.
void write_fake_mnist(const fs::path& dir, const std::string& prefix, std::uint32_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 40);
  std::ofstream img(dir / (prefix + "-images-idx3-ubyte"), std::ios::binary);
  std::ofstream lab(dir / (prefix + "-labels-idx1-ubyte"), std::ios::binary);
  put_u32(img, 0x803);
  put_u32(img, n);
  put_u32(img, 4);
  put_u32(img, 4);
  put_u32(lab, 0x801);
  put_u32(lab, n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const unsigned char label = static_cast<unsigned char>(i % 10);
    for (int p = 0; p < 16; ++p) {
      const unsigned char v = p == label ? 255 : static_cast<unsigned char>(noise(rng));
      img.write(reinterpret_cast<const char*>(&v), 1);
    }
    lab.write(reinterpret_cast<const char*>(&label), 1);
  }
}

}  // namespace

TEST(Config, ParseAndErrors) {
  Config c;
  c.set("alpha", "0.1");
  c.set("seeds", "0,1,2");
  std::istringstream in("# comment\n\n alpha = 0.25 \nseeds=4, 5\n");
  c.merge(in, "cfg");
  EXPECT_EQ(c.get_double("alpha"), 0.25);
  EXPECT_EQ(c.get_ints("seeds"), (std::vector<long long>{4, 5}));

  std::istringstream unknown("beta = 1\n");
  EXPECT_THROW(c.merge(unknown, "cfg"), ParseError);
  std::istringstream no_eq("alpha 3\n");
  EXPECT_THROW(c.merge(no_eq, "cfg"), ParseError);
  c.set("alpha", "zero point one");
  EXPECT_THROW(c.get_double("alpha"), ParseError);
  EXPECT_THROW(c.get("missing"), ContractError);
}

TEST(Config, HashStable) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  Config a, b;
  a.set("x", "1");
  a.set("y", "2");
  b.set("y", "2");
  b.set("x", "1");
  EXPECT_EQ(a.hash_hex(), b.hash_hex());
  b.set("x", "3");
  EXPECT_NE(a.hash_hex(), b.hash_hex());
}

TEST(Experiments, ParseIds) {
  EXPECT_EQ(parse_experiment("mnist-desk"), ExperimentId::mnist_desk);
  EXPECT_THROW(parse_experiment("example3"), ParseError);
  auto cfg = default_experiment_config(ExperimentId::example1);
  EXPECT_EQ(cfg.seeds().size(), 10u);
  cfg.set_base_seed(100);
  EXPECT_EQ(cfg.seeds().front(), 100u);
  EXPECT_EQ(cfg.seeds().back(), 109u);
  cfg.values.set("seeds", "");
  EXPECT_THROW(cfg.seeds(), ContractError);
}

TEST(Experiments, EfficiencySmallGridReproducible) {
  auto cfg = default_experiment_config(ExperimentId::efficiency);
  cfg.values.set("Ns", "10,20");
  cfg.values.set("ds", "3");
  cfg.values.set("epochs", "5");
  cfg.values.set("seeds", "0,1");
  cfg.out_dir = fresh_dir("eff1").string();
  const auto r = experiment_efficiency(cfg);
  EXPECT_EQ(r.rows.size(), 2u * 1u * 2u * 3u);
  EXPECT_GT(r.target_variance, 0.0);
  const fs::path csv = fs::path(cfg.out_dir) / "efficiency.csv";
  expect_well_formed(csv, 12);
  EXPECT_EQ(lines_of(csv).front(), "arch,N,d,seed,test_mse");
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "efficiency.config"));

  cfg.out_dir = fresh_dir("eff2").string();
  experiment_efficiency(cfg);
  EXPECT_EQ(slurp(csv), slurp(fs::path(cfg.out_dir) / "efficiency.csv"));
}

TEST(Experiments, Example1Small) {
  auto cfg = default_experiment_config(ExperimentId::example1);
  cfg.values.set("seeds", "0,1");
  cfg.values.set("offsets", "0.01,0.05");
  cfg.values.set("grid", "box=-1,1,-1,1;h=0.25");
  cfg.out_dir = fresh_dir("ex1").string();
  const auto r = experiment_example1(cfg);
  ASSERT_EQ(r.rows.size(), 2u * 2u * 2u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.status, "ok");
    EXPECT_NEAR(row.delta_achieved, row.delta_target, 1e-6);
    EXPECT_FALSE(row.upper_violated);
    EXPECT_EQ(row.lower_violations, 0u);
  }
  EXPECT_EQ(r.summary.size(), 4u);
  expect_well_formed(fs::path(cfg.out_dir) / "example1.csv", 8);
  expect_well_formed(fs::path(cfg.out_dir) / "example1_summary.csv", 4);
  EXPECT_EQ(lines_of(fs::path(cfg.out_dir) / "example1.csv").front().rfind("law,seed,delta_offset,fraction_green", 0),
            0u);
}

TEST(Experiments, Example2Small) {
  auto cfg = default_experiment_config(ExperimentId::example2);
  cfg.values.set("epochs", "40");
  cfg.values.set("samples", "100");
  cfg.values.set("retries", "2");
  cfg.out_dir = fresh_dir("ex2").string();
  const auto r = experiment_example2(cfg);
  EXPECT_GE(r.attempts, 1);
  EXPECT_LE(r.attempts, 2);
  EXPECT_EQ(r.rows.size(), 6u);
  EXPECT_EQ(r.attack.accuracy.size(), 7u);
  const fs::path csv = fs::path(cfg.out_dir) / "example2.csv";
  expect_well_formed(csv, 6);
  EXPECT_EQ(lines_of(csv).front(), "delta,fraction_green,accuracy");
}

TEST(Experiments, MnistDeskSynthetic) {
  const fs::path data = fresh_dir("mnist-data");
  write_fake_mnist(data, "train", 60, 1);
  write_fake_mnist(data, "t10k", 30, 2);
  auto cfg = default_experiment_config(ExperimentId::mnist_desk);
  cfg.values.set("data_dir", data.string());
  cfg.values.set("train_size", "60");
  cfg.values.set("test_size", "30");
  cfg.values.set("d", "6");
  cfg.values.set("epochs", "3");
  cfg.values.set("retrain_epochs", "3");
  cfg.values.set("batch", "20");
  cfg.out_dir = fresh_dir("mnist-out").string();
  const auto r = experiment_mnist_desk(cfg);
  EXPECT_EQ(r.attack.accuracy.front(), r.clean_accuracy);
  EXPECT_EQ(r.rows.size(), 3u);
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "mnist_attack.csv"));

  cfg.values.set("data_dir", (data / "absent").string());
  try {
    experiment_mnist_desk(cfg);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("Download"), std::string::npos);
  }
}
