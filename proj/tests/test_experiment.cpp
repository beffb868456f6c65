#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qlandscape/experiment.hpp"

namespace fs = std::filesystem;
namespace ex = qlandscape::experiment;
using nlohmann::json;

namespace {

class ExperimentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ql_test_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  ex::ExperimentConfig config(json j) {
    j["out"] = (dir_ / "runs").string();
    return ex::config_from_json(j);
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  // Runs the CLI; returns the exit status and captures stdout.
  int cli(const std::string& args, std::string* out = nullptr) {
    const fs::path log = dir_ / "stdout.txt";
    const std::string cmd = std::string(QL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (out) *out = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir_;
};

TEST_F(ExperimentTest, ConfigRoundTrip) {
  const auto c = config({{"subcommand", "tomo"},
                         {"seed", 18446744073709551615ull},
                         {"system", {{"preset", "ising-chain"}, {"qubits", 3}}},
                         {"noise", {{"kind", "shot"}, {"shots", 250}}},
                         {"experiment", {{"dims", {2, 3}}, {"probe_reuse", false}}}});
  EXPECT_EQ(c.seed, 18446744073709551615ull);
  EXPECT_EQ(c.system.qubits, 3);
  EXPECT_EQ(c.noise.shots, 250);
  EXPECT_FALSE(c.experiment.probe_reuse);
  const auto again = ex::config_from_json(ex::config_to_json(c));
  EXPECT_EQ(ex::config_to_json(again), ex::config_to_json(c));
}

TEST_F(ExperimentTest, Overrides) {
  json j = {{"subcommand", "moments"}};
  ex::apply_override(j, "experiment.d=3");
  ex::apply_override(j, "system.preset=random-gue");
  ex::apply_override(j, "experiment.dims=[2,4]");
  const auto c = config(j);
  EXPECT_EQ(c.experiment.d, 3);
  EXPECT_EQ(c.system.preset, "random-gue");
  EXPECT_EQ(c.experiment.dims, (std::vector<int>{2, 4}));
  EXPECT_THROW(ex::apply_override(j, "novalue"), ex::ConfigError);
  EXPECT_THROW(ex::apply_override(j, "a..b=1"), ex::ConfigError);
}

TEST_F(ExperimentTest, RejectsBadConfigs) {
  EXPECT_THROW(config({{"subcommand", "tomo"}, {"bogus", 1}}), ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "tomo"}, {"noise", {{"sigm", 0.1}}}}), ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "tomo"}, {"noise", {{"kind", "pink"}}}}), ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "tomo"}, {"field", {{"dt", -1.0}}}}), ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "tomo"}, {"seed", -3}}), ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "dance"}}), ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "tomo"}, {"system", {{"drift", (dir_ / "missing.json").string()}}}}),
               ex::ConfigError);
  EXPECT_THROW(config({{"subcommand", "flattening"}, {"experiment", {{"qubit_counts", {9}}}}}), ex::ConfigError);
}

TEST_F(ExperimentTest, ShippedConfigsParse) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(QL_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    const auto c = ex::config_from_json(ex::load_config_json(entry.path().string()));
    EXPECT_EQ(c.subcommand + ".json", entry.path().filename().string());
    ++seen;
  }
  EXPECT_EQ(seen, static_cast<int>(ex::subcommands().size()));
}

TEST_F(ExperimentTest, TomoRunWritesArtifactsAndManifest) {
  const auto c = config({{"subcommand", "tomo"}, {"seed", 11}, {"system", {{"preset", "ising-chain"}}}, {"field", {{"dt", 0.2}}}});
  const auto r = ex::run(c);
  ASSERT_EQ(r.exit_code, 0) << r.error.dump();
  const auto summary = json::parse(slurp(r.output_dir / "summary.json"));
  EXPECT_LT(summary.at("reconstruction_error").get<double>(), 1e-9);
  EXPECT_TRUE(summary.at("informationally_complete").get<bool>());
  const auto map = json::parse(slurp(r.output_dir / "map.json"));
  EXPECT_EQ(map.at("map").size(), 15u);
  EXPECT_EQ(slurp(r.output_dir / "record.csv").rfind("# qlandscape-csv v1\n", 0), 0u);

  const auto manifest = json::parse(slurp(r.output_dir / "manifest.json"));
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 11u);
  for (const auto& a : manifest.at("artifacts")) {
    const std::string content = slurp(r.output_dir / a.at("file").get<std::string>());
    EXPECT_EQ(a.at("sha256").get<std::string>(), ex::sha256_hex(content));
    EXPECT_EQ(a.at("bytes").get<std::size_t>(), content.size());
  }
}

TEST_F(ExperimentTest, Sha256KnownAnswer) {
  EXPECT_EQ(ex::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(ex::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_F(ExperimentTest, ManifestReloadsAsConfig) {
  const auto c = config({{"subcommand", "noise-sensitivity"},
                         {"seed", 4},
                         {"experiment", {{"dims", {2, 3}}, {"n_trials", 20}}}});
  const auto first = ex::run(c);
  ASSERT_EQ(first.exit_code, 0);
  const auto reloaded = ex::config_from_json(ex::load_config_json((first.output_dir / "manifest.json").string()));
  EXPECT_EQ(ex::config_to_json(reloaded), ex::config_to_json(c));
  const auto second = ex::run(reloaded);
  ASSERT_EQ(second.exit_code, 0);
  EXPECT_NE(first.output_dir, second.output_dir);
  EXPECT_EQ(slurp(first.output_dir / "noise_sensitivity.csv"), slurp(second.output_dir / "noise_sensitivity.csv"));
}

TEST_F(ExperimentTest, SingularCheckWithCommutingControl) {
  const json sz = {{"dim", 2}, {"re", {{1, 0}, {0, -1}}}};
  const auto c = config({{"subcommand", "singular-check"},
                         {"system", {{"preset", "qubit"}, {"control", sz}, {"observable", sz}}},
                         {"field", {{"n_steps", 20}}}});
  const auto r = ex::run(c);
  ASSERT_EQ(r.exit_code, 0) << r.error.dump();
  const auto summary = json::parse(slurp(r.output_dir / "summary.json"));
  EXPECT_TRUE(summary.at("is_singular").get<bool>());
}

TEST_F(ExperimentTest, MatrixFileReference) {
  const fs::path p = dir_ / "drift.json";
  std::ofstream(p) << qlandscape::matrix_to_json(qlandscape::pauli::y()).dump();
  const auto c = config({{"subcommand", "evolve"}, {"system", {{"drift", p.string()}}}, {"field", {{"n_steps", 5}}}});
  const auto r = ex::run(c);
  ASSERT_EQ(r.exit_code, 0) << r.error.dump();
  const auto summary = json::parse(slurp(r.output_dir / "summary.json"));
  EXPECT_LT(summary.at("unitarity_defect").get<double>(), 1e-12);
}

TEST_F(ExperimentTest, ModuleErrorsExitOne) {
  const json id = {{"dim", 2}, {"re", {{1, 0}, {0, 1}}}};
  const auto r = ex::run(config({{"subcommand", "evolve"}, {"system", {{"drift", id}}}}));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.error.at("error").at("kind"), "invalid-argument");
  const auto u = ex::run(config({{"subcommand", "evolve"}, {"system", {{"preset", "heisenberg"}}}}));
  EXPECT_EQ(u.exit_code, 1);
  EXPECT_EQ(u.error.at("error").at("kind"), "unknown-preset");
}

TEST_F(ExperimentTest, EverySubcommandIsDeterministic) {
  const std::map<std::string, json> small = {
      {"evolve", json::object()},
      {"tomo", {{"noise", {{"kind", "shot"}, {"shots", 100}}}}},
      {"singular-check", json::object()},
      {"optimize", {{"optimizer", {{"max_iters", 10}}}}},
      {"learn", {{"optimizer", {{"max_iters", 5}}}, {"noise", {{"kind", "gaussian"}, {"sigma", 0.01}}}}},
      {"moments", {{"experiment", {{"n_samples", 1000}}}}},
      {"bound-eq4", {{"experiment", {{"dims", {2, 3}}, {"n_trials", 100}}}}},
      {"bound-eq5", {{"experiment", {{"qubit_counts", {2, 3}}, {"n_samples", 1000}}}}},
      {"flattening", {{"experiment", {{"qubit_counts", {1, 2}}, {"n_samples", 200}}}}},
      {"noise-sensitivity", {{"experiment", {{"dims", {2, 3}}, {"n_trials", 20}}}}}};
  for (const auto& name : ex::subcommands()) {
    json j = small.at(name);
    j["subcommand"] = name;
    j["seed"] = 99;
    j["workers"] = 1;
    const auto a = ex::run(config(j));
    j["workers"] = 3;
    const auto b = ex::run(config(j));
    ASSERT_EQ(a.exit_code, 0) << name << a.error.dump();
    ASSERT_EQ(b.exit_code, 0) << name << b.error.dump();
    EXPECT_EQ(a.manifest.at("artifacts"), b.manifest.at("artifacts")) << name;
  }
}

TEST_F(ExperimentTest, DifferentSeedsDiffer) {
  json j = {{"subcommand", "moments"}, {"experiment", {{"n_samples", 1000}}}};
  j["seed"] = 1;
  const auto a = ex::run(config(j));
  j["seed"] = 2;
  const auto b = ex::run(config(j));
  EXPECT_NE(slurp(a.output_dir / "moments.csv"), slurp(b.output_dir / "moments.csv"));
}

TEST_F(ExperimentTest, CliExitCodes) {
  std::string out;
  EXPECT_EQ(cli("evolve --out " + (dir_ / "runs").string() + " --seed 3 --override field.n_steps=4", &out), 0);
  const auto j = json::parse(out);
  EXPECT_TRUE(fs::exists(fs::path(j.at("output_dir").get<std::string>()) / "trajectory.csv"));
  EXPECT_EQ(j.at("manifest").at("seed"), 3);

  EXPECT_EQ(cli("nonsense"), 2);
  EXPECT_EQ(cli("evolve --config " + (dir_ / "nope.json").string(), &out), 2);
  EXPECT_NE(out.find("\"config\""), std::string::npos);
  EXPECT_EQ(cli("evolve --override system.wat=1 --out " + (dir_ / "runs").string()), 2);
  EXPECT_EQ(cli("evolve --override system.preset=heisenberg --out " + (dir_ / "runs").string(), &out), 1);
  EXPECT_EQ(json::parse(out).at("error").at("kind"), "unknown-preset");
}

TEST_F(ExperimentTest, CliFlagsOverrideConfigFile) {
  const fs::path cfg = dir_ / "c.json";
  std::ofstream(cfg) << json{{"seed", 5}, {"out", "elsewhere"}, {"field", {{"n_steps", 3}}}}.dump();
  std::string out;
  ASSERT_EQ(cli("evolve --config " + cfg.string() + " --seed 8 --out " + (dir_ / "runs").string(), &out), 0);
  const auto j = json::parse(out);
  EXPECT_EQ(j.at("manifest").at("seed"), 8);
  EXPECT_EQ(j.at("manifest").at("config").at("field").at("n_steps"), 3);
  EXPECT_EQ(fs::path(j.at("output_dir").get<std::string>()).parent_path().parent_path(), dir_ / "runs");
}

}  // namespace
