// qlandscape <subcommand> --config <path> [--seed U64] [--out DIR]
//            [--workers K] [--override key=value ...]

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qlandscape/experiment.hpp"

namespace ex = qlandscape::experiment;

int main(int argc, char** argv) {
  CLI::App app{"qlandscape: control landscapes and dynamical tomography"};
  std::string subcommand;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  int workers = 0;
  std::vector<std::string> overrides;

  app.add_option("subcommand", subcommand, "evolve | tomo | singular-check | learn | optimize | moments | "
                                           "bound-eq4 | bound-eq5 | flattening | noise-sensitivity")
      ->required()
      ->check(CLI::IsMember(ex::subcommands()));
  app.add_option("--config", config_path, "JSON config (a run manifest is accepted too)");
  auto* seed_opt = app.add_option("--seed", seed, "root seed");
  auto* out_opt = app.add_option("--out", out, "output root directory");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--override", overrides, "dotted key=value, value parsed as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ex::ExperimentConfig config;
  try {
    nlohmann::json j = config_path.empty() ? nlohmann::json::object() : ex::load_config_json(config_path);
    for (const auto& o : overrides) ex::apply_override(j, o);
    j["subcommand"] = subcommand;
    if (*seed_opt) j["seed"] = seed;
    if (*out_opt) j["out"] = out;
    if (*workers_opt) j["workers"] = workers;
    config = ex::config_from_json(j);
  } catch (const ex::ConfigError& e) {
    std::cout << ex::error_json("config", e.what()).dump() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cout << ex::error_json("config", e.what()).dump() << std::endl;
    return 2;
  }

  const auto outcome = ex::run(config);
  if (outcome.exit_code != 0) {
    std::cout << outcome.error.dump() << std::endl;
    return outcome.exit_code;
  }
  std::cout << nlohmann::json{{"output_dir", outcome.output_dir.string()}, {"manifest", outcome.manifest}}.dump(2)
            << std::endl;
  return 0;
}
