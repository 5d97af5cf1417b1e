// Command-line front end: run, validate, rates.
#include "mleig/runner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const mleig::ConfigError*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e)) return 2;
  if (dynamic_cast<const mleig::ResourceError*>(&e) || dynamic_cast<const mleig::LevelOutOfRange*>(&e)) return 3;
  if (dynamic_cast<const mleig::Error*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel expected information gain estimators"};
  app.require_subcommand(1);
  std::string config_path;
  std::string output_dir;

  auto* run = app.add_subcommand("run", "Run the estimator sweep and write result tables");
  run->add_option("config", config_path, "JSON config file")->required();
  run->add_option("-o,--output-dir", output_dir, "Overrides output_dir from the config");

  auto* validate = app.add_subcommand("validate", "Parse and check a config file");
  validate->add_option("config", config_path, "JSON config file")->required();

  auto* rates = app.add_subcommand("rates", "Pilot only: estimate C1, C2, eta_w, eta_s, gamma");
  rates->add_option("config", config_path, "JSON config file")->required();
  rates->add_option("-o,--output-dir", output_dir, "Overrides output_dir from the config");

  CLI11_PARSE(app, argc, argv);

  try {
    mleig::RunConfig config = mleig::load_config(config_path);
    if (!output_dir.empty()) config.output_dir = output_dir;

    if (*validate) {
      std::cout << "ok: " << config.model_type << " / " << config.estimator << ", " << config.tol_list.size()
                << " tolerance(s) x " << config.repetitions << " repetition(s)\n";
      return 0;
    }
    if (*rates) {
      const auto j = mleig::estimate_rates(config);
      std::filesystem::create_directories(config.output_dir);
      std::ofstream(std::filesystem::path(config.output_dir) / "rates.json") << j.dump(2) << "\n";
      std::cout << j.dump(2) << "\n";
      return 0;
    }
    const auto out = mleig::run_experiment(config);
    mleig::write_outputs(config, out, config.output_dir);
    for (const auto& rec : out.records)
      std::cout << "tol=" << mleig::format_number(rec.tol) << " rep=" << rec.repetition
                << " value=" << mleig::format_number(rec.result.value) << " L=" << rec.result.L << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
