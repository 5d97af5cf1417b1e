#pragma once

#include "mleig/mldlmc.hpp"
#include "mleig/mldlsc.hpp"

#include <json.hpp>

#include <optional>

namespace mleig {

struct RunConfig {
  nlohmann::json model;  // validated model section, see build_model
  std::string model_type;
  std::string estimator;  // dlmc | dlmcis | mldlmc | mldlsc
  std::vector<double> tol_list;
  double alpha = 0.05;
  int repetitions = 1;
  std::uint64_t seed = 0;
  int max_level = -1;  // -1: model default
  std::string output_dir = "results";

  // Noise: scalar or per-output variances.
  std::vector<double> noise_variance;
  int noise_repeats = 1;

  // Estimator details.
  PilotOptions pilot;
  std::optional<RateConstants> constants;
  std::vector<double> constant_variances;  // V_l used with fixed constants
  int beta2 = 1;
  double max_work = std::numeric_limits<double>::infinity();
  std::optional<std::int64_t> N;
  std::optional<int> M;
  std::optional<int> level;
  double max_rejection_rate = 0.01;

  nlohmann::json raw;
};

/// Parses and validates; ConfigError messages name the offending field.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

ModelPtr build_model(const RunConfig& config);
NoiseSpec build_noise(const RunConfig& config, const ForwardModel& model);

/// Closed-form EIG when the model has one.
std::optional<double> reference_value(const ForwardModel& model, const NoiseSpec& noise);

}  // namespace mleig
