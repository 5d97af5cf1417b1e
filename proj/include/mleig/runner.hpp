#pragma once

#include "mleig/config.hpp"

#include <filesystem>

namespace mleig {

inline constexpr int kResultsSchemaVersion = 1;

/// One (tol, repetition) job.
struct RunRecord {
  double tol = 0.0;
  int repetition = 0;
  std::uint64_t seed = 0;
  EstimatorResult result;
};

struct RunOutput {
  std::vector<RunRecord> records;
  std::optional<PilotResult> pilot;
  std::optional<double> reference;
  double wall_seconds = 0.0;
};

/// Seed of job (t, r); independent of scheduling order.
std::uint64_t job_seed(std::uint64_t seed, std::size_t tol_index, int repetition);

RunOutput run_experiment(const RunConfig& config);

nlohmann::json result_to_json(const EstimatorResult& r);
nlohmann::json pilot_to_json(const PilotResult& p);

/// results.json without wall-clock data; reruns give identical bytes.
nlohmann::json results_json(const RunConfig& config, const RunOutput& out);
nlohmann::json metadata_json(const RunConfig& config, const RunOutput& out);

/// Writes results.json, metadata.json and the four CSV tables.
void write_outputs(const RunConfig& config, const RunOutput& out, const std::filesystem::path& dir);

/// Pilot only; the returned object also lands in <output_dir>/rates.json.
nlohmann::json estimate_rates(const RunConfig& config);

/// Shortest round-trip decimal form.
std::string format_number(double x);

}  // namespace mleig
