#include "mleig/runner.hpp"

#include <charconv>
#include <chrono>
#include <fstream>

namespace mleig {

using nlohmann::json;

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::uint64_t job_seed(std::uint64_t seed, std::size_t tol_index, int repetition) {
  RandomStream s(seed, {0x6a6f62ULL, tol_index, static_cast<std::uint64_t>(repetition)});
  return s();
}

namespace {

SamplingOptions sampling_for(const RunConfig& c, bool use_is, int workers) {
  SamplingOptions s;
  s.use_is = use_is;
  s.workers = workers;
  s.max_rejection_rate = c.max_rejection_rate;
  return s;
}

PilotResult pilot_for(const RunConfig& c, const ForwardModel& model, const NoiseSpec& noise, bool use_is) {
  if (c.constants) {
    PilotResult p;
    p.constants = *c.constants;
    p.V_low = c.constant_variances;
    p.V_high = c.constant_variances;
    p.M_low = 1;
    p.L = static_cast<int>(c.constant_variances.size()) - 1;
    return p;
  }
  PilotOptions po = c.pilot;
  po.L = model.level_independent() ? 0 : std::min(po.L, model.max_level());
  return pilot_run(model, noise, po, c.seed, sampling_for(c, use_is, default_workers()));
}

// Plain JSON number, or a string for non-finite values.
json num(double x) {
  if (std::isfinite(x)) return x;
  return format_number(x);
}

json vec(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

// RFC 4180 table with CRLF line ends.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw ResourceError("cannot write " + path.string());
  }
  CsvWriter& row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(cells[i]);
    }
    out_ << "\r\n";
    return *this;
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + '"';
  }
  std::ofstream out_;
};

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

RunOutput run_experiment(const RunConfig& c) {
  const auto start = std::chrono::steady_clock::now();
  const auto model = build_model(c);
  const NoiseSpec noise = build_noise(c, *model);
  RunOutput out;
  out.reference = reference_value(*model, noise);

  const bool needs_pilot = c.estimator == "mldlmc" || ((c.estimator == "dlmc" || c.estimator == "dlmcis") && !c.N);
  if (needs_pilot) out.pilot = pilot_for(c, *model, noise, c.estimator != "dlmc");

  for (std::size_t t = 0; t < c.tol_list.size(); ++t)
    for (int r = 0; r < c.repetitions; ++r) out.records.push_back({c.tol_list[t], r, job_seed(c.seed, t, r), {}});

  // Outer pool over jobs when there are enough of them, otherwise inside each estimator.
  const int workers = default_workers();
  const bool outer = out.records.size() >= static_cast<std::size_t>(workers) && workers > 1;
  const int inner = outer ? 1 : workers;

  parallel_for(out.records.size(), outer ? workers : 1, [&](std::size_t i) {
    RunRecord& rec = out.records[i];
    if (c.estimator == "mldlmc") {
      MldlmcOptions o;
      o.TOL = rec.tol;
      o.alpha = c.alpha;
      o.seed = rec.seed;
      o.sampling = sampling_for(c, true, inner);
      o.constants = *out.pilot;
      rec.result = mldlmc_estimate(*model, noise, o);
      rec.result.pilot_work = c.constants ? 0.0 : out.pilot->work;
    } else if (c.estimator == "mldlsc") {
      MldlscOptions o;
      o.tol = rec.tol;
      o.beta2 = c.beta2;
      o.max_work = c.max_work;
      o.workers = inner;
      rec.result = mldlsc_estimate(*model, noise, o);
      rec.result.alpha = c.alpha;
      rec.result.seed = rec.seed;
    } else {
      const auto s = sampling_for(c, c.estimator == "dlmcis", inner);
      if (c.N) {
        const int level = c.level.value_or(0);
        rec.result = dlmc_estimate(*model, noise, level, *c.N, *c.M, rec.seed, c.alpha, s);
        rec.result.tol = rec.tol;
      } else {
        rec.result = dlmc_for_tol(*model, noise, rec.tol, c.alpha, *out.pilot, rec.seed, s);
        rec.result.pilot_work = c.constants ? 0.0 : out.pilot->work;
      }
    }
  });
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

json result_to_json(const EstimatorResult& r) {
  json levels = json::array();
  for (const auto& l : r.per_level)
    levels.push_back({{"level", l.level},
                      {"N", l.N},
                      {"M", l.M},
                      {"E", num(l.E)},
                      {"V", num(l.V)},
                      {"work", num(l.work)},
                      {"evaluations", l.evaluations},
                      {"rejected", l.rejected}});
  return {{"estimator", r.estimator},
          {"value", num(r.value)},
          {"stat_error", num(r.stat_error)},
          {"bias_est", num(r.bias_est)},
          {"error_estimate", num(r.error_estimate)},
          {"per_level", levels},
          {"total_work", num(r.total_work)},
          {"pilot_work", num(r.pilot_work)},
          {"seed", r.seed},
          {"tol", num(r.tol)},
          {"alpha", num(r.alpha)},
          {"L", r.L},
          {"kappa", num(r.kappa)},
          {"M", r.M},
          {"rejected", r.rejected},
          {"converged", r.converged}};
}

json pilot_to_json(const PilotResult& p) {
  return {{"C1", num(p.constants.C1)},
          {"C2", num(p.constants.C2)},
          {"eta_w", num(p.constants.eta_w)},
          {"eta_s", num(p.constants.eta_s)},
          {"c_E", num(p.c_E)},
          {"L", p.L},
          {"N", p.N},
          {"M_low", p.M_low},
          {"M_high", p.M_high},
          {"E_low", vec(p.E_low)},
          {"E_high", vec(p.E_high)},
          {"V_low", vec(p.V_low)},
          {"V_high", vec(p.V_high)},
          {"dg2", vec(p.dg2)},
          {"work", num(p.work)},
          {"rejected", p.rejected}};
}

json results_json(const RunConfig& c, const RunOutput& out) {
  json records = json::array();
  for (const auto& rec : out.records) {
    json j = result_to_json(rec.result);
    j["repetition"] = rec.repetition;
    records.push_back(std::move(j));
  }
  json j{{"schema_version", kResultsSchemaVersion}, {"config", c.raw}, {"results", records}};
  j["pilot"] = out.pilot ? pilot_to_json(*out.pilot) : json(nullptr);
  j["reference"] = out.reference ? num(*out.reference) : json(nullptr);
  return j;
}

json metadata_json(const RunConfig&, const RunOutput& out) {
  json walls = json::array();
  for (const auto& rec : out.records)
    walls.push_back({{"tol", num(rec.tol)}, {"repetition", rec.repetition}, {"wall_seconds", rec.result.wall_time}});
  json j{{"schema_version", kResultsSchemaVersion},
         {"wall_seconds", out.wall_seconds},
         {"workers", default_workers()},
         {"jobs", walls}};
  if (out.pilot) j["pilot_gamma"] = num(out.pilot->gamma);
  const auto now = std::chrono::system_clock::now();
  j["finished_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  return j;
}

void write_outputs(const RunConfig& c, const RunOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(dir / "results.json", results_json(c, out));
  write_json(dir / "metadata.json", metadata_json(c, out));
  const auto f = format_number;
  const auto i = [](auto v) { return std::to_string(v); };

  CsvWriter err(dir / "error_vs_tol.csv");
  err.row({"tol", "repetition", "seed", "value", "reference", "abs_error", "stat_error", "bias_est", "error_estimate",
           "within_tol"});
  for (const auto& rec : out.records) {
    const auto& r = rec.result;
    const bool ref = out.reference.has_value();
    const double e = ref ? std::abs(r.value - *out.reference) : 0.0;
    err.row({f(rec.tol), i(rec.repetition), i(rec.seed), f(r.value), ref ? f(*out.reference) : "",
             ref ? f(e) : "", f(r.stat_error), f(r.bias_est), f(r.error_estimate),
             ref ? (e <= rec.tol ? "1" : "0") : ""});
  }

  CsvWriter dec(dir / "level_decay.csv");
  dec.row({"tol", "repetition", "level", "N", "M", "E", "V", "work"});
  for (const auto& rec : out.records)
    for (const auto& l : rec.result.per_level)
      dec.row({f(rec.tol), i(rec.repetition), i(l.level), i(l.N), i(l.M), f(l.E), f(l.V), f(l.work)});

  CsvWriter work(dir / "work_vs_tol.csv");
  work.row({"tol", "repetition", "total_work", "pilot_work", "wall_seconds"});
  for (const auto& rec : out.records)
    work.row({f(rec.tol), i(rec.repetition), f(rec.result.total_work), f(rec.result.pilot_work),
              f(rec.result.wall_time)});

  CsvWriter lt(dir / "L_vs_tol.csv");
  lt.row({"tol", "repetition", "L", "kappa", "M"});
  for (const auto& rec : out.records)
    lt.row({f(rec.tol), i(rec.repetition), i(rec.result.L), f(rec.result.kappa), i(rec.result.M)});
}

json estimate_rates(const RunConfig& c) {
  const auto model = build_model(c);
  const NoiseSpec noise = build_noise(c, *model);
  RunConfig pc = c;
  pc.constants.reset();
  const auto start = std::chrono::steady_clock::now();
  const PilotResult p = pilot_for(pc, *model, noise, c.estimator != "dlmc");
  json j = pilot_to_json(p);
  j["gamma"] = num(p.gamma);
  j["seconds_per_eval"] = vec(p.seconds_per_eval);
  j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  j["schema_version"] = kResultsSchemaVersion;
  return j;
}

}  // namespace mleig
