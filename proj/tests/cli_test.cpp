#include "mleig/runner.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

using namespace mleig;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal() {
  return json::parse(R"({
    "model": {"type": "linear_gaussian", "A": [[1.0]], "prior_mean": [0.0], "prior_variance": [1.0]},
    "noise": {"variance": 1.0},
    "estimator": {"type": "mldlmc"},
    "tol_list": [0.1],
    "repetitions": 1,
    "seed": 11
  })");
}

fs::path scratch(const std::string& name) {
  const char* tmp = std::getenv("TMPDIR");
  fs::path p = fs::path(tmp ? tmp : "/tmp") / ("mleig_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  int n = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (s[i] == '\r' && s[i + 1] == '\n') ++n;
  return n;
}

void check_error_names(json j, const std::string& field) {
  try {
    (void)parse_config(j);
    FAIL("expected ConfigError for " << field);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(field) != std::string::npos);
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MLEIG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config validation names the offending field") {
    json j = minimal();
    j.erase("model");
    check_error_names(j, "model");
    j = minimal();
    j["tol_list"] = json::array({0.1, -0.2});
    check_error_names(j, "tol_list");
    j = minimal();
    j["repetitions"] = 0;
    check_error_names(j, "repetitions");
    j = minimal();
    j["estimator"]["type"] = "mlmc";
    check_error_names(j, "estimator.type");
    j = minimal();
    j["model"]["type"] = "heat";
    check_error_names(j, "model.type");
    j = minimal();
    j["alpha"] = 1.5;
    check_error_names(j, "alpha");
    j = minimal();
    j["estimator"]["N"] = 10;
    j["estimator"]["M"] = 2;
    check_error_names(j, "estimator.N");
    j = minimal();
    j["model"] = {{"type", "eit"}, {"parameterization", "logit"}};
    check_error_names(j, "model.parameterization");
  }

  TEST_CASE("minimal run writes one record near the closed form") {
    const RunConfig c = parse_config(minimal());
    const auto out = run_experiment(c);
    REQUIRE(out.records.size() == 1);
    REQUIRE(out.reference.has_value());
    CHECK(*out.reference == doctest::Approx(0.5 * std::log(2.0)));
    CHECK(std::abs(out.records[0].result.value - 0.5 * std::log(2.0)) <= 0.1);

    const fs::path dir = scratch("minimal");
    write_outputs(c, out, dir);
    for (const char* f : {"results.json", "metadata.json", "error_vs_tol.csv", "level_decay.csv", "work_vs_tol.csv",
                          "L_vs_tol.csv"})
      CHECK(fs::exists(dir / f));
    const json r = json::parse(slurp(dir / "results.json"));
    CHECK(r["results"].size() == 1);
    CHECK(r["schema_version"] == kResultsSchemaVersion);
  }

  TEST_CASE("reruns give identical results.json") {
    json j = minimal();
    j["model"] = {{"type", "toy"}};
    j["noise"] = {{"variance", 0.01}};
    j["tol_list"] = {0.2, 0.1};
    j["repetitions"] = 2;
    const RunConfig c = parse_config(j);
    const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
    write_outputs(c, run_experiment(c), a);
    write_outputs(c, run_experiment(c), b);
    CHECK(slurp(a / "results.json") == slurp(b / "results.json"));
    CHECK(slurp(a / "level_decay.csv") == slurp(b / "level_decay.csv"));

    // Header plus one row per job, or per job and level.
    CHECK(count_lines(a / "error_vs_tol.csv") == 1 + 4);
    CHECK(count_lines(a / "work_vs_tol.csv") == 1 + 4);
    CHECK(count_lines(a / "L_vs_tol.csv") == 1 + 4);
    const json r = json::parse(slurp(a / "results.json"));
    int levels = 0;
    for (const auto& rec : r["results"]) levels += static_cast<int>(rec["per_level"].size());
    CHECK(count_lines(a / "level_decay.csv") == 1 + levels);
  }

  TEST_CASE("job seeds do not depend on the schedule") {
    CHECK(job_seed(1, 0, 0) != job_seed(1, 0, 1));
    CHECK(job_seed(1, 1, 0) != job_seed(1, 0, 1));
    CHECK(job_seed(5, 2, 3) == job_seed(5, 2, 3));
  }

  TEST_CASE("numbers round-trip") {
    for (double x : {0.1, 1.0 / 3.0, 6.02e23, -2.5e-300}) CHECK(std::stod(format_number(x)) == x);
    CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  }

  TEST_CASE("exit codes") {
    const fs::path dir = scratch("exit");
    json j = minimal();
    j["output_dir"] = (dir / "out").string();
    std::ofstream(dir / "good.json") << j.dump();
    json bad = minimal();
    bad.erase("model");
    std::ofstream(dir / "bad.json") << bad.dump();
    json big = minimal();
    big["model"] = {{"type", "toy"}, {"max_level", 2}};
    big["noise"] = {{"variance", 0.01}};
    big["tol_list"] = {1e-5};
    big["estimator"] = {{"type", "mldlmc"},
                        {"constants", {{"C1", 0.01}, {"C2", 0.05}, {"eta_w", 1.5}, {"V", {1.0, 0.1}}}}};
    std::ofstream(dir / "big.json") << big.dump();
    std::ofstream(dir / "broken.json") << "{ not json";

    CHECK(run_cli("validate " + (dir / "good.json").string()) == 0);
    CHECK(run_cli("run " + (dir / "good.json").string()) == 0);
    CHECK(fs::exists(dir / "out" / "results.json"));
    CHECK(run_cli("run " + (dir / "bad.json").string()) == 2);
    CHECK(run_cli("run " + (dir / "broken.json").string()) == 2);
    CHECK(run_cli("run " + (dir / "missing.json").string()) == 2);
    CHECK(run_cli("run " + (dir / "big.json").string()) == 3);
  }
}
