#include "mleig/config.hpp"

#include "mleig/eit.hpp"

#include <fstream>
#include <set>

namespace mleig {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw ConfigError("config field '" + field + "': " + msg);
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) fail(path + key, "is required");
  return j.at(key);
}

double get_number(const json& j, const std::string& key, const std::string& path, std::optional<double> def = {}) {
  if (!j.contains(key)) {
    if (def) return *def;
    fail(path + key, "is required");
  }
  if (!j.at(key).is_number()) fail(path + key, "must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& key, const std::string& path, std::optional<int> def = {}) {
  if (!j.contains(key)) {
    if (def) return *def;
    fail(path + key, "is required");
  }
  if (!j.at(key).is_number_integer()) fail(path + key, "must be an integer");
  return j.at(key).get<int>();
}

std::vector<double> get_vector(const json& v, const std::string& field) {
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) fail(field, "must be a number or an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) fail(field, "must contain only numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

PriorSpec parse_prior(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) fail(field, "must be a non-empty array of distributions");
  std::vector<PriorDim> dims;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = field + "[" + std::to_string(i) + "].";
    const auto& e = j[i];
    const std::string type = require(e, "type", p).get<std::string>();
    if (type == "uniform") {
      dims.push_back(PriorDim::uniform(get_number(e, "lo", p), get_number(e, "hi", p)));
    } else if (type == "gaussian") {
      dims.push_back(PriorDim::gaussian(get_number(e, "mean", p, 0.0), get_number(e, "variance", p, 1.0)));
    } else {
      fail(p + "type", "must be 'uniform' or 'gaussian'");
    }
  }
  try {
    return PriorSpec(std::move(dims));
  } catch (const ConfigError& e) {
    fail(field, e.what());
  }
}

MeshHierarchy parse_hierarchy(const json& m, MeshHierarchy h) {
  if (!m.contains("hierarchy")) return h;
  const auto& j = m.at("hierarchy");
  const std::string p = "model.hierarchy.";
  h.h0 = get_number(j, "h0", p, h.h0);
  h.beta = get_int(j, "beta", p, h.beta);
  h.gamma = get_number(j, "gamma", p, h.gamma);
  h.eta_w = get_number(j, "eta_w", p, h.eta_w);
  h.eta_s = get_number(j, "eta_s", p, h.eta_s);
  try {
    h.validate();
  } catch (const ConfigError& e) {
    fail("model.hierarchy", e.what());
  }
  return h;
}

EitModelSpec parse_eit(const json& m) {
  EitModelSpec s = EitModelSpec::reference();
  const std::string p = "model.";
  s.Lx = get_number(m, "Lx", p, s.Lx);
  s.Ly = get_number(m, "Ly", p, s.Ly);
  s.Nx0 = get_int(m, "Nx0", p, s.Nx0);
  s.Ny0 = get_int(m, "Ny0", p, s.Ny0);
  if (m.contains("sigma")) {
    const auto v = get_vector(m.at("sigma"), "model.sigma");
    if (v.size() != 3) fail("model.sigma", "must hold three conductivities");
    s.sigma1 = v[0];
    s.sigma2 = v[1];
    s.sigma3 = v[2];
  }
  if (m.contains("plies")) {
    s.plies.clear();
    for (std::size_t i = 0; i < m.at("plies").size(); ++i) {
      const auto& e = m.at("plies")[i];
      const std::string q = "model.plies[" + std::to_string(i) + "].";
      s.plies.push_back({get_number(e, "thickness", q), get_int(e, "angle_index", q)});
    }
  }
  if (m.contains("electrodes")) {
    s.electrodes.clear();
    for (std::size_t i = 0; i < m.at("electrodes").size(); ++i) {
      const auto& e = m.at("electrodes")[i];
      const std::string q = "model.electrodes[" + std::to_string(i) + "].";
      EitModelSpec::Electrode el;
      const std::string side = require(e, "side", q).get<std::string>();
      if (side != "top" && side != "bottom") fail(q + "side", "must be 'top' or 'bottom'");
      el.side = side == "top" ? EitModelSpec::Electrode::Side::top : EitModelSpec::Electrode::Side::bottom;
      el.center = get_number(e, "center", q);
      el.width = get_number(e, "width", q);
      el.impedance = get_number(e, "impedance", q, 0.1);
      s.electrodes.push_back(el);
    }
  }
  if (m.contains("currents")) s.currents = to_vector(get_vector(m.at("currents"), "model.currents"));
  if (m.contains("prior")) s.prior = parse_prior(m.at("prior"), "model.prior");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    fail("model", e.what());
  }
  return s;
}

}  // namespace

RunConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  c.raw = j;
  c.model = require(j, "model", "");
  c.model_type = require(c.model, "type", "model.").get<std::string>();
  static const std::set<std::string> models{"linear_gaussian", "toy", "eit", "constant"};
  if (!models.count(c.model_type)) fail("model.type", "must be one of linear_gaussian, toy, eit, constant");

  const auto& est = require(j, "estimator", "");
  c.estimator = est.is_string() ? est.get<std::string>() : require(est, "type", "estimator.").get<std::string>();
  static const std::set<std::string> estimators{"dlmc", "dlmcis", "mldlmc", "mldlsc"};
  if (!estimators.count(c.estimator)) fail("estimator.type", "must be one of dlmc, dlmcis, mldlmc, mldlsc");

  c.tol_list = get_vector(require(j, "tol_list", ""), "tol_list");
  if (c.tol_list.empty()) fail("tol_list", "must not be empty");
  for (double t : c.tol_list)
    if (!(t > 0.0)) fail("tol_list", "entries must be > 0");
  c.alpha = get_number(j, "alpha", "", 0.05);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("alpha", "must lie in (0, 1)");
  c.repetitions = get_int(j, "repetitions", "", 1);
  if (c.repetitions < 1) fail("repetitions", "must be >= 1");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) fail("seed", "must be an integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.max_level = get_int(j, "max_level", "", get_int(c.model, "max_level", "model.", -1));
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();

  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    c.noise_variance = get_vector(require(n, "variance", "noise."), "noise.variance");
    c.noise_repeats = get_int(n, "repeats", "noise.", 1);
    if (c.noise_repeats < 1) fail("noise.repeats", "must be >= 1");
    for (double v : c.noise_variance)
      if (!(v > 0.0)) fail("noise.variance", "entries must be > 0");
  }

  if (est.is_object()) {
    const std::string p = "estimator.";
    if (est.contains("pilot")) {
      const auto& pj = est.at("pilot");
      c.pilot.L = get_int(pj, "L", p + "pilot.", c.pilot.L);
      c.pilot.N = get_int(pj, "N", p + "pilot.", static_cast<int>(c.pilot.N));
      if (c.pilot.L < 0) fail(p + "pilot.L", "must be >= 0");
      if (c.pilot.N < 2) fail(p + "pilot.N", "must be >= 2");
    }
    if (est.contains("constants")) {
      const auto& k = est.at("constants");
      const std::string q = p + "constants.";
      RateConstants rc;
      rc.C1 = get_number(k, "C1", q);
      rc.C2 = get_number(k, "C2", q);
      rc.eta_w = get_number(k, "eta_w", q);
      rc.eta_s = get_number(k, "eta_s", q, rc.eta_w);
      if (rc.C1 < 0.0 || rc.C2 < 0.0 || !(rc.eta_w > 0.0) || !(rc.eta_s > 0.0))
        fail(q.substr(0, q.size() - 1), "constants must be >= 0 and rates > 0");
      c.constants = rc;
      c.constant_variances = get_vector(require(k, "V", q), q + "V");
    }
    c.beta2 = get_int(est, "beta2", p, 1);
    if (c.beta2 < 1) fail(p + "beta2", "must be >= 1");
    c.max_work = get_number(est, "max_work", p, c.max_work);
    if (est.contains("N")) c.N = get_int(est, "N", p);
    if (est.contains("M")) c.M = get_int(est, "M", p);
    if (est.contains("level")) c.level = get_int(est, "level", p);
    if (c.N && *c.N < 1) fail(p + "N", "must be >= 1");
    if (c.M && *c.M < 1) fail(p + "M", "must be >= 1");
    if (c.N.has_value() != c.M.has_value()) fail(p + "N", "N and M must be given together");
    c.max_rejection_rate = get_number(est, "max_rejection_rate", p, c.max_rejection_rate);
  }
  if ((c.N || c.level) && c.estimator != "dlmc" && c.estimator != "dlmcis")
    fail("estimator.N", "fixed N/M/level apply to dlmc and dlmcis only");

  // Build once so that model-level problems surface as config errors.
  const auto model = build_model(c);
  (void)build_noise(c, *model);
  if (c.level) model->check_level(*c.level);
  if (c.estimator == "mldlsc" && c.noise_repeats * model->dim_output() + model->dim_theta() > 24)
    fail("estimator.type", "mldlsc supports at most 24 outer dimensions");
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return parse_config(j);
}

ModelPtr build_model(const RunConfig& c) {
  const json& m = c.model;
  const std::string p = "model.";
  try {
    if (c.model_type == "linear_gaussian") {
      const auto& A = require(m, "A", p);
      if (!A.is_array() || A.empty()) fail("model.A", "must be a non-empty matrix");
      const auto rows = A.size();
      const auto cols = A[0].size();
      Matrix Am(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (std::size_t i = 0; i < rows; ++i) {
        const auto row = get_vector(A[i], "model.A");
        if (row.size() != cols) fail("model.A", "rows must have equal length");
        for (std::size_t k = 0; k < cols; ++k)
          Am(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
      }
      std::vector<double> mean(cols, 0.0), var(cols, 1.0);
      if (m.contains("prior_mean")) mean = get_vector(m.at("prior_mean"), "model.prior_mean");
      if (m.contains("prior_variance")) var = get_vector(m.at("prior_variance"), "model.prior_variance");
      if (mean.size() != cols || var.size() != cols) fail("model.prior_mean", "needs one entry per column of A");
      std::vector<PriorDim> dims;
      for (std::size_t k = 0; k < cols; ++k) dims.push_back(PriorDim::gaussian(mean[k], var[k]));
      return std::make_shared<LinearGaussianModel>(Am, PriorSpec(dims), c.max_level >= 0 ? c.max_level : 16);
    }
    if (c.model_type == "constant") {
      const auto v = get_vector(require(m, "value", p), "model.value");
      PriorSpec prior = m.contains("prior") ? parse_prior(m.at("prior"), "model.prior")
                                            : PriorSpec({PriorDim::gaussian(0.0, 1.0)});
      return std::make_shared<ConstantModel>(to_vector(v), prior, c.max_level >= 0 ? c.max_level : 16);
    }
    if (c.model_type == "toy") {
      ToyModel::Params tp;
      tp.nonlinearity = get_number(m, "nonlinearity", p, tp.nonlinearity);
      tp.amplitude = get_number(m, "amplitude", p, tp.amplitude);
      tp.eta_w = get_number(m, "eta_w", p, tp.eta_w);
      tp.gamma = get_number(m, "gamma", p, tp.gamma);
      tp.max_level = c.max_level >= 0 ? c.max_level : tp.max_level;
      return std::make_shared<ToyModel>(tp);
    }
    // eit
    MeshHierarchy h;
    h.gamma = 2.0;
    h.eta_w = 1.0;
    h.eta_s = 1.0;
    h = parse_hierarchy(m, h);
    ModelPtr eit = std::make_shared<EitModel>(parse_eit(m), h, c.max_level >= 0 ? c.max_level : 4);
    const std::string param = m.value("parameterization", std::string("probit"));
    if (param == "probit") return std::make_shared<ProbitModel>(std::move(eit));
    if (param != "native") fail("model.parameterization", "must be 'probit' or 'native'");
    return eit;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field 'model': ") + e.what());
  }
}

NoiseSpec build_noise(const RunConfig& c, const ForwardModel& model) {
  const int q = model.dim_output();
  std::vector<double> v = c.noise_variance;
  if (v.empty()) v = {c.model_type == "eit" ? 1e-4 : 1.0};
  if (v.size() == 1) v.assign(static_cast<std::size_t>(q), v[0]);
  if (static_cast<int>(v.size()) != q) fail("noise.variance", "needs 1 or " + std::to_string(q) + " entries");
  return NoiseSpec(to_vector(v), c.noise_repeats);
}

std::optional<double> reference_value(const ForwardModel& model, const NoiseSpec& noise) {
  if (const auto* lg = dynamic_cast<const LinearGaussianModel*>(&model)) return lg->exact_eig(noise);
  if (dynamic_cast<const ConstantModel*>(&model)) return 0.0;
  return std::nullopt;
}

}  // namespace mleig
