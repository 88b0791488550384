#include "finv_app.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

namespace finv::app {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// serialization

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json mat_to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_to_json(m.row(i).transpose()));
  return a;
}

Vec vec_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a non-empty array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + " must contain only numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Mat mat_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Mat m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Vec r = vec_from_json(j[static_cast<std::size_t>(i)], what + " row");
    if (i == 0) m.resize(rows, r.size());
    if (r.size() != m.cols()) throw ConfigError(what + " rows differ in length");
    m.row(i) = r.transpose();
  }
  return m;
}

json to_json(const Ellipsoid& e) {
  return json{{"dim", e.dim()}, {"A", mat_to_json(e.shape())}, {"b", vec_to_json(e.offset())}};
}

Ellipsoid ellipsoid_from_json(const json& j) {
  if (!j.is_object() || !j.contains("A") || !j.contains("b"))
    throw ConfigError("ellipsoid needs \"A\" and \"b\"");
  Ellipsoid e(mat_from_json(j["A"], "ellipsoid A"), vec_from_json(j["b"], "ellipsoid b"));
  if (j.contains("dim") && j["dim"] != e.dim()) throw ConfigError("ellipsoid dim disagrees with A");
  return e;
}

json to_json(const PacCertificate& c) {
  return json{{"v", c.violations},
              {"N", c.samples},
              {"beta", c.beta},
              {"epsilon_star", c.epsilon_star},
              {"k", c.steps}};
}

PacCertificate certificate_from_json(const json& j) {
  try {
    return PacCertificate{j.at("v").get<std::int64_t>(), j.at("N").get<std::int64_t>(),
                          j.at("beta").get<double>(), j.at("epsilon_star").get<double>(),
                          j.at("k").get<int>()};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed certificate: ") + e.what());
  }
}

json to_json(const RbfSet& s) {
  json centers = json::array();
  for (const auto& c : s.centers()) centers.push_back(vec_to_json(c));
  return json{{"m", s.size()}, {"centers", centers}, {"widths", s.widths()}, {"gamma", s.gamma()}};
}

RbfSet rbf_from_json(const json& j) {
  if (!j.is_object() || !j.contains("centers") || !j.contains("widths") || !j.contains("gamma"))
    throw ConfigError("rbf set needs \"centers\", \"widths\" and \"gamma\"");
  std::vector<Vec> centers;
  for (const auto& c : j["centers"]) centers.push_back(vec_from_json(c, "rbf center"));
  std::vector<double> widths = j["widths"].get<std::vector<double>>();
  if (j.contains("m") && j["m"].get<std::size_t>() != centers.size())
    throw ConfigError("rbf m disagrees with the number of centers");
  return RbfSet(std::move(centers), std::move(widths), j["gamma"].get<double>());
}

// ---------------------------------------------------------------------------
// strict readers

namespace {

using Locator = std::function<int(const std::string&)>;

struct Reader {
  std::string source;
  Locator locate;

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const int line = locate && !key.empty() ? locate(key) : 0;
    std::string where = source;
    if (line > 0) where += ":" + std::to_string(line);
    throw ConfigError(where + ": " + msg);
  }

  void only(const json& obj, std::initializer_list<const char*> allowed,
            const std::string& where) const {
    if (!obj.is_object()) fail("", where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const bool known = std::any_of(allowed.begin(), allowed.end(),
                                     [&](const char* k) { return it.key() == k; });
      if (!known) {
        std::string list;
        for (const char* k : allowed) list += std::string(list.empty() ? "" : ", ") + k;
        fail(it.key(), "unknown key \"" + it.key() + "\" in " + where + " (allowed: " + list + ")");
      }
    }
  }

  double number(const json& obj, const char* key, double def) const {
    if (!obj.contains(key) || obj[key].is_null()) return def;
    if (!obj[key].is_number()) fail(key, std::string("\"") + key + "\" must be a number");
    return obj[key].get<double>();
  }

  template <class Int>
  Int integer(const json& obj, const char* key, Int def) const {
    if (!obj.contains(key)) return def;
    const json& v = obj[key];
    if (!v.is_number_integer() || (std::is_unsigned_v<Int> && v.get<std::int64_t>() < 0))
      fail(key, std::string("\"") + key + "\" must be a " +
                    (std::is_unsigned_v<Int> ? "non-negative " : "") + "integer");
    return v.get<Int>();
  }

  bool boolean(const json& obj, const char* key, bool def) const {
    if (!obj.contains(key)) return def;
    if (!obj[key].is_boolean()) fail(key, std::string("\"") + key + "\" must be true or false");
    return obj[key].get<bool>();
  }

  std::string string(const json& obj, const char* key, const std::string& def) const {
    if (!obj.contains(key)) return def;
    if (!obj[key].is_string()) fail(key, std::string("\"") + key + "\" must be a string");
    return obj[key].get<std::string>();
  }

  Vec vec(const json& obj, const char* key, const Vec& def) const {
    if (!obj.contains(key)) return def;
    try {
      return vec_from_json(obj[key], std::string("\"") + key + "\"");
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  Mat mat(const json& obj, const char* key, const Mat& def) const {
    if (!obj.contains(key)) return def;
    try {
      return mat_from_json(obj[key], std::string("\"") + key + "\"");
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  /// Runs a library validation, turning contract violations into config errors.
  template <class F>
  void check(const std::string& key, F&& f) const {
    try {
      f();
    } catch (const ContractViolation& e) {
      fail(key, e.what());
    }
  }
};

Locator text_locator(const std::string& text) {
  return [&text](const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
  };
}

json integration_to_json(const IntegrationOptions& o) {
  json j{{"rel_tol", o.rel_tol},        {"abs_tol", o.abs_tol},
         {"guard_tol", o.guard_tol},    {"t_min", o.t_min},
         {"max_flow_time", o.max_flow_time}, {"initial_step", o.initial_step}};
  j["max_step"] = std::isfinite(o.max_step) ? json(o.max_step) : json(nullptr);
  return j;
}

IntegrationOptions read_integration(const Reader& rd, const json& j) {
  IntegrationOptions o;
  if (j.is_null()) return o;
  rd.only(j, {"rel_tol", "abs_tol", "guard_tol", "t_min", "max_flow_time", "initial_step", "max_step"},
          "integration");
  o.rel_tol = rd.number(j, "rel_tol", o.rel_tol);
  o.abs_tol = rd.number(j, "abs_tol", o.abs_tol);
  o.guard_tol = rd.number(j, "guard_tol", o.guard_tol);
  o.t_min = rd.number(j, "t_min", o.t_min);
  o.max_flow_time = rd.number(j, "max_flow_time", o.max_flow_time);
  o.initial_step = rd.number(j, "initial_step", o.initial_step);
  o.max_step = rd.number(j, "max_step", o.max_step);
  auto positive = [&](const char* key, double v) {
    if (!(v > 0.0)) rd.fail(key, std::string("\"") + key + "\" must be positive");
  };
  positive("rel_tol", o.rel_tol);
  positive("abs_tol", o.abs_tol);
  positive("guard_tol", o.guard_tol);
  positive("max_flow_time", o.max_flow_time);
  positive("initial_step", o.initial_step);
  positive("max_step", o.max_step);
  if (o.t_min < 0.0) rd.fail("t_min", "\"t_min\" must be non-negative");
  return o;
}

BuiltSystem build_system_with(const Reader& rd, const json& block, const IntegrationOptions& io) {
  json params = json::object();
  std::string name;
  if (block.is_string()) {
    name = block.get<std::string>();
  } else {
    rd.only(block, {"name", "params"}, "system");
    name = rd.string(block, "name", "");
    if (block.contains("params")) params = block["params"];
  }
  if (!params.is_object()) rd.fail("params", "system params must be an object");

  if (name == "cec") {
    rd.only(params, {"c", "M"}, "cec params");
    systems::CecParams p;
    p.c = rd.vec(params, "c", p.c);
    p.metric = rd.mat(params, "M", p.metric);
    rd.check("M", [&] { p.validate(); });
    json out{{"name", name}, {"params", {{"c", vec_to_json(p.c)}, {"M", mat_to_json(p.metric)}}}};
    return {name, systems::cec_poincare(p), out, false, p.c};
  }
  if (name == "nec") {
    rd.only(params, {"c1", "c2", "r", "kappa"}, "nec params");
    systems::NecParams p;
    p.c1 = rd.vec(params, "c1", p.c1);
    p.c2 = rd.vec(params, "c2", p.c2);
    p.r = rd.number(params, "r", p.r);
    p.kappa = rd.number(params, "kappa", p.kappa);
    rd.check("params", [&] { p.validate(); });
    json out{{"name", name},
             {"params",
              {{"c1", vec_to_json(p.c1)}, {"c2", vec_to_json(p.c2)}, {"r", p.r}, {"kappa", p.kappa}}}};
    return {name, systems::nec_poincare(p), out, false, std::nullopt};
  }
  if (name == "compass_gait") {
    rd.only(params, {"m", "m_h", "a", "b", "g", "slope_deg", "min_leg_separation"},
            "compass_gait params");
    systems::CompassGaitParams p;
    p.m = rd.number(params, "m", p.m);
    p.m_h = rd.number(params, "m_h", p.m_h);
    p.a = rd.number(params, "a", p.a);
    p.b = rd.number(params, "b", p.b);
    p.g = rd.number(params, "g", p.g);
    const double slope_deg = rd.number(params, "slope_deg", p.slope * 180.0 / std::numbers::pi);
    p.slope = slope_deg * std::numbers::pi / 180.0;
    p.min_leg_separation = rd.number(params, "min_leg_separation", p.min_leg_separation);
    rd.check("params", [&] { p.validate(); });
    json out{{"name", name},
             {"params",
              {{"m", p.m},
               {"m_h", p.m_h},
               {"a", p.a},
               {"b", p.b},
               {"g", p.g},
               {"slope_deg", slope_deg},
               {"min_leg_separation", p.min_leg_separation}}}};
    return {name, PoincareMap::from_hybrid(systems::compass_gait_system(p), io), out, true,
            systems::compass_gait::nominal_seed()};
  }
  if (name == "identity") {
    rd.only(params, {"dim"}, "identity params");
    const int dim = rd.integer<int>(params, "dim", 2);
    if (dim < 1) rd.fail("dim", "\"dim\" must be at least 1");
    json out{{"name", name}, {"params", {{"dim", dim}}}};
    return {name, systems::identity_poincare(dim), out, false, Vec::Zero(dim)};
  }
  rd.fail("name", "unknown system \"" + name + "\" (built-ins: cec, nec, compass_gait, identity)");
}

Ellipsoid read_explicit_ellipsoid(const Reader& rd, const json& j) {
  rd.only(j, {"center", "radius", "metric", "A", "b", "dim"}, "init.ellipsoid");
  try {
    if (j.contains("A")) {
      if (j.contains("center") || j.contains("radius") || j.contains("metric"))
        rd.fail("A", "init.ellipsoid takes either {A, b} or {center, radius | metric}");
      Ellipsoid e(rd.mat(j, "A", Mat()), rd.vec(j, "b", Vec()));
      // "dim" is optional and only checked, so result.json ellipsoids paste in as-is
      if (j.contains("dim") && rd.integer<int>(j, "dim", 0) != e.dim())
        rd.fail("dim", "init.ellipsoid dim does not match A");
      return e;
    }
    if (j.contains("dim")) rd.fail("dim", "init.ellipsoid \"dim\" goes with {A, b}");
    if (!j.contains("center")) rd.fail("ellipsoid", "init.ellipsoid needs \"center\" or \"A\"");
    const Vec c = rd.vec(j, "center", Vec());
    if (j.contains("metric") == j.contains("radius"))
      rd.fail("center", "init.ellipsoid needs exactly one of \"radius\" and \"metric\"");
    if (j.contains("metric")) return Ellipsoid::from_center_metric(c, rd.mat(j, "metric", Mat()));
    return Ellipsoid::ball(c, rd.number(j, "radius", 0.0));
  } catch (const ContractViolation& e) {
    rd.fail("ellipsoid", std::string("invalid initial ellipsoid: ") + e.what());
  }
}

}  // namespace

BuiltSystem build_system(const json& block, const IntegrationOptions& integration) {
  return build_system_with(Reader{"system", {}}, block, integration);
}

json builtin_systems() {
  json out = json::array();
  for (const char* name : {"cec", "nec", "compass_gait", "identity"}) {
    BuiltSystem s = build_system(json(name), IntegrationOptions{});
    json entry = s.block;
    entry["dim"] = s.map.dim();
    entry["hybrid"] = s.hybrid;
    out.push_back(entry);
  }
  return out;
}

// ---------------------------------------------------------------------------
// configuration

json RunConfig::to_json() const {
  json j;
  j["system"] = system;
  j["representation"] = representation;
  if (representation == "rbf")
    j["rbf"] = {{"m", rbf_m}, {"gamma", rbf_gamma}, {"warm_start", rbf_warm_start}};
  j["samples"] = samples;
  j["eps_target"] = eps_target;
  j["beta"] = beta;
  j["max_iters"] = max_iters;
  j["seed"] = seed;
  if (init.kind == InitSpec::Kind::Explicit) {
    j["init"] = {{"ellipsoid", app::to_json(*init.ellipsoid)}};
  } else {
    json c{{"r", init.r}};
    if (init.fixed_point_seed) c["fixed_point_seed"] = vec_to_json(*init.fixed_point_seed);
    j["init"] = {{"contraction", c}};
  }
  j["integration"] = integration_to_json(integration);
  j["k_max"] = k_max;
  j["verify_samples"] = verify_samples == 0 ? samples : verify_samples;
  j["keep_samples"] = keep_samples;
  if (!output_dir.empty()) j["output_dir"] = output_dir;
  return j;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  const Reader rd{source, text_locator(text)};
  rd.only(doc,
          {"system", "representation", "rbf", "samples", "eps_target", "beta", "max_iters", "seed",
           "init", "integration", "k_max", "verify_samples", "keep_samples", "output_dir"},
          "config");

  RunConfig cfg;
  if (!doc.contains("system")) rd.fail("", "config needs a \"system\"");
  if (!doc.contains("init")) rd.fail("", "config needs an \"init\" block");
  cfg.integration = read_integration(rd, doc.contains("integration") ? doc["integration"] : json());
  const BuiltSystem sys = build_system_with(rd, doc["system"], cfg.integration);
  cfg.system = sys.block;

  cfg.representation = rd.string(doc, "representation", cfg.representation);
  if (cfg.representation != "ellipsoid" && cfg.representation != "rbf")
    rd.fail("representation", "\"representation\" must be \"ellipsoid\" or \"rbf\"");
  if (doc.contains("rbf")) {
    if (cfg.representation != "rbf") rd.fail("rbf", "\"rbf\" block given but representation is not rbf");
    const json& r = doc["rbf"];
    rd.only(r, {"m", "gamma", "warm_start"}, "rbf");
    cfg.rbf_m = rd.integer<std::size_t>(r, "m", cfg.rbf_m);
    cfg.rbf_gamma = rd.number(r, "gamma", cfg.rbf_gamma);
    cfg.rbf_warm_start = rd.boolean(r, "warm_start", cfg.rbf_warm_start);
    if (cfg.rbf_m < 1) rd.fail("m", "rbf \"m\" must be at least 1");
    if (!(cfg.rbf_gamma > 0.0 && cfg.rbf_gamma < static_cast<double>(cfg.rbf_m)))
      rd.fail("gamma", "rbf \"gamma\" must lie in (0, m)");
  }

  cfg.samples = rd.integer<std::size_t>(doc, "samples", cfg.samples);
  cfg.eps_target = rd.number(doc, "eps_target", cfg.eps_target);
  cfg.beta = rd.number(doc, "beta", cfg.beta);
  cfg.max_iters = rd.integer<int>(doc, "max_iters", cfg.max_iters);
  cfg.seed = rd.integer<std::uint64_t>(doc, "seed", cfg.seed);
  if (!(cfg.eps_target > 0.0 && cfg.eps_target < 1.0))
    rd.fail("eps_target", "\"eps_target\" must lie in (0, 1)");
  if (!(cfg.beta > 0.0 && cfg.beta < 1.0)) rd.fail("beta", "\"beta\" must lie in (0, 1)");
  if (cfg.samples < static_cast<std::size_t>(sys.map.dim()) + 1)
    rd.fail("samples", "\"samples\" must be at least dim + 1");
  if (cfg.max_iters < 1) rd.fail("max_iters", "\"max_iters\" must be at least 1");

  const json& init = doc["init"];
  rd.only(init, {"ellipsoid", "contraction"}, "init");
  if (init.contains("ellipsoid") == init.contains("contraction"))
    rd.fail("init", "\"init\" needs exactly one of \"ellipsoid\" and \"contraction\"");
  if (init.contains("ellipsoid")) {
    cfg.init.kind = InitSpec::Kind::Explicit;
    cfg.init.ellipsoid = read_explicit_ellipsoid(rd, init["ellipsoid"]);
    if (cfg.init.ellipsoid->dim() != sys.map.dim())
      rd.fail("ellipsoid", "initial ellipsoid dimension differs from the system's");
  } else {
    const json& c = init["contraction"];
    rd.only(c, {"r", "fixed_point_seed"}, "init.contraction");
    cfg.init.kind = InitSpec::Kind::Contraction;
    cfg.init.r = rd.number(c, "r", 0.0);
    if (!(cfg.init.r > 1.0)) rd.fail("r", "contraction \"r\" must exceed 1");
    if (c.contains("fixed_point_seed")) {
      cfg.init.fixed_point_seed = rd.vec(c, "fixed_point_seed", Vec());
      if (cfg.init.fixed_point_seed->size() != sys.map.dim())
        rd.fail("fixed_point_seed", "\"fixed_point_seed\" has the wrong dimension");
    } else if (!sys.fixed_point_seed) {
      rd.fail("contraction", "system has no default fixed-point seed; give \"fixed_point_seed\"");
    }
  }

  cfg.k_max = rd.integer<int>(doc, "k_max", cfg.k_max);
  if (cfg.k_max < 0) rd.fail("k_max", "\"k_max\" must be non-negative");
  cfg.verify_samples = rd.integer<std::size_t>(doc, "verify_samples", cfg.verify_samples);
  cfg.keep_samples = rd.boolean(doc, "keep_samples", cfg.keep_samples);
  cfg.output_dir = rd.string(doc, "output_dir", "");
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_config(ss.str(), path.string());
  cfg.name = path.stem().string();
  return cfg;
}

// ---------------------------------------------------------------------------
// execution

namespace {

template <class R>
void collect(const RunResult<R>& res, bool record_timing, Outcome& out) {
  out.termination = res.termination;
  out.iteration = res.iteration;
  out.certificate = res.certificate;
  for (const auto& h : res.history) {
    out.history.push_back(
        {h.iteration, h.volume, h.violations, h.epsilon_star, record_timing ? h.wall_ms : 0.0});
    if (h.batch) out.batches.push_back(*h.batch);
  }
}

}  // namespace

Outcome execute(const RunConfig& cfg, const ExecOptions& opt) {
  const BuiltSystem sys = build_system(cfg.system, cfg.integration);
  json linearization;
  Ellipsoid initial = [&] {
    if (cfg.init.kind == InitSpec::Kind::Explicit) return *cfg.init.ellipsoid;
    const Vec seed = cfg.init.fixed_point_seed ? *cfg.init.fixed_point_seed : *sys.fixed_point_seed;
    const FixedPointResult fp = find_fixed_point(sys.map, seed);
    const JacobianEstimate jac = fd_jacobian(sys.map, fp.point);
    const ContractionMetric cm = contraction_metric(jac.central);
    json moduli = json::array();
    const Eigen::VectorXcd lam = linalg::eigenvalues(jac.central);
    std::vector<double> mods;
    for (Eigen::Index i = 0; i < lam.size(); ++i) mods.push_back(std::abs(lam[i]));
    std::sort(mods.rbegin(), mods.rend());
    for (double m : mods) moduli.push_back(m);
    linearization = {{"fixed_point", vec_to_json(fp.point)},
                     {"residual", fp.residual},
                     {"newton_iterations", fp.iterations},
                     {"jacobian", mat_to_json(jac.central)},
                     {"jacobian_discrepancy", jac.discrepancy},
                     {"multiplier_moduli", moduli},
                     {"contraction_rate", cm.rate},
                     {"eigenbasis_metric", cm.from_eigenbasis},
                     {"r", cfg.init.r}};
    return contraction_init(jac.central, cfg.init.r, fp.point);
  }();

  RunOptions ro;
  ro.samples = cfg.samples;
  ro.eps_target = cfg.eps_target;
  ro.beta = cfg.beta;
  ro.max_iters = cfg.max_iters;
  ro.seed = cfg.seed;
  ro.threads = opt.threads;
  ro.keep_samples = opt.keep_samples;

  Outcome out{Termination::Budget, 0, {}, initial, initial, {}, {}, linearization};
  if (cfg.representation == "ellipsoid") {
    const auto res = run(sys.map, initial, ro);
    collect(res, opt.record_timing, out);
    out.region = res.region;
  } else {
    RbfRunOptions rb;
    rb.basis_count = cfg.rbf_m;
    rb.fit.gamma = cfg.rbf_gamma;
    rb.warm_start = cfg.rbf_warm_start;
    const auto res = run_rbf(sys.map, initial, rb, ro);
    collect(res, opt.record_timing, out);
    if (const auto* e = res.region.ellipsoid())
      out.region = *e;
    else
      out.region = *res.region.rbf();
  }
  return out;
}

std::vector<KStepPoint> verify_region(const PoincareMap& map, const Region& region,
                                      std::size_t samples, int k_max, double beta,
                                      std::uint64_t seed, unsigned threads) {
  return std::visit(
      [&](const auto& r) { return verify_k_step(map, r, samples, k_max, beta, seed, threads); },
      region);
}

// ---------------------------------------------------------------------------
// output

namespace {

std::ofstream open_out(const fs::path& file) {
  std::ofstream f(file, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + file.string());
  return f;
}

void write_json(const fs::path& file, const json& j) {
  auto f = open_out(file);
  f << j.dump(2) << '\n';
}

double region_volume(const Region& r) {
  return std::visit([](const auto& s) { return s.volume(); }, r);
}

}  // namespace

void write_history_csv(const fs::path& file, const std::vector<HistoryRow>& rows) {
  auto f = open_out(file);
  f << "iter,volume,violations,epsilon_star,wall_ms\n";
  for (const auto& r : rows)
    f << r.iteration << ',' << format_double(r.volume) << ',' << r.violations << ','
      << format_double(r.epsilon_star) << ',' << format_double(r.wall_ms) << '\n';
}

void write_kstep_csv(const fs::path& file, const std::vector<KStepPoint>& curve) {
  auto f = open_out(file);
  f << "k,violations,epsilon_star\n";
  for (const auto& p : curve)
    f << p.k << ',' << p.certificate.violations << ',' << format_double(p.certificate.epsilon_star)
      << '\n';
}

void write_samples_csv(const fs::path& file, const SampleBatch& batch, int dim) {
  auto f = open_out(file);
  for (int i = 0; i < dim; ++i) f << 'x' << i << ',';
  for (int i = 0; i < dim; ++i) f << 'y' << i << ',';
  f << "contained\n";
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (int i = 0; i < dim; ++i) f << format_double(batch.inputs[s][i]) << ',';
    for (int i = 0; i < dim; ++i) {
      // failed evaluations leave the image columns empty
      if (batch.outputs[s]) f << format_double((*batch.outputs[s])[i]);
      f << ',';
    }
    f << (batch.contained[s] ? 1 : 0) << '\n';
  }
}

json result_json(const RunConfig& cfg, const Outcome& out) {
  json j;
  j["format"] = "finv-result";
  j["version"] = 1;
  j["system"] = cfg.system;
  j["integration"] = integration_to_json(cfg.integration);
  j["representation"] = std::holds_alternative<Ellipsoid>(out.region) ? "ellipsoid" : "rbf";
  j["termination"] = to_string(out.termination);
  j["iteration"] = out.iteration;
  j["iterations"] = out.history.size();
  j["seed"] = cfg.seed;
  j["eps_target"] = cfg.eps_target;
  j["certificate"] = to_json(out.certificate);
  j["volume"] = region_volume(out.region);
  if (const auto* e = std::get_if<Ellipsoid>(&out.region))
    j["ellipsoid"] = to_json(*e);
  else
    j["rbf"] = to_json(std::get<RbfSet>(out.region));
  j["initial"] = {{"ellipsoid", to_json(out.initial)}, {"volume", out.initial.volume()}};
  if (!out.linearization.is_null()) j["linearization"] = out.linearization;
  return j;
}

fs::path resolve_output_dir(const RunConfig& cfg, const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const std::string name = cfg.name.empty() ? std::string("run") : cfg.name;
  if (const char* root = std::getenv("FINV_OUTPUT_ROOT"); root && *root) return fs::path(root) / name;
  return fs::path("runs") / name;
}

// ---------------------------------------------------------------------------
// commands

namespace {

int exit_code(Termination t) { return t == Termination::Certified ? 0 : 2; }

void report(std::ostream& log, const Outcome& out) {
  log << to_string(out.termination) << " after " << out.history.size() << " iteration(s): epsilon* = "
      << out.certificate.epsilon_star << " (v = " << out.certificate.violations << " of "
      << out.certificate.samples << ", beta = " << out.certificate.beta
      << "), volume = " << region_volume(out.region) << '\n';
}

/// Runs `body`, mapping failures to exit code 1 with a message and a hint.
template <class F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
  } catch (const CollapseError& e) {
    log << "error: " << e.what() << '\n';
  } catch (const UnstableLinearization& e) {
    log << "error: " << e.what()
        << "\nhint: the fixed point is not stable, so no contraction ellipsoid exists; "
           "check the fixed-point seed and system parameters\n";
  } catch (const NoConvergence& e) {
    log << "error: " << e.what() << "\nhint: try a fixed_point_seed closer to the periodic orbit\n";
  } catch (const MapEvaluationError& e) {
    log << "error: map evaluation failed: " << e.what() << '\n';
  } catch (const SamplingError& e) {
    log << "error: " << e.what() << '\n';
  } catch (const ContractViolation& e) {
    log << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
  }
  return 1;
}

}  // namespace

int cmd_run(const fs::path& config, const CommandOptions& opt, std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = load_config(config);
    const fs::path dir = resolve_output_dir(cfg, opt.out);
    fs::create_directories(dir);
    write_json(dir / "config-echo.json", cfg.to_json());

    const Outcome out = execute(cfg, {opt.threads, cfg.keep_samples, opt.record_timing});
    write_json(dir / "result.json", result_json(cfg, out));
    write_history_csv(dir / "history.csv", out.history);
    if (cfg.keep_samples) {
      const fs::path sdir = dir / "samples";
      fs::remove_all(sdir);
      fs::create_directories(sdir);
      const int dim = std::visit([](const auto& r) { return r.dim(); }, out.region);
      for (std::size_t i = 0; i < out.batches.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "iter_%04zu.csv", i + 1);
        write_samples_csv(sdir / name, out.batches[i], dim);
      }
    }
    if (cfg.k_max > 0) {
      const BuiltSystem sys = build_system(cfg.system, cfg.integration);
      const std::size_t n = cfg.verify_samples == 0 ? cfg.samples : cfg.verify_samples;
      write_kstep_csv(dir / "kstep.csv",
                      verify_region(sys.map, out.region, n, cfg.k_max, cfg.beta, cfg.seed, opt.threads));
    }
    report(log, out);
    log << "output: " << dir.string() << '\n';
    return exit_code(out.termination);
  });
}

int cmd_verify(const fs::path& result, int k_max, std::size_t samples, std::uint64_t seed,
               const CommandOptions& opt, std::ostream& log) {
  return guarded(log, [&] {
    std::ifstream in(result);
    if (!in) throw ConfigError("cannot open result file " + result.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(result.string() + ": corrupt result file: " + e.what());
    }
    if (!doc.is_object() || doc.value("format", "") != "finv-result")
      throw ConfigError(result.string() + ": not a finv result file");
    if (k_max < 1) throw ConfigError("--kmax must be at least 1");
    const Reader rd{result.string(), {}};
    const IntegrationOptions io = read_integration(rd, doc.value("integration", json()));
    const BuiltSystem sys = build_system_with(rd, doc.at("system"), io);
    Region region = doc.contains("rbf") ? Region(rbf_from_json(doc["rbf"]))
                                        : Region(ellipsoid_from_json(doc.at("ellipsoid")));
    const PacCertificate cert = certificate_from_json(doc.at("certificate"));
    const std::size_t n = samples > 0 ? samples : static_cast<std::size_t>(cert.samples);
    const auto curve = verify_region(sys.map, region, n, k_max, cert.beta, seed, opt.threads);
    const fs::path dir = opt.out.empty() ? result.parent_path() : fs::path(opt.out);
    if (!dir.empty()) fs::create_directories(dir);
    write_kstep_csv(dir / "kstep.csv", curve);
    double lo = 1.0, hi = 0.0;
    for (const auto& p : curve) {
      lo = std::min(lo, 1.0 - p.certificate.epsilon_star);
      hi = std::max(hi, 1.0 - p.certificate.epsilon_star);
    }
    log << "k = 1.." << k_max << ": 1 - epsilon* in [" << lo << ", " << hi << "]\n";
    log << "output: " << (dir / "kstep.csv").string() << '\n';
    return 0;
  });
}

int cmd_study(const fs::path& config, int runs, const CommandOptions& opt, std::ostream& log) {
  return guarded(log, [&] {
    if (runs < 2) throw ConfigError("--runs must be at least 2");
    const RunConfig base = load_config(config);
    const fs::path dir = resolve_output_dir(base, opt.out);
    fs::create_directories(dir);
    write_json(dir / "config-echo.json", base.to_json());

    std::vector<Outcome> done;
    auto rows = open_out(dir / "runs.csv");
    rows << "run,seed,status,iterations,epsilon_star,volume\n";
    bool any_budget = false, any_error = false;
    for (int i = 0; i < runs; ++i) {
      RunConfig cfg = base;
      cfg.seed = base.seed + static_cast<std::uint64_t>(i);
      try {
        Outcome out = execute(cfg, {opt.threads, false, opt.record_timing});
        rows << i << ',' << cfg.seed << ',' << to_string(out.termination) << ','
             << out.history.size() << ',' << format_double(out.certificate.epsilon_star) << ','
             << format_double(region_volume(out.region)) << '\n';
        any_budget |= out.termination == Termination::Budget;
        log << "run " << i << " (seed " << cfg.seed << "): ";
        report(log, out);
        done.push_back(std::move(out));
      } catch (const std::exception& e) {
        any_error = true;
        rows << i << ',' << cfg.seed << ",error,,,\n";
        log << "run " << i << " (seed " << cfg.seed << ") failed: " << e.what() << '\n';
      }
    }

    // Runs that stopped early hold their final values, so every row
    // averages over all completed runs.
    std::size_t longest = 0;
    for (const auto& o : done) longest = std::max(longest, o.history.size());
    auto summary = open_out(dir / "summary.csv");
    summary << "iter,active,mean_accuracy,std_accuracy,mean_volume,std_volume\n";
    for (std::size_t it = 0; it < longest; ++it) {
      std::vector<double> acc, vol;
      std::size_t active = 0;
      for (const auto& o : done) {
        const auto& h = o.history[std::min(it, o.history.size() - 1)];
        active += it < o.history.size() ? 1 : 0;
        acc.push_back(1.0 - h.epsilon_star);
        vol.push_back(h.volume);
      }
      auto stats = [](const std::vector<double>& x) {
        double m = 0.0;
        for (double v : x) m += v;
        m /= static_cast<double>(x.size());
        double s = 0.0;
        for (double v : x) s += (v - m) * (v - m);
        return std::pair{m, x.size() > 1 ? std::sqrt(s / static_cast<double>(x.size() - 1)) : 0.0};
      };
      const auto [ma, sa] = stats(acc);
      const auto [mv, sv] = stats(vol);
      summary << it + 1 << ',' << active << ',' << format_double(ma) << ',' << format_double(sa)
              << ',' << format_double(mv) << ',' << format_double(sv) << '\n';
    }

    double mean_iters = 0.0;
    for (const auto& o : done) mean_iters += static_cast<double>(o.history.size());
    if (!done.empty()) mean_iters /= static_cast<double>(done.size());
    log << done.size() << " of " << runs << " runs completed; mean iterations " << mean_iters << '\n';
    log << "output: " << dir.string() << '\n';
    if (any_error) return 1;
    return any_budget ? 2 : 0;
  });
}

int cmd_systems(std::ostream& out) {
  out << builtin_systems().dump(2) << '\n';
  return 0;
}

int main_entry(int argc, char** argv) {
  CLI::App app{"finv: sampling-based finite-step invariant sets for Poincare maps"};
  app.require_subcommand(1);
  CommandOptions opt;
  app.add_option("--threads", opt.threads, "worker threads (0 = hardware concurrency)");

  std::string config_path, result_path;
  int k_max = 20, runs = 10;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "run the invariant-set search for a config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--out", opt.out, "output directory");
  run->add_flag("--record-timing", opt.record_timing, "write measured wall times to history.csv");

  auto* verify = app.add_subcommand("verify", "k-step holdout check of a result");
  verify->add_option("result", result_path, "result.json from a run")->required();
  verify->add_option("--kmax", k_max, "largest step count")->default_val(20);
  verify->add_option("--samples", samples, "samples per k (default: the run's N)");
  verify->add_option("--seed", seed, "sampling seed")->default_val(0);
  verify->add_option("--out", opt.out, "output directory (default: next to the result)");

  auto* study = app.add_subcommand("study", "repeat a run over consecutive seeds");
  study->add_option("config", config_path, "config file")->required();
  study->add_option("--runs", runs, "number of runs")->default_val(10);
  study->add_option("--out", opt.out, "output directory");
  study->add_flag("--record-timing", opt.record_timing, "write measured wall times");

  auto* systems_cmd = app.add_subcommand("systems", "list built-in systems and their defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (run->parsed()) return cmd_run(config_path, opt, std::cerr);
  if (verify->parsed()) return cmd_verify(result_path, k_max, samples, seed, opt, std::cerr);
  if (study->parsed()) return cmd_study(config_path, runs, opt, std::cerr);
  if (systems_cmd->parsed()) return cmd_systems(std::cout);
  return 1;
}

}  // namespace finv::app
