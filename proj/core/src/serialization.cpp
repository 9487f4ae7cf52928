#include "pairsurf/serialization.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "pairsurf/error.hpp"

namespace pairsurf {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::InvalidSpec, what, key);
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Format, std::string("malformed JSON: ") + e.what());
  }
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where, where.empty() ? "expected a JSON object" : where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) bad(where.empty() ? key : where + "." + key, "unknown key '" + key + "'");
  }
}

template <class T>
T get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(key, "invalid value for '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = get<T>(j, key);
}

double num(const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); }

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd to_vec(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(a[i]);
  return v;
}

json mat(const Eigen::MatrixXd& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd to_mat(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw Error(ErrorCode::Format, "matrix payload has the wrong length");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = num(data[k++]);
  }
  return m;
}

json points(const std::vector<Point2>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.w, p.h});
  return a;
}

std::vector<Point2> to_points(const json& a, const std::string& key) {
  std::vector<Point2> out;
  if (!a.is_array()) bad(key, key + " must be an array of [w, h] pairs");
  for (const auto& p : a) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      bad(key, key + " must be an array of [w, h] pairs");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

template <class E>
E parse_enum(const json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options, E fallback) {
  if (!j.contains(key)) return fallback;
  const std::string s = get<std::string>(j, key);
  for (const auto& [name, value] : options) {
    if (s == name) return value;
  }
  bad(key, "unknown value '" + s + "' for '" + key + "'");
}

SurfaceMode parse_surface_mode(const json& j, const char* key, SurfaceMode fallback) {
  return parse_enum<SurfaceMode>(j, key,
                                 {{"group_specific", SurfaceMode::group_specific},
                                  {"shared_centered_with_group_intercepts", SurfaceMode::shared_centered},
                                  {"shared_centered", SurfaceMode::shared_centered},
                                  {"shared", SurfaceMode::shared}},
                                 fallback);
}

ErrorStructure parse_error_structure(const json& j, const char* key, ErrorStructure fallback) {
  return parse_enum<ErrorStructure>(
      j, key, {{"independent", ErrorStructure::independent},
             {"car1_on_time", ErrorStructure::car1},
             {"car1", ErrorStructure::car1}}, fallback);
}

Criterion parse_criterion(const json& j, const char* key, Criterion fallback) {
  return parse_enum<Criterion>(j, key, {{"ML", Criterion::ml}, {"REML", Criterion::reml}, {"ml", Criterion::ml}, {"reml", Criterion::reml}}, fallback);
}

OutcomeSet parse_outcomes(const json& j, const char* key, OutcomeSet fallback) {
  return parse_enum<OutcomeSet>(
      j, key, {{"paired", OutcomeSet::paired}, {"first", OutcomeSet::first}, {"second", OutcomeSet::second}},
      fallback);
}

json model_spec_json(const ModelSpec& s) {
  json j;
  j["surface_mode"] = to_string(s.surface_mode);
  j["num_groups"] = s.num_groups;
  j["parametric_terms"] = s.parametric_terms;
  j["basis_dim"] = s.basis.k;
  if (s.basis.knots) j["knots"] = points(*s.basis.knots);
  j["penalized"] = s.penalized;
  if (!s.basis_dims.empty()) j["basis_dims"] = s.basis_dims;
  j["error_structure"] = to_string(s.error_structure);
  j["criterion"] = to_string(s.criterion);
  j["outcomes"] = to_string(s.outcomes);
  return j;
}

ModelSpec model_spec_from(const json& j) {
  ModelSpec s;
  s.surface_mode = parse_surface_mode(j, "surface_mode", s.surface_mode);
  read(j, "num_groups", s.num_groups);
  read(j, "parametric_terms", s.parametric_terms);
  read(j, "basis_dim", s.basis.k);
  if (j.contains("knots")) s.basis.knots = to_points(j.at("knots"), "knots");
  read(j, "penalized", s.penalized);
  read(j, "basis_dims", s.basis_dims);
  s.error_structure = parse_error_structure(j, "error_structure", s.error_structure);
  s.criterion = parse_criterion(j, "criterion", s.criterion);
  s.outcomes = parse_outcomes(j, "outcomes", s.outcomes);
  if (s.num_groups < 1) bad("num_groups", "num_groups must be >= 1");
  if (s.basis.k < 3) bad("basis_dim", "basis_dim must be >= 3");
  return s;
}

json tau_json(const VarianceComponents& t) {
  json j;
  j["log_lambda"] = t.log_lambda;
  j["log_varphi"] = t.log_varphi;
  j["sigma1_sq"] = t.sigma1_sq;
  j["sigma2_sq"] = t.sigma2_sq;
  j["rho"] = t.rho;
  j["sigma_eps_sq"] = t.sigma_eps_sq;
  j["delta"] = t.delta;
  j["ar_corr"] = t.ar_corr ? json(*t.ar_corr) : json(nullptr);
  return j;
}

VarianceComponents tau_from(const json& j) {
  VarianceComponents t;
  t.log_lambda = j.at("log_lambda").get<std::vector<double>>();
  t.log_varphi = j.at("log_varphi").get<std::vector<double>>();
  t.sigma1_sq = j.at("sigma1_sq").get<double>();
  t.sigma2_sq = j.at("sigma2_sq").get<double>();
  t.rho = j.at("rho").get<double>();
  t.sigma_eps_sq = j.at("sigma_eps_sq").get<double>();
  t.delta = j.at("delta").get<double>();
  if (!j.at("ar_corr").is_null()) t.ar_corr = j.at("ar_corr").get<double>();
  return t;
}

json basis_json(const SurfaceBasis& b) {
  json j;
  j["knots"] = points(b.knots());
  const auto& n = b.normalization();
  j["normalization"] = {{"shift_w", n.shift_w}, {"scale_w", n.scale_w}, {"shift_h", n.shift_h}, {"scale_h", n.scale_h}};
  j["penalty"] = mat(b.penalty());
  j["transform"] = mat(b.transform());
  j["centered"] = b.centered();
  j["column_offsets"] = vec(b.column_offsets());
  return j;
}

std::shared_ptr<const SurfaceBasis> basis_from(const json& j) {
  std::vector<Point2> knots;
  for (const auto& p : j.at("knots")) knots.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  const json& n = j.at("normalization");
  AxisNormalization norm{n.at("shift_w").get<double>(), n.at("scale_w").get<double>(), n.at("shift_h").get<double>(),
                         n.at("scale_h").get<double>()};
  return std::make_shared<const SurfaceBasis>(std::move(knots), norm, to_mat(j.at("penalty")),
                                              to_mat(j.at("transform")), j.at("centered").get<bool>(),
                                              to_vec(j.at("column_offsets")));
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string(), path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string(), path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string(), path.string());
}

// ---- run spec ----

RunSpec parse_run_spec(std::string_view text) {
  const json j = parse_json(text);
  check_keys(j, "",
             {"surface_mode", "num_groups", "parametric_terms", "basis_dim", "knots", "penalized", "basis_dims",
              "error_structure", "criterion", "outcomes", "columns", "fit", "test"});
  RunSpec rs;
  rs.model = model_spec_from(j);

  rs.columns.parametric = rs.model.parametric_terms;
  if (j.contains("columns")) {
    const json& c = j.at("columns");
    check_keys(c, "columns", {"subject", "time", "y1", "y2", "group", "w", "h", "visit", "parametric", "delimiter"});
    read(c, "subject", rs.columns.subject);
    read(c, "time", rs.columns.time);
    read(c, "y1", rs.columns.y1);
    read(c, "y2", rs.columns.y2);
    read(c, "group", rs.columns.group);
    read(c, "w", rs.columns.w);
    read(c, "h", rs.columns.h);
    if (c.contains("visit")) rs.columns.visit = get<std::string>(c, "visit");
    read(c, "parametric", rs.columns.parametric);
    if (c.contains("delimiter")) {
      const auto d = get<std::string>(c, "delimiter");
      if (d.size() != 1) bad("columns.delimiter", "delimiter must be a single character");
      rs.columns.delimiter = d[0];
    }
  }
  if (rs.columns.parametric.size() != rs.model.parametric_terms.size()) {
    bad("columns.parametric", "columns.parametric must list one column per parametric term");
  }

  rs.fit.compute_intervals = true;
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    check_keys(f, "fit",
               {"num_starts", "fixed_rho", "fixed_delta", "fixed_ar_corr", "max_iterations", "gradient_tolerance",
                "compute_intervals"});
    read(f, "num_starts", rs.fit.num_starts);
    if (f.contains("fixed_rho")) rs.fit.fixed_rho = get<double>(f, "fixed_rho");
    if (f.contains("fixed_delta")) rs.fit.fixed_delta = get<double>(f, "fixed_delta");
    if (f.contains("fixed_ar_corr")) rs.fit.fixed_ar_corr = get<double>(f, "fixed_ar_corr");
    read(f, "max_iterations", rs.fit.optimizer.max_iterations);
    read(f, "gradient_tolerance", rs.fit.optimizer.gradient_tolerance);
    read(f, "compute_intervals", rs.fit.compute_intervals);
    if (rs.fit.num_starts < 1) bad("fit.num_starts", "num_starts must be >= 1");
  }

  if (j.contains("test")) {
    const json& t = j.at("test");
    check_keys(t, "test", {"method", "equal_intercepts", "B"});
    rs.method = parse_enum<TestMethod>(
        t, "method", {{"bootstrap", TestMethod::bootstrap}, {"adjusted_lrt", TestMethod::adjusted_lrt}}, rs.method);
    read(t, "equal_intercepts", rs.equal_intercepts);
    read(t, "B", rs.B);
    if (rs.B < 1) bad("test.B", "B must be >= 1");
  }
  return rs;
}

RunSpec load_run_spec(const std::filesystem::path& path) { return parse_run_spec(read_text_file(path)); }

std::string to_json(const RunSpec& rs) {
  json j = model_spec_json(rs.model);
  json c;
  c["subject"] = rs.columns.subject;
  c["time"] = rs.columns.time;
  c["y1"] = rs.columns.y1;
  c["y2"] = rs.columns.y2;
  c["group"] = rs.columns.group;
  c["w"] = rs.columns.w;
  c["h"] = rs.columns.h;
  if (rs.columns.visit) c["visit"] = *rs.columns.visit;
  c["parametric"] = rs.columns.parametric;
  c["delimiter"] = std::string(1, rs.columns.delimiter);
  j["columns"] = std::move(c);
  json f;
  f["num_starts"] = rs.fit.num_starts;
  if (rs.fit.fixed_rho) f["fixed_rho"] = *rs.fit.fixed_rho;
  if (rs.fit.fixed_delta) f["fixed_delta"] = *rs.fit.fixed_delta;
  if (rs.fit.fixed_ar_corr) f["fixed_ar_corr"] = *rs.fit.fixed_ar_corr;
  f["max_iterations"] = rs.fit.optimizer.max_iterations;
  f["gradient_tolerance"] = rs.fit.optimizer.gradient_tolerance;
  j["fit"] = std::move(f);
  j["test"] = {{"method", to_string(rs.method)}, {"equal_intercepts", rs.equal_intercepts}, {"B", rs.B}};
  return dump(j);
}

// ---- simulation config ----

SimConfig parse_sim_config(std::string_view text) {
  const json j = parse_json(text);
  check_keys(j, "",
             {"m", "n", "num_groups", "truth", "beta0", "beta1", "gamma0", "gamma1", "sigma1", "sigma2", "rho",
              "sigma_eps", "delta", "ar_corr", "visit_spacing", "parametric", "psi1", "psi2", "replications", "seed",
              "test", "B", "basis_dim", "level", "threads"});
  SimConfig c;
  read(j, "m", c.m);
  read(j, "n", c.n);
  read(j, "num_groups", c.num_groups);
  c.truth = parse_enum<SimTruth>(j, "truth",
                                 {{"null_common_surface", SimTruth::null_common_surface},
                                  {"group_specific_surfaces", SimTruth::group_specific_surfaces}},
                                 c.truth);
  read(j, "beta0", c.beta0);
  read(j, "beta1", c.beta1);
  read(j, "gamma0", c.gamma0);
  read(j, "gamma1", c.gamma1);
  read(j, "sigma1", c.sigma1);
  read(j, "sigma2", c.sigma2);
  read(j, "rho", c.rho);
  read(j, "sigma_eps", c.sigma_eps);
  read(j, "delta", c.delta);
  if (j.contains("ar_corr") && !j.at("ar_corr").is_null()) c.ar_corr = get<double>(j, "ar_corr");
  read(j, "visit_spacing", c.visit_spacing);
  read(j, "parametric", c.parametric);
  read(j, "psi1", c.psi1);
  read(j, "psi2", c.psi2);
  read(j, "replications", c.replications);
  read(j, "seed", c.seed);
  c.test = parse_enum<SimTest>(
      j, "test",
      {{"none", SimTest::none}, {"bootstrap", SimTest::bootstrap}, {"adjusted_lrt", SimTest::adjusted_lrt}}, c.test);
  read(j, "B", c.B);
  read(j, "basis_dim", c.basis_dim);
  read(j, "level", c.level);
  read(j, "threads", c.threads);
  c.validate();
  return c;
}

SimConfig load_sim_config(const std::filesystem::path& path) { return parse_sim_config(read_text_file(path)); }

namespace {

json sim_config_json(const SimConfig& c) {
  json j;
  j["m"] = c.m;
  j["n"] = c.n;
  j["num_groups"] = c.num_groups;
  j["truth"] = to_string(c.truth);
  j["beta0"] = c.beta0;
  j["beta1"] = c.beta1;
  j["gamma0"] = c.gamma0;
  j["gamma1"] = c.gamma1;
  j["sigma1"] = c.sigma1;
  j["sigma2"] = c.sigma2;
  j["rho"] = c.rho;
  j["sigma_eps"] = c.sigma_eps;
  j["delta"] = c.delta;
  j["ar_corr"] = c.ar_corr ? json(*c.ar_corr) : json(nullptr);
  j["visit_spacing"] = c.visit_spacing;
  j["parametric"] = c.parametric;
  j["psi1"] = c.psi1;
  j["psi2"] = c.psi2;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  j["test"] = to_string(c.test);
  j["B"] = c.B;
  j["basis_dim"] = c.basis_dim;
  j["level"] = c.level;
  return j;
}

}  // namespace

std::string to_json(const SimConfig& cfg) { return dump(sim_config_json(cfg)); }

// ---- fitted model ----

std::string to_json(const FittedModel& fm) {
  json j;
  j["format"] = "pairsurf-model";
  j["version"] = kModelFormatVersion;
  j["spec"] = model_spec_json(fm.spec);
  j["outcome_ids"] = fm.outcome_ids;
  j["num_groups"] = fm.num_groups;
  j["tau_hat"] = tau_json(fm.tau_hat);
  j["smoothing_names"] = fm.smoothing_names;
  j["fixed_names"] = fm.fixed_names;
  j["theta_hat"] = vec(fm.theta_hat);
  j["theta_se"] = vec(fm.theta_se);
  j["b_hat"] = vec(fm.b_hat);
  j["subject_effects"] = mat(fm.subject_effects);
  j["loglik"] = fm.loglik;
  j["loglik_ml"] = fm.loglik_ml;
  j["loglik_reml"] = fm.loglik_reml;
  json smooths = json::array();
  for (const auto& s : fm.smooths) {
    json t;
    t["outcome"] = s.outcome;
    t["group"] = s.group;
    t["fixed_cols"] = s.fixed_cols;
    t["random_cols"] = s.random_cols;
    t["smoothing_index"] = s.smoothing_index;
    t["label"] = s.label;
    t["basis"] = basis_json(*s.basis);
    smooths.push_back(std::move(t));
  }
  j["smooths"] = std::move(smooths);
  json gi = json::array();
  for (const auto& g : fm.group_intercepts) gi.push_back({{"outcome", g.outcome}, {"group", g.group}, {"col", g.col}});
  j["group_intercepts"] = std::move(gi);
  j["edf_per_smooth"] = fm.edf_per_smooth;
  j["num_penalized"] = fm.num_penalized;
  j["posterior_cov"] = mat(fm.posterior_cov);
  j["fitted_mu"] = vec(fm.fitted_mu);
  j["residuals"] = vec(fm.residuals);
  json hulls = json::array();
  for (const auto& h : fm.group_hulls) hulls.push_back(points(h));
  j["group_hulls"] = std::move(hulls);
  json table = json::array();
  for (const auto& p : fm.variance_table) {
    table.push_back({{"name", p.name}, {"estimate", p.estimate}, {"lower", p.lower}, {"upper", p.upper}});
  }
  j["variance_table"] = std::move(table);
  const auto& d = fm.diagnostics;
  j["diagnostics"] = {{"converged", d.converged},         {"iterations", d.iterations},
                      {"evaluations", d.evaluations},     {"starts", d.starts},
                      {"used_fallback", d.used_fallback}, {"gradient_norm", d.gradient_norm},
                      {"at_bound", d.at_bound},           {"message", d.message}};
  return dump(j);
}

FittedModel parse_model(std::string_view text) {
  const json j = parse_json(text);
  try {
    if (!j.is_object() || j.value("format", "") != "pairsurf-model") {
      throw Error(ErrorCode::Format, "not a pairsurf model file");
    }
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error(ErrorCode::Format, "unsupported model format version " + std::to_string(version), "version");
    }
    FittedModel fm;
    fm.spec = model_spec_from(j.at("spec"));
    fm.outcome_ids = j.at("outcome_ids").get<std::vector<int>>();
    fm.num_groups = j.at("num_groups").get<int>();
    fm.tau_hat = tau_from(j.at("tau_hat"));
    fm.smoothing_names = j.at("smoothing_names").get<std::vector<std::string>>();
    fm.fixed_names = j.at("fixed_names").get<std::vector<std::string>>();
    fm.theta_hat = to_vec(j.at("theta_hat"));
    fm.theta_se = to_vec(j.at("theta_se"));
    fm.b_hat = to_vec(j.at("b_hat"));
    fm.subject_effects = to_mat(j.at("subject_effects"));
    fm.loglik = j.at("loglik").get<double>();
    fm.loglik_ml = j.at("loglik_ml").get<double>();
    fm.loglik_reml = j.at("loglik_reml").get<double>();
    for (const auto& t : j.at("smooths")) {
      SmoothTerm s;
      s.outcome = t.at("outcome").get<int>();
      s.group = t.at("group").get<int>();
      s.fixed_cols = t.at("fixed_cols").get<std::vector<int>>();
      s.random_cols = t.at("random_cols").get<std::vector<int>>();
      s.smoothing_index = t.at("smoothing_index").get<int>();
      s.label = t.at("label").get<std::string>();
      s.basis = basis_from(t.at("basis"));
      fm.smooths.push_back(std::move(s));
    }
    for (const auto& g : j.at("group_intercepts")) {
      fm.group_intercepts.push_back({g.at("outcome").get<int>(), g.at("group").get<int>(), g.at("col").get<int>()});
    }
    for (const auto& e : j.at("edf_per_smooth")) fm.edf_per_smooth.push_back(num(e));
    fm.num_penalized = j.at("num_penalized").get<Eigen::Index>();
    fm.posterior_cov = to_mat(j.at("posterior_cov"));
    fm.fitted_mu = to_vec(j.at("fitted_mu"));
    fm.residuals = to_vec(j.at("residuals"));
    for (const auto& h : j.at("group_hulls")) fm.group_hulls.push_back(to_points(h, "group_hulls"));
    for (const auto& p : j.at("variance_table")) {
      fm.variance_table.push_back(
          {p.at("name").get<std::string>(), num(p.at("estimate")), num(p.at("lower")), num(p.at("upper"))});
    }
    const json& d = j.at("diagnostics");
    fm.diagnostics.converged = d.at("converged").get<bool>();
    fm.diagnostics.iterations = d.at("iterations").get<int>();
    fm.diagnostics.evaluations = d.at("evaluations").get<int>();
    fm.diagnostics.starts = d.at("starts").get<int>();
    fm.diagnostics.used_fallback = d.at("used_fallback").get<bool>();
    fm.diagnostics.gradient_norm = num(d.at("gradient_norm"));
    fm.diagnostics.at_bound = d.at("at_bound").get<std::vector<std::string>>();
    fm.diagnostics.message = d.at("message").get<std::string>();
    return fm;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("corrupt model file: ") + e.what());
  }
}

void save_model(const FittedModel& fm, const std::filesystem::path& path) { write_text_file(path, to_json(fm)); }

FittedModel load_model(const std::filesystem::path& path) { return parse_model(read_text_file(path)); }

// ---- reports ----

std::string to_json(const TestResult& r) {
  json j;
  j["method"] = to_string(r.method);
  j["statistic"] = r.statistic;
  j["p_value"] = r.p_value;
  j["seed"] = r.seed;
  j["loglik_null"] = r.loglik_null;
  j["loglik_full"] = r.loglik_full;
  j["reference"] = r.reference;
  if (r.method == TestMethod::adjusted_lrt) {
    j["nu"] = r.nu;
    j["p_chisq_nu"] = r.p_chisq_nu;
    j["p_chisq_nu1"] = r.p_chisq_nu1;
    j["edf"] = r.edf;
    j["basis_dims"] = r.basis_dims;
    j["edf_floor_applied"] = r.edf_floor_applied;
  } else {
    j["B"] = r.B;
    j["B_effective"] = r.B_effective;
    j["failures"] = r.failures;
    j["negative_count"] = r.negative_count;
    json stats = json::array();
    for (std::size_t b = 0; b < r.bootstrap_stats.size(); ++b) {
      const double s = r.bootstrap_stats[b];
      stats.push_back({{"replicate", b},
                       {"statistic", std::isnan(s) ? json(nullptr) : json(s)},
                       {"converged", r.replicate_status[b].converged},
                       {"negative", r.replicate_status[b].negative}});
    }
    j["replicates"] = std::move(stats);
  }
  return dump(j);
}

std::string to_json(const MonteCarloReport& report) {
  json j;
  j["config"] = sim_config_json(report.config);
  j["failures"] = report.failures;
  json summary = json::array();
  for (const auto& s : report.summary) {
    summary.push_back({{"reference", s.reference},
                       {"rejections", s.rejections},
                       {"valid", s.valid},
                       {"rate", s.rate},
                       {"ci_lower", s.interval.lower},
                       {"ci_upper", s.interval.upper}});
  }
  j["summary"] = std::move(summary);
  return dump(j);
}

}  // namespace pairsurf
