#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pairsurf/dataset.hpp"
#include "pairsurf/error.hpp"
#include "pairsurf/fit.hpp"
#include "pairsurf/inference.hpp"
#include "pairsurf/serialization.hpp"
#include "pairsurf/simulation.hpp"
#include "pairsurf/version.hpp"

namespace fs = std::filesystem;
using namespace pairsurf;

namespace {

enum Exit { kOk = 0, kUserError = 2, kNumerical = 3 };

struct Provenance {
  std::optional<std::uint64_t> seed;
  std::uint64_t config_hash = 0;

  std::string line() const {
    std::ostringstream os;
    os << "# pairsurf " << kVersion << " seed=" << (seed ? std::to_string(*seed) : std::string("none"))
       << " config=" << std::hex << std::setw(16) << std::setfill('0') << config_hash << "\n";
    return os.str();
  }
};

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string fmt(double v, int precision = 6) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// JSON with a provenance block in front of the payload.
std::string with_header(const std::string& payload, const Provenance& prov) {
  nlohmann::ordered_json out;
  out["header"] = {{"version", kVersion},
                   {"seed", prov.seed ? nlohmann::ordered_json(*prov.seed) : nlohmann::ordered_json(nullptr)},
                   {"config_hash", hex(prov.config_hash)}};
  nlohmann::ordered_json body = nlohmann::ordered_json::parse(payload);
  for (auto& [k, v] : body.items()) out[k] = v;
  return out.dump(2) + "\n";
}

void append_log(const fs::path& out_dir, const std::string& message) {
  std::ofstream log(out_dir / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << message << "\n";
}

void prepare_out(const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw Error(ErrorCode::Io, "cannot create output directory " + out_dir.string(), "out");
  }
}

char delimiter_of(const std::string& format) { return format == "tsv" ? '\t' : ','; }
std::string extension_of(const std::string& format) { return format == "tsv" ? ".tsv" : ".csv"; }

struct Common {
  std::string data;
  std::string spec;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string format = "csv";
};

void require(const std::string& value, const char* key) {
  if (value.empty()) throw Error(ErrorCode::InvalidSpec, std::string("--") + key + " is required", key);
}

// ---- fit ----

std::string parameter_report(const FittedModel& fm, const Provenance& prov) {
  std::ostringstream os;
  os << prov.line();
  os << "model: surface_mode=" << to_string(fm.spec.surface_mode) << " groups=" << fm.num_groups
     << " criterion=" << to_string(fm.spec.criterion) << " errors=" << to_string(fm.spec.error_structure) << "\n";
  os << "loglik=" << fixed(fm.loglik, 6) << " loglik_ml=" << fixed(fm.loglik_ml, 6)
     << " loglik_reml=" << fixed(fm.loglik_reml, 6) << "\n";
  os << "converged=" << (fm.diagnostics.converged ? "yes" : "no") << " iterations=" << fm.diagnostics.iterations
     << " gradient_norm=" << fmt(fm.diagnostics.gradient_norm, 3) << "\n";
  if (!fm.diagnostics.at_bound.empty()) {
    os << "at_bound:";
    for (const auto& b : fm.diagnostics.at_bound) os << " " << b;
    os << "\n";
  }
  os << "\nvariance components (95% CI from observed information)\n";
  os << std::left << std::setw(14) << "parameter" << std::right << std::setw(14) << "estimate" << std::setw(14)
     << "lower" << std::setw(14) << "upper" << "\n";
  for (const auto& p : fm.variance_table) {
    os << std::left << std::setw(14) << p.name << std::right << std::setw(14) << fixed(p.estimate)
       << std::setw(14) << fixed(p.lower) << std::setw(14) << fixed(p.upper) << "\n";
  }
  os << "\nfixed effects\n";
  os << std::left << std::setw(24) << "term" << std::right << std::setw(14) << "estimate" << std::setw(14) << "sd"
     << "\n";
  for (std::size_t i = 0; i < fm.fixed_names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    os << std::left << std::setw(24) << fm.fixed_names[i] << std::right << std::setw(14) << fixed(fm.theta_hat(k))
       << std::setw(14) << fixed(fm.theta_se(k)) << "\n";
  }
  os << "\nsmooths\n";
  for (std::size_t s = 0; s < fm.smooths.size(); ++s) {
    os << std::left << std::setw(24) << fm.smooths[s].label << std::right << " basis_dim="
       << fm.smooths[s].basis->basis_dim() << " edf=" << fixed(fm.edf_per_smooth[s], 3) << "\n";
  }
  return os.str();
}

int cmd_fit(const Common& c) {
  require(c.data, "data");
  require(c.spec, "spec");
  const RunSpec rs = load_run_spec(c.spec);
  const fs::path out(c.out);
  prepare_out(out);
  Provenance prov{c.seed, fnv1a(to_json(rs))};
  append_log(out, "fit start data=" + c.data + " spec=" + c.spec);

  const LongitudinalDataset ds = load_dataset(c.data, rs.columns);
  const FittedModel fm = fit(ds, rs.model, rs.fit);

  write_text_file(out / "model.json", with_header(to_json(fm), prov));
  write_text_file(out / "parameters.txt", parameter_report(fm, prov));

  const char d = delimiter_of(c.format);
  std::ostringstream res;
  res << prov.line();
  res << "subject" << d << "outcome" << d << "time" << d << "w" << d << "h" << d << "observed" << d << "fitted" << d
      << "residual\n";
  const std::size_t N = ds.num_observations();
  for (std::size_t l = 0; l < fm.outcome_ids.size(); ++l) {
    for (std::size_t r = 0; r < N; ++r) {
      const auto row = static_cast<Eigen::Index>(l * N + r);
      const Observation& o = ds[r];
      const double y = fm.outcome_ids[l] == 1 ? o.y1 : o.y2;
      res << o.subject_id << d << fm.outcome_ids[l] << d << fmt(o.time, 10) << d << fmt(o.w, 10) << d
          << fmt(o.h, 10) << d << fmt(y, 10) << d << fmt(y - fm.residuals(row), 10) << d
          << fmt(fm.residuals(row), 10) << "\n";
    }
  }
  write_text_file(out / ("residuals" + extension_of(c.format)), res.str());
  append_log(out, "fit done");
  return kOk;
}

// ---- test ----

std::string test_report(const TestResult& r, const Provenance& prov) {
  std::ostringstream os;
  os << prov.line();
  os << "method: " << to_string(r.method) << "\n";
  os << "loglik_null: " << fixed(r.loglik_null, 6) << "\n";
  os << "loglik_full: " << fixed(r.loglik_full, 6) << "\n";
  os << "statistic: " << fixed(r.statistic, 6) << "\n";
  os << "reference: " << r.reference << "\n";
  os << "p_value: " << fmt(r.p_value, 6) << (r.p_value < 0.001 ? " (p < 0.001)" : "") << "\n";
  if (r.method == TestMethod::adjusted_lrt) {
    os << "nu: " << r.nu << "\n";
    os << "p_chisq_nu: " << fmt(r.p_chisq_nu, 6) << "\n";
    os << "p_chisq_nu1: " << fmt(r.p_chisq_nu1, 6) << "\n";
    if (r.edf_floor_applied) os << "note: basis dimension floor applied to at least one smooth\n";
  } else {
    os << "B: " << r.B << "\n";
    os << "B_effective: " << r.B_effective << "\n";
    os << "failures: " << r.failures << "\n";
    os << "negative_replicates: " << r.negative_count << "\n";
  }
  os << "seed: " << r.seed << "\n";
  return os.str();
}

int cmd_test(const Common& c, std::optional<int> B, std::optional<std::string> method) {
  require(c.data, "data");
  require(c.spec, "spec");
  if (!c.seed) throw Error(ErrorCode::InvalidSpec, "--seed is required for test", "seed");
  RunSpec rs = load_run_spec(c.spec);
  if (B) {
    if (*B < 1) throw Error(ErrorCode::InvalidSpec, "B must be >= 1", "B");
    rs.B = *B;
  }
  if (method) {
    if (*method == "bootstrap") rs.method = TestMethod::bootstrap;
    else if (*method == "adjusted_lrt") rs.method = TestMethod::adjusted_lrt;
    else throw Error(ErrorCode::InvalidSpec, "unknown test method '" + *method + "'", "method");
  }
  const fs::path out(c.out);
  prepare_out(out);
  Provenance prov{c.seed, fnv1a(to_json(rs))};
  append_log(out, "test start method=" + to_string(rs.method) + " threads=" + std::to_string(c.threads));

  const LongitudinalDataset ds = load_dataset(c.data, rs.columns);
  FitOptions fo = rs.fit;
  fo.compute_intervals = false;
  TestResult r;
  if (rs.method == TestMethod::bootstrap) {
    BootstrapOptions bo;
    bo.threads = c.threads;
    bo.equal_intercepts = rs.equal_intercepts;
    bo.fit = fo;
    r = bootstrap_test(ds, rs.model, rs.B, *c.seed, bo);
  } else {
    LrtOptions lo;
    lo.equal_intercepts = rs.equal_intercepts;
    lo.fit = fo;
    r = adjusted_lrt(ds, rs.model, *c.seed, lo);
  }
  write_text_file(out / "test_report.txt", test_report(r, prov));
  write_text_file(out / "test_result.json", with_header(to_json(r), prov));
  if (r.method == TestMethod::bootstrap) {
    const char d = delimiter_of(c.format);
    std::ostringstream os;
    os << prov.line() << "replicate" << d << "statistic" << d << "converged" << d << "negative\n";
    for (std::size_t b = 0; b < r.bootstrap_stats.size(); ++b) {
      os << b << d << fmt(r.bootstrap_stats[b], 12) << d << r.replicate_status[b].converged << d
         << r.replicate_status[b].negative << "\n";
    }
    write_text_file(out / ("replicates" + extension_of(c.format)), os.str());
  }
  append_log(out, "test done p=" + fmt(r.p_value));
  return kOk;
}

// ---- simulate ----

int cmd_simulate(const Common& c, std::optional<int> reps, bool data_only) {
  require(c.spec, "spec");
  if (!c.seed) throw Error(ErrorCode::InvalidSpec, "--seed is required for simulate", "seed");
  SimConfig cfg = load_sim_config(c.spec);
  cfg.seed = *c.seed;
  if (reps) cfg.replications = *reps;
  cfg.threads = c.threads;
  cfg.validate();
  const fs::path out(c.out);
  prepare_out(out);
  Provenance prov{c.seed, fnv1a(to_json(cfg))};
  const char d = delimiter_of(c.format);

  if (data_only) {
    const LongitudinalDataset ds = simulate_dataset(cfg, 0);
    write_dataset(ds, out / ("data" + extension_of(c.format)), d);
    append_log(out, "simulate wrote one dataset");
    return kOk;
  }

  append_log(out, "simulate start reps=" + std::to_string(cfg.replications) + " threads=" +
                      std::to_string(cfg.threads));
  const MonteCarloReport report = monte_carlo(cfg);
  std::ostringstream rows;
  rows << prov.line() << "replicate" << d << "statistic" << d << "nu" << d << "p_mixture" << d << "p_chisq_nu" << d
       << "p_chisq_nu1" << d << "converged\n";
  for (const auto& r : report.rows) {
    rows << r.replicate << d << fmt(r.statistic, 12) << d << r.nu << d << fmt(r.p_mixture, 12) << d
         << fmt(r.p_nu, 12) << d << fmt(r.p_nu1, 12) << d << r.converged << "\n";
  }
  write_text_file(out / ("monte_carlo" + extension_of(c.format)), rows.str());

  std::ostringstream sum;
  sum << prov.line();
  sum << "m=" << cfg.m << " n=" << cfg.n << " groups=" << cfg.num_groups << " truth=" << to_string(cfg.truth)
      << " test=" << to_string(cfg.test) << " replications=" << cfg.replications << " level=" << cfg.level
      << "\n";
  sum << std::left << std::setw(12) << "reference" << std::right << std::setw(10) << "rejected" << std::setw(8)
      << "valid" << std::setw(10) << "rate" << std::setw(10) << "ci_low" << std::setw(10) << "ci_high" << "\n";
  for (const auto& s : report.summary) {
    sum << std::left << std::setw(12) << s.reference << std::right << std::setw(10) << s.rejections << std::setw(8)
        << s.valid << std::setw(10) << fixed(s.rate, 3) << std::setw(10) << fixed(s.interval.lower, 3)
        << std::setw(10) << fixed(s.interval.upper, 3) << "\n";
  }
  sum << "failures: " << report.failures << "\n";
  write_text_file(out / "summary.txt", sum.str());
  write_text_file(out / "summary.json", with_header(to_json(report), prov));
  append_log(out, "simulate done");
  return kOk;
}

// ---- predict-grid ----

int cmd_predict_grid(const Common& c, const std::string& model_path, int grid_res, std::optional<int> group) {
  require(model_path, "model");
  if (grid_res < 1) throw Error(ErrorCode::InvalidSpec, "grid resolution must be >= 1", "grid-res");
  const FittedModel fm = load_model(model_path);
  const fs::path out(c.out);
  prepare_out(out);
  Provenance prov{c.seed, fnv1a(read_text_file(model_path)) ^ static_cast<std::uint64_t>(grid_res)};

  double wmin = INFINITY, wmax = -INFINITY, hmin = INFINITY, hmax = -INFINITY;
  for (const auto& hull : fm.group_hulls) {
    for (const auto& p : hull) {
      wmin = std::min(wmin, p.w);
      wmax = std::max(wmax, p.w);
      hmin = std::min(hmin, p.h);
      hmax = std::max(hmax, p.h);
    }
  }
  auto axis = [grid_res](double lo, double hi, int i) {
    return grid_res == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (grid_res - 1);
  };
  std::vector<Point2> grid;
  for (int i = 0; i < grid_res; ++i) {
    for (int j = 0; j < grid_res; ++j) grid.push_back({axis(wmin, wmax, i), axis(hmin, hmax, j)});
  }

  std::vector<int> groups;
  if (group) groups.push_back(*group);
  else for (int g = 1; g <= fm.num_groups; ++g) groups.push_back(g);

  const char d = delimiter_of(c.format);
  std::ostringstream os;
  os << prov.line() << "group" << d << "outcome" << d << "w" << d << "h" << d << "fit" << d << "se" << d
     << "extrapolated\n";
  for (int g : groups) {
    for (int outcome : fm.outcome_ids) {
      const auto pred = predict_surface(fm, g, outcome, grid);
      for (std::size_t r = 0; r < grid.size(); ++r) {
        os << g << d << outcome << d << fmt(grid[r].w, 10) << d << fmt(grid[r].h, 10) << d << fmt(pred[r].fit, 10)
           << d << fmt(pred[r].se, 10) << d << (pred[r].extrapolated ? 1 : 0) << "\n";
      }
    }
  }
  write_text_file(out / ("grid" + extension_of(c.format)), os.str());
  append_log(out, "predict-grid done");
  return kOk;
}

// ---- summarize ----

int cmd_summarize(const Common& c) {
  require(c.data, "data");
  ColumnSchema columns;
  std::uint64_t hash = 0;
  if (!c.spec.empty()) {
    const RunSpec rs = load_run_spec(c.spec);
    columns = rs.columns;
    hash = fnv1a(to_json(rs));
  }
  const LongitudinalDataset ds = load_dataset(c.data, columns);
  const DatasetSummary s = summarize(ds);
  Provenance prov{c.seed, hash};
  std::ostringstream os;
  os << prov.line();
  os << "subjects: " << s.num_subjects << "\n";
  os << "observations: " << s.num_observations << "\n";
  os << "rows_rejected: " << ds.rows_rejected() << "\n";
  os << "y1: mean=" << fixed(s.y1.mean) << " sd=" << fixed(s.y1.sd) << "\n";
  os << "y2: mean=" << fixed(s.y2.mean) << " sd=" << fixed(s.y2.sd) << "\n";
  for (const auto& g : s.groups) {
    os << "group " << g.group << ": subjects=" << g.subjects << " observations=" << g.observations << " w=["
       << fmt(g.w.min) << ", " << fmt(g.w.max) << "] h=[" << fmt(g.h.min) << ", " << fmt(g.h.max) << "]\n";
  }
  const fs::path out(c.out);
  prepare_out(out);
  write_text_file(out / "summary.txt", os.str());
  std::cout << os.str();
  return kOk;
}

void report_error(std::string_view code, const std::string& message, const std::string& key) {
  nlohmann::ordered_json j;
  j["error"] = std::string(code);
  j["message"] = message;
  j["key"] = key.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(key);
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint semiparametric mixed models for paired longitudinal outcomes"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common c;
  std::optional<int> B, reps, group;
  std::optional<std::string> method;
  std::string model_path;
  int grid_res = 50;
  bool data_only = false;

  auto common = [&c](CLI::App* sub, bool data, bool spec) {
    if (data) sub->add_option("--data", c.data, "Delimited data file");
    if (spec) sub->add_option("--spec", c.spec, "JSON configuration file");
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--seed", c.seed, "Master random seed");
    sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
    sub->add_option("--format", c.format, "Delimited output format")->check(CLI::IsMember({"csv", "tsv"}));
  };

  auto* fit_cmd = app.add_subcommand("fit", "Fit a joint model");
  common(fit_cmd, true, true);
  auto* test_cmd = app.add_subcommand("test", "Test equality of group surfaces");
  common(test_cmd, true, true);
  test_cmd->add_option("--B", B, "Bootstrap replicates");
  test_cmd->add_option("--method", method, "bootstrap or adjusted_lrt (overrides the spec)");
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo size and power study");
  common(sim_cmd, false, true);
  sim_cmd->add_option("--reps", reps, "Replications");
  sim_cmd->add_flag("--data-only", data_only, "Write one simulated dataset instead of running the study");
  auto* grid_cmd = app.add_subcommand("predict-grid", "Evaluate fitted surfaces on a grid");
  common(grid_cmd, false, false);
  grid_cmd->add_option("--model", model_path, "Fitted model file");
  grid_cmd->add_option("--grid-res", grid_res, "Grid points per axis");
  grid_cmd->add_option("--group", group, "Restrict to one group");
  auto* sum_cmd = app.add_subcommand("summarize", "Summarize a dataset");
  common(sum_cmd, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("InvalidArguments", e.what(), "");
    return kUserError;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(c);
    if (test_cmd->parsed()) return cmd_test(c, B, method);
    if (sim_cmd->parsed()) return cmd_simulate(c, reps, data_only);
    if (grid_cmd->parsed()) return cmd_predict_grid(c, model_path, grid_res, group);
    if (sum_cmd->parsed()) return cmd_summarize(c);
  } catch (const Error& e) {
    report_error(error_code_name(e.code()), e.what(), e.key());
    return is_numerical(e.code()) ? kNumerical : kUserError;
  } catch (const std::exception& e) {
    report_error("Internal", e.what(), "");
    return kNumerical;
  }
  return kUserError;
}
