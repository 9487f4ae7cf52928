#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "pairsurf/error.hpp"
#include "pairsurf/serialization.hpp"
#include "support/temp_dir.hpp"

using namespace pairsurf;

namespace {

ErrorCode parse_error(std::string_view text, std::string* key = nullptr) {
  try {
    parse_run_spec(text);
  } catch (const Error& e) {
    if (key) *key = e.key();
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("run spec parsing") {
  const RunSpec rs = parse_run_spec(R"({
    "surface_mode": "group_specific", "num_groups": 4, "parametric_terms": ["hr"],
    "basis_dim": 20, "error_structure": "car1_on_time", "criterion": "ML", "outcomes": "paired",
    "columns": {"subject": "id", "y1": "sbp", "delimiter": "\t", "visit": "vis"},
    "fit": {"num_starts": 2, "fixed_rho": 0.0, "max_iterations": 50, "compute_intervals": false},
    "test": {"method": "bootstrap", "B": 199, "equal_intercepts": true}
  })");
  CHECK(rs.model.num_groups == 4);
  CHECK(rs.model.basis.k == 20);
  CHECK(rs.model.error_structure == ErrorStructure::car1);
  CHECK(rs.model.criterion == Criterion::ml);
  CHECK(rs.model.parametric_terms == std::vector<std::string>{"hr"});
  CHECK(rs.columns.subject == "id");
  CHECK(rs.columns.y1 == "sbp");
  CHECK(rs.columns.y2 == "y2");
  CHECK(rs.columns.delimiter == '\t');
  CHECK(rs.columns.visit == std::optional<std::string>("vis"));
  CHECK(rs.columns.parametric == std::vector<std::string>{"hr"});
  CHECK(rs.fit.num_starts == 2);
  CHECK(rs.fit.fixed_rho == std::optional<double>(0.0));
  CHECK(rs.fit.optimizer.max_iterations == 50);
  CHECK_FALSE(rs.fit.compute_intervals);
  CHECK(rs.method == TestMethod::bootstrap);
  CHECK(rs.B == 199);
  CHECK(rs.equal_intercepts);

  const RunSpec defaults = parse_run_spec("{}");
  CHECK(defaults.model.basis.k == 30);
  CHECK(defaults.fit.compute_intervals);
  CHECK(defaults.method == TestMethod::adjusted_lrt);
}

TEST_CASE("run spec round trip") {
  RunSpec rs = parse_run_spec(R"({"num_groups": 2, "basis_dims": [[10, 12], [8, 9]], "penalized": false,
                                  "knots": [[0.1, 0.2], [0.5, 0.9], [0.7, 0.3], [0.2, 0.8]],
                                  "outcomes": "second", "fit": {"fixed_delta": 1.25}})");
  const RunSpec back = parse_run_spec(to_json(rs));
  CHECK(back.model.basis_dims == rs.model.basis_dims);
  CHECK_FALSE(back.model.penalized);
  REQUIRE(back.model.basis.knots.has_value());
  CHECK(back.model.basis.knots->size() == 4);
  CHECK(back.model.outcomes == OutcomeSet::second);
  CHECK(back.fit.fixed_delta == std::optional<double>(1.25));
  CHECK(to_json(back) == to_json(rs));
}

TEST_CASE("run spec errors name the key") {
  std::string key;
  CHECK(parse_error(R"({"columns": {"x": "a"}})", &key) == ErrorCode::InvalidSpec);
  CHECK(key == "columns.x");
  CHECK(parse_error(R"({"basis_dimension": 10})", &key) == ErrorCode::InvalidSpec);
  CHECK(key == "basis_dimension");
  CHECK(parse_error(R"({"criterion": "bayes"})", &key) == ErrorCode::InvalidSpec);
  CHECK(key == "criterion");
  CHECK(parse_error(R"({"num_groups": "two"})", &key) == ErrorCode::InvalidSpec);
  CHECK(parse_error(R"({"num_groups": 2,)") == ErrorCode::Format);
  CHECK(parse_error("[1, 2]") != ErrorCode::Io);
}

TEST_CASE("simulation config round trip") {
  SimConfig cfg = parse_sim_config(R"({"m": 30, "n": 10, "test": "bootstrap", "B": 99, "ar_corr": 0.3,
                                       "truth": "group_specific_surfaces", "seed": 12, "threads": 4})");
  CHECK(cfg.m == 30);
  CHECK(cfg.B == 99);
  CHECK(cfg.test == SimTest::bootstrap);
  CHECK(cfg.truth == SimTruth::group_specific_surfaces);
  CHECK(cfg.ar_corr == std::optional<double>(0.3));
  CHECK(cfg.threads == 4);
  const SimConfig back = parse_sim_config(to_json(cfg));
  CHECK(back.m == 30);
  CHECK(back.seed == 12);
  CHECK(back.ar_corr == cfg.ar_corr);
  // Thread count never enters the serialized configuration.
  SimConfig other = cfg;
  other.threads = 1;
  CHECK(to_json(other) == to_json(cfg));
  CHECK_THROWS_AS(parse_sim_config(R"({"m": 31})"), Error);
  CHECK_THROWS_AS(parse_sim_config(R"({"sigma": 1})"), Error);
}

TEST_CASE("fitted model round trip") {
  SimConfig cfg;
  cfg.m = 10;
  cfg.n = 6;
  cfg.basis_dim = 8;
  cfg.ar_corr = 0.3;
  const auto ds = simulate_dataset(cfg, 0);
  FitOptions opt;
  opt.compute_intervals = true;
  const FittedModel fm = fit(ds, simulation_model_spec(cfg), opt);

  testing::TempDir dir;
  const auto path = dir.path() / "model.json";
  save_model(fm, path);
  const FittedModel back = load_model(path);
  CHECK(back.design == nullptr);
  CHECK(back.theta_hat == fm.theta_hat);
  CHECK(back.b_hat == fm.b_hat);
  CHECK(back.tau_hat.log_lambda == fm.tau_hat.log_lambda);
  CHECK(back.tau_hat.ar_corr == fm.tau_hat.ar_corr);
  CHECK(back.loglik == fm.loglik);
  CHECK(back.edf_per_smooth == fm.edf_per_smooth);
  CHECK(back.fixed_names == fm.fixed_names);
  CHECK(back.variance_table.size() == fm.variance_table.size());
  CHECK(back.spec.basis.k == fm.spec.basis.k);

  std::vector<Point2> grid;
  for (int i = 0; i <= 6; ++i) {
    for (int j = 0; j <= 6; ++j) grid.push_back({i / 6.0, j / 6.0});
  }
  for (int g = 1; g <= 2; ++g) {
    for (int o = 1; o <= 2; ++o) {
      const auto a = predict_surface(fm, g, o, grid);
      const auto b = predict_surface(back, g, o, grid);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        CHECK(a[k].fit == b[k].fit);
        CHECK(a[k].se == b[k].se);
        CHECK(a[k].extrapolated == b[k].extrapolated);
      }
    }
  }
  CHECK(to_json(back) == to_json(fm));

  const auto j = nlohmann::json::parse(to_json(fm));
  CHECK(j.at("format") == "pairsurf-model");
  CHECK(j.at("version") == kModelFormatVersion);
  CHECK_THROWS_AS(parse_model(R"({"format": "other", "version": 1})"), Error);
  CHECK_THROWS_AS(parse_model(R"({"format": "pairsurf-model", "version": 99})"), Error);
}

TEST_CASE("test result and report serialization") {
  TestResult t;
  t.method = TestMethod::bootstrap;
  t.statistic = 2.5;
  t.B = 3;
  t.B_effective = 2;
  t.bootstrap_stats = {1.0, std::nan(""), 3.0};
  t.replicate_status = {{true, false}, {false, false}, {true, true}};
  const auto j = nlohmann::json::parse(to_json(t));
  CHECK(j.at("method") == "bootstrap");
  CHECK(j.at("statistic") == 2.5);
  REQUIRE(j.at("replicates").size() == 3);
  CHECK(j.at("replicates")[1].at("statistic").is_null());
  CHECK(j.at("replicates")[2].at("negative") == true);

  MonteCarloReport r;
  r.rows.resize(2);
  r.summary.push_back({"mixture", 1, 2, 0.5, {0.01, 0.99}});
  const auto jr = nlohmann::json::parse(to_json(r));
  CHECK(jr.at("summary")[0].at("reference") == "mixture");
  CHECK(jr.at("failures") == 0);
  CHECK(jr.at("config").at("m") == r.config.m);
}

TEST_CASE("fnv1a and file helpers") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
  testing::TempDir dir;
  write_text_file(dir.path() / "x.txt", "hello");
  CHECK(read_text_file(dir.path() / "x.txt") == "hello");
  try {
    read_text_file(dir.path() / "missing.txt");
    FAIL("expected Io");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
}
