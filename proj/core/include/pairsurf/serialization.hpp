#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "pairsurf/dataset.hpp"
#include "pairsurf/design.hpp"
#include "pairsurf/fit.hpp"
#include "pairsurf/inference.hpp"
#include "pairsurf/simulation.hpp"

namespace pairsurf {

inline constexpr int kModelFormatVersion = 1;

// Everything a JSON run configuration can set: the model, the column mapping
// of the data file, fitting options and the test to run.
struct RunSpec {
  ModelSpec model;
  ColumnSchema columns;
  FitOptions fit;
  TestMethod method = TestMethod::adjusted_lrt;
  bool equal_intercepts = false;
  int B = 1000;
};

// Unknown keys and bad values raise InvalidSpec naming the key; malformed
// JSON raises Format.
RunSpec parse_run_spec(std::string_view json_text);
RunSpec load_run_spec(const std::filesystem::path& path);
std::string to_json(const RunSpec& spec);

SimConfig parse_sim_config(std::string_view json_text);
SimConfig load_sim_config(const std::filesystem::path& path);
std::string to_json(const SimConfig& cfg);

// Versioned, self-describing model file. The loaded model has no design but
// supports predict_surface and reporting.
std::string to_json(const FittedModel& fm);
FittedModel parse_model(std::string_view json_text);
void save_model(const FittedModel& fm, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

std::string to_json(const TestResult& result);
std::string to_json(const MonteCarloReport& report);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace pairsurf
