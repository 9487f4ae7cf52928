#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pairsurf {

// One visit of one subject: the paired outcomes, the two surface covariates,
// any parametric covariates and the time used by serial error correlation.
struct Observation {
  std::string subject_id;
  int visit_index = 0;  // 1-based; derived from time order when absent (0)
  double time = 0.0;
  double y1 = 0.0;
  double y2 = 0.0;
  double w = 0.0;
  double h = 0.0;
  std::vector<double> parametric;
  int group = 1;  // 1..G
};

// Maps dataset roles onto column names of a delimited file.
struct ColumnSchema {
  std::string subject = "subject";
  std::string time = "time";
  std::string y1 = "y1";
  std::string y2 = "y2";
  std::string group = "group";
  std::string w = "w";
  std::string h = "h";
  std::optional<std::string> visit;
  std::vector<std::string> parametric;
  char delimiter = ',';
};

// Immutable, validated paired longitudinal data. Subjects appear in order of
// first appearance and visits are sorted by time within a subject, so row r of
// the dataset is the r-th observation of the stacked outcome vectors.
class LongitudinalDataset {
 public:
  // Validates and orders the observations. Throws pairsurf::Error with
  // DuplicateVisit, NonConstantGroup, EmptyGroup or InvalidData.
  static LongitudinalDataset from_observations(std::vector<Observation> observations,
                                               std::vector<std::string> parametric_names = {});

  const std::vector<Observation>& observations() const { return observations_; }
  const Observation& operator[](std::size_t row) const { return observations_[row]; }

  std::size_t num_subjects() const { return subject_ids_.size(); }
  std::size_t num_observations() const { return observations_.size(); }
  int num_groups() const { return num_groups_; }
  std::size_t num_parametric() const { return parametric_names_.size(); }
  const std::vector<std::string>& parametric_names() const { return parametric_names_; }

  // Row range [subject_begin(i), subject_end(i)) of subject i.
  std::size_t subject_begin(std::size_t i) const { return offsets_[i]; }
  std::size_t subject_end(std::size_t i) const { return offsets_[i + 1]; }
  std::size_t visits(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  std::vector<std::size_t> visits_per_subject() const;
  const std::string& subject_id(std::size_t i) const { return subject_ids_[i]; }
  int subject_group(std::size_t i) const { return subject_groups_[i]; }
  // Subject index of each row.
  const std::vector<std::size_t>& row_subject() const { return row_subject_; }

  // Number of rows dropped at ingestion because a required field was missing.
  std::size_t rows_rejected() const { return rows_rejected_; }

  // Copy with replaced outcomes (same subjects, covariates and ordering).
  LongitudinalDataset with_outcomes(const std::vector<double>& y1, const std::vector<double>& y2) const;

 private:
  friend LongitudinalDataset load_dataset(const std::filesystem::path&, const ColumnSchema&);

  std::vector<Observation> observations_;
  std::vector<std::string> parametric_names_;
  std::vector<std::string> subject_ids_;
  std::vector<int> subject_groups_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> row_subject_;
  int num_groups_ = 0;
  std::size_t rows_rejected_ = 0;
};

// Reads a delimited text table with a header row. Rows with an empty or NA
// required field are dropped and counted; unparsable numbers raise NonNumeric.
LongitudinalDataset load_dataset(const std::filesystem::path& path, const ColumnSchema& schema = {});

// Writes the dataset with the default column names (and parametric names).
void write_dataset(const LongitudinalDataset& ds, const std::filesystem::path& path, char delimiter = ',');

struct Range {
  double min = 0.0;
  double max = 0.0;
};

struct MomentSummary {
  double mean = 0.0;
  double sd = 0.0;
};

struct GroupSummary {
  int group = 0;
  std::size_t subjects = 0;
  std::size_t observations = 0;
  Range w;
  Range h;
};

struct DatasetSummary {
  std::size_t num_subjects = 0;
  std::size_t num_observations = 0;
  MomentSummary y1;
  MomentSummary y2;
  std::vector<GroupSummary> groups;
};

DatasetSummary summarize(const LongitudinalDataset& ds);

}  // namespace pairsurf
