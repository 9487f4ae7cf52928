#include "pairsurf/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include "pairsurf/error.hpp"

namespace pairsurf {

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        current.push_back('"');
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == delimiter && !quoted) {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == ".";
}

double parse_number(const std::string& cell, const std::string& column, std::size_t line_no) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw Error(ErrorCode::NonNumeric,
                "line " + std::to_string(line_no) + ": cannot parse '" + cell + "' in column '" + column + "'",
                column);
  }
  return value;
}

int parse_integer(const std::string& cell, const std::string& column, std::size_t line_no) {
  const double v = parse_number(cell, column, line_no);
  if (v != std::floor(v) || std::abs(v) > 1e9) {
    throw Error(ErrorCode::NonNumeric,
                "line " + std::to_string(line_no) + ": expected an integer in column '" + column + "'", column);
  }
  return static_cast<int>(v);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

LongitudinalDataset LongitudinalDataset::from_observations(std::vector<Observation> observations,
                                                           std::vector<std::string> parametric_names) {
  LongitudinalDataset ds;
  ds.parametric_names_ = std::move(parametric_names);
  if (observations.empty()) {
    throw Error(ErrorCode::InvalidData, "dataset has no observations");
  }

  // Group rows by subject, keeping subjects in order of first appearance.
  std::unordered_map<std::string, std::size_t> subject_index;
  std::vector<std::vector<Observation>> by_subject;
  for (auto& obs : observations) {
    if (obs.parametric.size() != ds.parametric_names_.size()) {
      throw Error(ErrorCode::InvalidData, "observation of subject '" + obs.subject_id +
                                              "' has the wrong number of parametric covariates");
    }
    const bool finite = std::isfinite(obs.time) && std::isfinite(obs.y1) && std::isfinite(obs.y2) &&
                        std::isfinite(obs.w) && std::isfinite(obs.h) &&
                        std::all_of(obs.parametric.begin(), obs.parametric.end(),
                                    [](double v) { return std::isfinite(v); });
    if (!finite) {
      throw Error(ErrorCode::InvalidData, "non-finite value for subject '" + obs.subject_id + "'");
    }
    if (obs.group < 1) {
      throw Error(ErrorCode::InvalidData, "group labels must be integers >= 1", "group");
    }
    auto [it, inserted] = subject_index.try_emplace(obs.subject_id, by_subject.size());
    if (inserted) by_subject.emplace_back();
    by_subject[it->second].push_back(std::move(obs));
  }

  int max_group = 0;
  for (auto& rows : by_subject) {
    const int group = rows.front().group;
    for (const auto& r : rows) {
      if (r.group != group) {
        throw Error(ErrorCode::NonConstantGroup,
                    "subject '" + r.subject_id + "' appears in groups " + std::to_string(group) + " and " +
                        std::to_string(r.group),
                    "group");
      }
    }
    max_group = std::max(max_group, group);

    const bool has_visit = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.visit_index > 0; });
    if (has_visit) {
      std::map<int, int> seen;
      for (const auto& r : rows) {
        if (++seen[r.visit_index] > 1) {
          throw Error(ErrorCode::DuplicateVisit, "subject '" + r.subject_id + "' has visit " +
                                                     std::to_string(r.visit_index) + " more than once");
        }
      }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    for (std::size_t j = 1; j < rows.size(); ++j) {
      if (rows[j].time == rows[j - 1].time) {
        throw Error(ErrorCode::DuplicateVisit,
                    "subject '" + rows[j].subject_id + "' has two visits at time " + format_double(rows[j].time));
      }
      if (has_visit && rows[j].visit_index <= rows[j - 1].visit_index) {
        throw Error(ErrorCode::InvalidData,
                    "subject '" + rows[j].subject_id + "': time is not increasing in visit index", "visit");
      }
    }
    if (!has_visit) {
      for (std::size_t j = 0; j < rows.size(); ++j) rows[j].visit_index = static_cast<int>(j + 1);
    }
  }

  std::vector<std::size_t> subjects_per_group(static_cast<std::size_t>(max_group) + 1, 0);
  ds.offsets_.push_back(0);
  for (std::size_t i = 0; i < by_subject.size(); ++i) {
    auto& rows = by_subject[i];
    ds.subject_ids_.push_back(rows.front().subject_id);
    ds.subject_groups_.push_back(rows.front().group);
    ++subjects_per_group[static_cast<std::size_t>(rows.front().group)];
    for (auto& r : rows) {
      ds.observations_.push_back(std::move(r));
      ds.row_subject_.push_back(i);
    }
    ds.offsets_.push_back(ds.observations_.size());
  }
  for (int g = 1; g <= max_group; ++g) {
    if (subjects_per_group[static_cast<std::size_t>(g)] == 0) {
      throw Error(ErrorCode::EmptyGroup, "group " + std::to_string(g) + " has no subjects", "group");
    }
  }
  ds.num_groups_ = max_group;
  return ds;
}

std::vector<std::size_t> LongitudinalDataset::visits_per_subject() const {
  std::vector<std::size_t> out(num_subjects());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = visits(i);
  return out;
}

LongitudinalDataset LongitudinalDataset::with_outcomes(const std::vector<double>& y1,
                                                       const std::vector<double>& y2) const {
  if (y1.size() != observations_.size() || y2.size() != observations_.size()) {
    throw Error(ErrorCode::LengthMismatch, "replacement outcomes have the wrong length");
  }
  LongitudinalDataset copy = *this;
  for (std::size_t r = 0; r < observations_.size(); ++r) {
    copy.observations_[r].y1 = y1[r];
    copy.observations_[r].y2 = y2[r];
  }
  return copy;
}

LongitudinalDataset load_dataset(const std::filesystem::path& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::Io, "cannot open data file '" + path.string() + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::Format, "data file '" + path.string() + "' is empty");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

  std::vector<std::string> header = split_line(line, schema.delimiter);
  for (auto& h : header) h = trim(h);
  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in header", name);
    }
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t c_subject = column_of(schema.subject);
  const std::size_t c_time = column_of(schema.time);
  const std::size_t c_y1 = column_of(schema.y1);
  const std::size_t c_y2 = column_of(schema.y2);
  const std::size_t c_group = column_of(schema.group);
  const std::size_t c_w = column_of(schema.w);
  const std::size_t c_h = column_of(schema.h);
  std::optional<std::size_t> c_visit;
  if (schema.visit) c_visit = column_of(*schema.visit);
  std::vector<std::size_t> c_param;
  for (const auto& p : schema.parametric) c_param.push_back(column_of(p));

  std::vector<Observation> observations;
  std::size_t rejected = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_line(line, schema.delimiter);
    for (auto& c : cells) c = trim(c);
    if (cells.size() < header.size()) cells.resize(header.size());

    std::vector<std::size_t> required = {c_subject, c_time, c_y1, c_y2, c_group, c_w, c_h};
    required.insert(required.end(), c_param.begin(), c_param.end());
    if (c_visit) required.push_back(*c_visit);
    if (std::any_of(required.begin(), required.end(), [&](std::size_t c) { return is_missing(cells[c]); })) {
      ++rejected;
      continue;
    }

    Observation obs;
    obs.subject_id = cells[c_subject];
    obs.time = parse_number(cells[c_time], schema.time, line_no);
    obs.y1 = parse_number(cells[c_y1], schema.y1, line_no);
    obs.y2 = parse_number(cells[c_y2], schema.y2, line_no);
    obs.group = parse_integer(cells[c_group], schema.group, line_no);
    obs.w = parse_number(cells[c_w], schema.w, line_no);
    obs.h = parse_number(cells[c_h], schema.h, line_no);
    if (c_visit) obs.visit_index = parse_integer(cells[*c_visit], *schema.visit, line_no);
    for (std::size_t k = 0; k < c_param.size(); ++k) {
      obs.parametric.push_back(parse_number(cells[c_param[k]], schema.parametric[k], line_no));
    }
    observations.push_back(std::move(obs));
  }

  LongitudinalDataset ds = LongitudinalDataset::from_observations(std::move(observations), schema.parametric);
  ds.rows_rejected_ = rejected;
  return ds;
}

void write_dataset(const LongitudinalDataset& ds, const std::filesystem::path& path, char delimiter) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::Io, "cannot write data file '" + path.string() + "'");
  }
  const char d = delimiter;
  out << "subject" << d << "visit" << d << "time" << d << "y1" << d << "y2" << d << "group" << d << "w" << d << "h";
  for (const auto& name : ds.parametric_names()) out << d << name;
  out << '\n';
  for (const auto& o : ds.observations()) {
    out << o.subject_id << d << o.visit_index << d << format_double(o.time) << d << format_double(o.y1) << d
        << format_double(o.y2) << d << o.group << d << format_double(o.w) << d << format_double(o.h);
    for (double p : o.parametric) out << d << format_double(p);
    out << '\n';
  }
}

namespace {

MomentSummary moments(const std::vector<double>& v) {
  MomentSummary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

}  // namespace

DatasetSummary summarize(const LongitudinalDataset& ds) {
  DatasetSummary s;
  s.num_subjects = ds.num_subjects();
  s.num_observations = ds.num_observations();
  std::vector<double> y1, y2;
  y1.reserve(ds.num_observations());
  y2.reserve(ds.num_observations());
  for (const auto& o : ds.observations()) {
    y1.push_back(o.y1);
    y2.push_back(o.y2);
  }
  s.y1 = moments(y1);
  s.y2 = moments(y2);

  constexpr double inf = std::numeric_limits<double>::infinity();
  s.groups.resize(static_cast<std::size_t>(ds.num_groups()));
  for (int g = 0; g < ds.num_groups(); ++g) {
    s.groups[static_cast<std::size_t>(g)] = GroupSummary{g + 1, 0, 0, {inf, -inf}, {inf, -inf}};
  }
  for (std::size_t i = 0; i < ds.num_subjects(); ++i) {
    auto& gs = s.groups[static_cast<std::size_t>(ds.subject_group(i) - 1)];
    ++gs.subjects;
    for (std::size_t r = ds.subject_begin(i); r < ds.subject_end(i); ++r) {
      const auto& o = ds[r];
      ++gs.observations;
      gs.w.min = std::min(gs.w.min, o.w);
      gs.w.max = std::max(gs.w.max, o.w);
      gs.h.min = std::min(gs.h.min, o.h);
      gs.h.max = std::max(gs.h.max, o.h);
    }
  }
  return s;
}

}  // namespace pairsurf
