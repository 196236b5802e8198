#pragma once

// Severity-score data model: long (per-subject) records, group-by-grade
// count tables, and cut-point binarization into correlated binary endpoints.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sevtest/core.hpp"

namespace sevtest {

struct SubjectRecord {
  int group = 0;  // index into Dataset::group_labels
  std::optional<double> dose;
  int severity = 0;
};

// Per-subject severity data. Groups are ordered; the first group is the
// control unless the caller re-anchors it. The declared grade range is
// authoritative: severities outside [grade_min, grade_max] are rejected.
struct Dataset {
  std::vector<std::string> group_labels;
  std::vector<std::optional<double>> group_doses;  // aligned with group_labels
  std::vector<SubjectRecord> records;
  int grade_min = 0;
  int grade_max = 0;
  std::vector<std::string> notes;  // non-fatal observations, e.g. "no comparisons possible"

  std::size_t n_groups() const { return group_labels.size(); }
  std::size_t n_subjects() const { return records.size(); }

  std::vector<int> group_sizes() const {
    std::vector<int> sizes(group_labels.size(), 0);
    for (const auto& r : records) sizes[static_cast<std::size_t>(r.group)]++;
    return sizes;
  }

  bool has_doses() const {
    for (const auto& d : group_doses)
      if (!d) return false;
    return !group_doses.empty();
  }

  std::vector<double> doses() const {
    std::vector<double> out;
    out.reserve(group_doses.size());
    for (const auto& d : group_doses) out.push_back(d.value());
    return out;
  }

  // Moves `label` to the front so it becomes the control group.
  void set_control(const std::string& label);

  void validate() const;
};

// groups x grades count table.
struct SeverityTable {
  std::vector<std::string> groups;
  std::vector<int> grades;                     // ordered grade values
  std::vector<std::vector<long long>> counts;  // [group][grade]

  long long total() const {
    long long t = 0;
    for (const auto& row : counts)
      for (long long c : row) t += c;
    return t;
  }

  void validate() const {
    if (groups.empty() || grades.empty()) throw parse_error("severity table is empty");
    if (!std::is_sorted(grades.begin(), grades.end()) ||
        std::adjacent_find(grades.begin(), grades.end()) != grades.end())
      throw parse_error("grade values must be strictly increasing");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (counts[g].size() != grades.size()) throw parse_error("ragged count row for group " + groups[g]);
      long long row = 0;
      for (long long c : counts[g]) {
        if (c < 0) throw parse_error("negative count for group " + groups[g]);
        row += c;
      }
      if (row < 1) throw parse_error("empty group: " + groups[g]);
    }
  }
};

// Cut-point indicator endpoints EP_c(i) = 1 iff severity_i > c.
struct BinarizedMatrix {
  std::vector<int> cutpoints;
  std::vector<std::string> labels;  // "EP{c}", plus "score" if raw column appended
  Eigen::MatrixXd columns;          // n_subjects x n_endpoints, subject order = Dataset order
  std::vector<std::string> warnings;
};

inline void Dataset::set_control(const std::string& label) {
  auto it = std::find(group_labels.begin(), group_labels.end(), label);
  if (it == group_labels.end()) throw parse_error("unknown control group: " + label);
  std::size_t idx = static_cast<std::size_t>(it - group_labels.begin());
  if (idx == 0) return;
  std::rotate(group_labels.begin(), group_labels.begin() + idx, group_labels.begin() + idx + 1);
  std::rotate(group_doses.begin(), group_doses.begin() + idx, group_doses.begin() + idx + 1);
  for (auto& r : records) {
    if (r.group == static_cast<int>(idx))
      r.group = 0;
    else if (r.group < static_cast<int>(idx))
      r.group += 1;
  }
}

inline void Dataset::validate() const {
  if (group_labels.empty()) throw parse_error("no groups declared");
  if (records.empty()) throw parse_error("no records");
  if (grade_min >= grade_max) throw parse_error("grade range must satisfy g_min < g_max");
  if (group_doses.size() != group_labels.size()) throw parse_error("dose list does not match group list");
  std::vector<int> sizes(group_labels.size(), 0);
  for (const auto& r : records) {
    if (r.group < 0 || r.group >= static_cast<int>(group_labels.size()))
      throw parse_error("record references unknown group");
    if (r.severity < grade_min || r.severity > grade_max)
      throw parse_error("severity " + std::to_string(r.severity) + " outside declared grade range [" +
                        std::to_string(grade_min) + "," + std::to_string(grade_max) + "]");
    sizes[static_cast<std::size_t>(r.group)]++;
  }
  for (std::size_t g = 0; g < sizes.size(); ++g)
    if (sizes[g] == 0) throw parse_error("empty group: " + group_labels[g]);
}

namespace csv {

// Minimal CSV line splitter: commas, optional double quotes, trimmed fields.
inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    std::size_t b = f.find_first_not_of(" \t");
    std::size_t e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

}  // namespace csv

// Column-name mapping for long-format CSV input.
struct LongSchema {
  std::string group = "group";
  std::string dose = "dose";         // optional column
  std::string severity = "severity";
  std::vector<std::string> group_order;  // explicit order; empty = first appearance
};

// Long format: one row per subject, header row required. Groups are ordered
// by first appearance unless the schema supplies an explicit order; the
// first group is the control. The grade range defaults to the observed
// min/max severity.
inline Dataset parse_long_csv(std::istream& in, const LongSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("empty input: missing header");
  auto header = csv::split_line(line);
  auto col_of = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  int gcol = col_of(schema.group);
  int scol = col_of(schema.severity);
  int dcol = col_of(schema.dose);
  if (gcol < 0) throw parse_error("missing column: " + schema.group);
  if (scol < 0) throw parse_error("missing column: " + schema.severity);

  Dataset d;
  std::map<std::string, int> group_index;
  if (!schema.group_order.empty()) {
    for (const auto& g : schema.group_order) {
      group_index.emplace(g, static_cast<int>(d.group_labels.size()));
      d.group_labels.push_back(g);
      d.group_doses.emplace_back(std::nullopt);
    }
  }

  long long rownum = 1;  // header = row 1
  bool any = false;
  int smin = std::numeric_limits<int>::max();
  int smax = std::numeric_limits<int>::min();
  while (std::getline(in, line)) {
    ++rownum;
    if (line.empty() || line == "\r") continue;
    auto fields = csv::split_line(line);
    auto field = [&](int c) -> const std::string& {
      static const std::string empty;
      return (c >= 0 && c < static_cast<int>(fields.size())) ? fields[static_cast<std::size_t>(c)] : empty;
    };
    const std::string& gname = field(gcol);
    if (gname.empty()) throw parse_error("row " + std::to_string(rownum) + ": empty group");
    long long sev;
    if (!csv::parse_int(field(scol), sev))
      throw parse_error("row " + std::to_string(rownum) + ": non-integer severity '" + field(scol) + "'");
    auto it = group_index.find(gname);
    if (it == group_index.end()) {
      if (!schema.group_order.empty())
        throw parse_error("row " + std::to_string(rownum) + ": unknown group '" + gname + "'");
      it = group_index.emplace(gname, static_cast<int>(d.group_labels.size())).first;
      d.group_labels.push_back(gname);
      d.group_doses.emplace_back(std::nullopt);
    }
    SubjectRecord rec;
    rec.group = it->second;
    rec.severity = static_cast<int>(sev);
    if (dcol >= 0 && !field(dcol).empty()) {
      double dv;
      if (!csv::parse_double(field(dcol), dv))
        throw parse_error("row " + std::to_string(rownum) + ": non-numeric dose '" + field(dcol) + "'");
      if (dv < 0) throw parse_error("row " + std::to_string(rownum) + ": negative dose");
      rec.dose = dv;
      auto& gd = d.group_doses[static_cast<std::size_t>(rec.group)];
      if (gd && *gd != dv)
        throw parse_error("row " + std::to_string(rownum) + ": group '" + gname + "' has conflicting doses");
      gd = dv;
    }
    smin = std::min(smin, rec.severity);
    smax = std::max(smax, rec.severity);
    d.records.push_back(rec);
    any = true;
  }
  if (!any) throw parse_error("no records");
  d.grade_min = smin;
  d.grade_max = smax;
  if (d.grade_min == d.grade_max) d.grade_max = d.grade_min + 1;  // keep range valid for constant data
  if (d.n_groups() == 1) d.notes.push_back("single group: no comparisons possible");
  d.validate();
  return d;
}

inline Dataset parse_long_csv(const std::string& text, const LongSchema& schema = {}) {
  std::istringstream in(text);
  return parse_long_csv(in, schema);
}

// Table format: header "group,<grade>,<grade>,..."; one row per group with
// counts per grade.
inline SeverityTable parse_table_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("empty input: missing header");
  auto header = csv::split_line(line);
  if (header.size() < 2) throw parse_error("table header needs a group column and at least one grade");
  SeverityTable t;
  for (std::size_t i = 1; i < header.size(); ++i) {
    long long g;
    if (!csv::parse_int(header[i], g))
      throw parse_error("non-integer grade label '" + header[i] + "' in header");
    t.grades.push_back(static_cast<int>(g));
  }
  long long rownum = 1;
  while (std::getline(in, line)) {
    ++rownum;
    if (line.empty() || line == "\r") continue;
    auto fields = csv::split_line(line);
    if (fields.size() != header.size())
      throw parse_error("row " + std::to_string(rownum) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
    if (fields[0].empty()) throw parse_error("row " + std::to_string(rownum) + ": empty group label");
    std::vector<long long> row;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      long long c;
      if (!csv::parse_int(fields[i], c))
        throw parse_error("row " + std::to_string(rownum) + ": non-integer count '" + fields[i] + "'");
      row.push_back(c);
    }
    t.groups.push_back(fields[0]);
    t.counts.push_back(std::move(row));
  }
  t.validate();
  return t;
}

inline SeverityTable parse_table_csv(const std::string& text) {
  std::istringstream in(text);
  return parse_table_csv(in);
}

// One SubjectRecord per count unit, groups and grades in table order.
inline Dataset expand_table(const SeverityTable& t) {
  t.validate();
  Dataset d;
  d.group_labels = t.groups;
  d.group_doses.assign(t.groups.size(), std::nullopt);
  d.grade_min = t.grades.front();
  d.grade_max = t.grades.back();
  if (d.grade_min == d.grade_max) d.grade_max = d.grade_min + 1;
  for (std::size_t g = 0; g < t.groups.size(); ++g)
    for (std::size_t j = 0; j < t.grades.size(); ++j)
      for (long long c = 0; c < t.counts[g][j]; ++c)
        d.records.push_back(SubjectRecord{static_cast<int>(g), std::nullopt, t.grades[j]});
  if (d.n_groups() == 1) d.notes.push_back("single group: no comparisons possible");
  d.validate();
  return d;
}

// Inverse of expand_table over the declared grade range.
inline SeverityTable collapse(const Dataset& d) {
  d.validate();
  SeverityTable t;
  t.groups = d.group_labels;
  for (int g = d.grade_min; g <= d.grade_max; ++g) t.grades.push_back(g);
  t.counts.assign(d.n_groups(), std::vector<long long>(t.grades.size(), 0));
  for (const auto& r : d.records)
    t.counts[static_cast<std::size_t>(r.group)][static_cast<std::size_t>(r.severity - d.grade_min)]++;
  return t;
}

inline std::vector<int> default_cutpoints(const Dataset& d) {
  std::vector<int> cuts;
  for (int c = d.grade_min; c < d.grade_max; ++c) cuts.push_back(c);
  return cuts;
}

// EP_c = [severity > c], one column per cut-point. Constant columns are a
// legitimate small-sample outcome and only warn.
inline BinarizedMatrix binarize(const Dataset& d, std::vector<int> cutpoints = {}) {
  d.validate();
  if (cutpoints.empty()) cutpoints = default_cutpoints(d);
  for (int c : cutpoints)
    if (c < d.grade_min || c >= d.grade_max)
      throw parse_error("cutpoint " + std::to_string(c) + " outside [" + std::to_string(d.grade_min) + "," +
                        std::to_string(d.grade_max - 1) + "]");
  BinarizedMatrix b;
  b.cutpoints = cutpoints;
  const auto n = static_cast<Eigen::Index>(d.n_subjects());
  b.columns.resize(n, static_cast<Eigen::Index>(cutpoints.size()));
  for (std::size_t j = 0; j < cutpoints.size(); ++j) {
    b.labels.push_back("EP" + std::to_string(cutpoints[j]));
    for (Eigen::Index i = 0; i < n; ++i)
      b.columns(i, static_cast<Eigen::Index>(j)) =
          d.records[static_cast<std::size_t>(i)].severity > cutpoints[j] ? 1.0 : 0.0;
    double s = b.columns.col(static_cast<Eigen::Index>(j)).sum();
    if (s == 0.0 || s == static_cast<double>(n))
      b.warnings.push_back("endpoint " + b.labels.back() + " is constant (" + (s == 0.0 ? "all 0" : "all 1") +
                           "); zero variance");
  }
  return b;
}

// Appends the raw severity score as an extra endpoint column ("score"),
// the joint Wilcoxon-type variant.
inline BinarizedMatrix with_raw_score(const Dataset& d, const BinarizedMatrix& b) {
  BinarizedMatrix out;
  out.cutpoints = b.cutpoints;
  out.warnings = b.warnings;
  const auto n = b.columns.rows();
  out.columns.resize(n, b.columns.cols() + 1);
  out.labels.push_back("score");
  for (Eigen::Index i = 0; i < n; ++i)
    out.columns(i, 0) = static_cast<double>(d.records[static_cast<std::size_t>(i)].severity);
  for (Eigen::Index j = 0; j < b.columns.cols(); ++j) {
    out.columns.col(j + 1) = b.columns.col(j);
    out.labels.push_back(b.labels[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline std::string to_long_csv(const Dataset& d) {
  std::ostringstream out;
  bool doses = d.has_doses();
  out << (doses ? "group,dose,severity\n" : "group,severity\n");
  for (const auto& r : d.records) {
    out << d.group_labels[static_cast<std::size_t>(r.group)] << ',';
    if (doses) out << d.group_doses[static_cast<std::size_t>(r.group)].value() << ',';
    out << r.severity << '\n';
  }
  return out.str();
}

inline std::string to_table_csv(const SeverityTable& t) {
  std::ostringstream out;
  out << "group";
  for (int g : t.grades) out << ',' << g;
  out << '\n';
  for (std::size_t i = 0; i < t.groups.size(); ++i) {
    out << t.groups[i];
    for (long long c : t.counts[i]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

}  // namespace sevtest
