#pragma once

// Contrast matrices for dose-as-factor tests (Dunnett, Williams, custom)
// and dose scalings for dose-as-covariate trend tests.

#include <cmath>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sevtest/core.hpp"
#include "sevtest/data.hpp"

namespace sevtest {

struct ContrastMatrix {
  std::vector<std::string> labels;  // one per row
  Eigen::MatrixXd coef;             // rows x groups
  std::vector<int> group_sizes;

  void validate() const {
    if (coef.rows() == 0 || coef.cols() < 2) throw parse_error("contrast matrix needs >= 1 row and >= 2 groups");
    if (static_cast<Eigen::Index>(labels.size()) != coef.rows())
      throw parse_error("contrast labels do not match rows");
    for (Eigen::Index r = 0; r < coef.rows(); ++r) {
      if (std::abs(coef.row(r).sum()) > 1e-12)
        throw parse_error("contrast row '" + labels[static_cast<std::size_t>(r)] + "' does not sum to zero");
      if (coef.row(r).cwiseAbs().maxCoeff() == 0.0)
        throw parse_error("contrast row '" + labels[static_cast<std::size_t>(r)] + "' is all zero");
    }
  }
};

// Each dose group vs the control: row i is -1 at the control, +1 at group i+1.
inline ContrastMatrix dunnett_contrasts(const std::vector<int>& group_sizes,
                                        const std::vector<std::string>& group_labels = {}) {
  const std::size_t k = group_sizes.size();
  if (k < 2) throw parse_error("Dunnett contrasts need at least 2 groups");
  ContrastMatrix m;
  m.group_sizes = group_sizes;
  m.coef = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k));
  auto name = [&](std::size_t g) {
    return g < group_labels.size() ? group_labels[g] : std::to_string(g + 1);
  };
  for (std::size_t i = 1; i < k; ++i) {
    m.coef(static_cast<Eigen::Index>(i - 1), 0) = -1.0;
    m.coef(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(i)) = 1.0;
    m.labels.push_back(name(i) + " - " + name(0));
  }
  m.validate();
  return m;
}

// Williams-type: row m compares the sample-size-weighted mean of the m
// highest dose groups against the control. Row 1 equals the Dunnett
// top-dose row; the last row is the pooled dose-groups mean vs control.
inline ContrastMatrix williams_contrasts(const std::vector<int>& group_sizes) {
  const std::size_t k = group_sizes.size();
  if (k < 2) throw parse_error("Williams contrasts need at least 2 groups");
  ContrastMatrix m;
  m.group_sizes = group_sizes;
  m.coef = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k));
  for (std::size_t step = 1; step <= k - 1; ++step) {
    double total = 0.0;
    for (std::size_t g = k - step; g < k; ++g) total += group_sizes[g];
    Eigen::Index row = static_cast<Eigen::Index>(step - 1);
    m.coef(row, 0) = -1.0;
    for (std::size_t g = k - step; g < k; ++g)
      m.coef(row, static_cast<Eigen::Index>(g)) = group_sizes[g] / total;
    m.labels.push_back("C " + std::to_string(step));
  }
  m.validate();
  return m;
}

// Custom contrasts from CSV: one row per contrast, one numeric column per
// group; an optional leading non-numeric field names the row.
inline ContrastMatrix custom_contrasts(std::istream& in, std::size_t n_groups,
                                       const std::vector<int>& group_sizes) {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::string line;
  long long rownum = 0;
  while (std::getline(in, line)) {
    ++rownum;
    if (line.empty() || line == "\r") continue;
    auto fields = csv::split_line(line);
    std::vector<double> row;
    std::string label;
    std::size_t start = 0;
    double v;
    if (!fields.empty() && !csv::parse_double(fields[0], v)) {
      label = fields[0];
      start = 1;
    }
    for (std::size_t i = start; i < fields.size(); ++i) {
      if (!csv::parse_double(fields[i], v))
        throw parse_error("contrast row " + std::to_string(rownum) + ": non-numeric coefficient '" + fields[i] + "'");
      row.push_back(v);
    }
    if (row.size() != n_groups)
      throw parse_error("contrast row " + std::to_string(rownum) + ": expected " + std::to_string(n_groups) +
                        " coefficients, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
    labels.push_back(label.empty() ? "c" + std::to_string(rows.size()) : label);
  }
  if (rows.empty()) throw parse_error("no contrast rows");
  ContrastMatrix m;
  m.group_sizes = group_sizes;
  m.labels = std::move(labels);
  m.coef.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_groups));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < n_groups; ++c)
      m.coef(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  m.validate();
  return m;
}

inline ContrastMatrix custom_contrasts(const std::string& text, std::size_t n_groups,
                                       const std::vector<int>& group_sizes) {
  std::istringstream in(text);
  return custom_contrasts(in, n_groups, group_sizes);
}

enum class ScalingKind { arithmetic, ordinal, arithmetic_log };

inline std::string to_string(ScalingKind k) {
  switch (k) {
    case ScalingKind::arithmetic: return "ari";
    case ScalingKind::ordinal: return "ord";
    case ScalingKind::arithmetic_log: return "arilog";
  }
  return "?";
}

inline ScalingKind scaling_from_string(const std::string& s) {
  if (s == "ari" || s == "arithmetic") return ScalingKind::arithmetic;
  if (s == "ord" || s == "ordinal") return ScalingKind::ordinal;
  if (s == "arilog" || s == "arithmetic-log" || s == "log") return ScalingKind::arithmetic_log;
  throw parse_error("unknown dose scaling: " + s);
}

struct DoseScaling {
  ScalingKind kind;
  std::vector<double> values;  // per group, strictly increasing in dose order
};

// Dose scores under the three Tukey-type scalings. doses must be sorted
// ascending; the first may be zero. For arithmetic-log the zero dose is
// replaced by a one-step log extrapolation log(d0) := 2*log(d1) - log(d2)
// from the two smallest positive doses, unless `log_zero_substitute`
// supplies an explicit dose value to use instead.
inline std::vector<DoseScaling> dose_scalings(const std::vector<double>& doses,
                                              const std::vector<ScalingKind>& kinds,
                                              std::optional<double> log_zero_substitute = std::nullopt) {
  if (doses.size() < 2) throw parse_error("dose scalings need at least 2 groups");
  for (std::size_t i = 0; i < doses.size(); ++i) {
    if (doses[i] < 0) throw parse_error("negative dose");
    if (i > 0 && doses[i] <= doses[i - 1]) throw parse_error("doses must be strictly increasing");
  }
  std::vector<DoseScaling> out;
  for (ScalingKind k : kinds) {
    DoseScaling s;
    s.kind = k;
    switch (k) {
      case ScalingKind::arithmetic:
        s.values = doses;
        break;
      case ScalingKind::ordinal:
        for (std::size_t i = 0; i < doses.size(); ++i) s.values.push_back(static_cast<double>(i));
        break;
      case ScalingKind::arithmetic_log: {
        std::vector<double> pos;
        for (double d : doses)
          if (d > 0) pos.push_back(d);
        for (double d : doses) {
          if (d > 0) {
            s.values.push_back(std::log(d));
          } else if (log_zero_substitute) {
            if (*log_zero_substitute <= 0) throw parse_error("log-zero substitute dose must be positive");
            s.values.push_back(std::log(*log_zero_substitute));
          } else {
            if (pos.size() < 2) throw parse_error("arithmetic-log scaling needs >= 2 positive doses");
            s.values.push_back(2.0 * std::log(pos[0]) - std::log(pos[1]));
          }
        }
        break;
      }
    }
    for (std::size_t i = 1; i < s.values.size(); ++i)
      if (s.values[i] <= s.values[i - 1])
        throw parse_error("dose scaling '" + to_string(k) + "' is not strictly increasing");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sevtest
