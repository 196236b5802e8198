#pragma once

// Max-t simultaneous inference over linear functions of fitted parameters:
// single-step adjusted p-values and equicoordinate simultaneous confidence
// intervals from multivariate normal / t tail probabilities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sevtest/core.hpp"
#include "sevtest/distributions.hpp"
#include "sevtest/mvnorm.hpp"
#include "sevtest/permutation.hpp"  // Alternative

namespace sevtest {

struct SimHypothesis {
  std::string label;
  double estimate = 0.0;
  double se = 0.0;
  double statistic = 0.0;  // signed t or z
  double p_raw = 1.0;      // marginal tail probability
  double p_adjusted = 1.0;
  double ci_lower = -std::numeric_limits<double>::infinity();
  double ci_upper = std::numeric_limits<double>::infinity();
  bool degenerate = false;
};

struct SimTestResult {
  std::vector<SimHypothesis> hypotheses;
  Eigen::MatrixXd correlation;  // non-degenerate rows only
  std::optional<double> df;     // absent = asymptotic normal
  Alternative alternative = Alternative::greater;
  double level = 0.95;
  double quantile = std::numeric_limits<double>::quiet_NaN();  // equicoordinate
  double integration_error = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

struct MaxtOptions {
  Alternative alternative = Alternative::greater;
  double level = 0.95;
  double tol = 1e-4;
  std::uint64_t seed = 20150820;
  bool confidence_intervals = true;
};

// est, V: estimates of the linear functions and their covariance.
// Zero-variance rows are flagged, excluded from the max, and reported with
// p = 1 and a degenerate point interval.
inline SimTestResult max_t_adjust(const Eigen::VectorXd& est, const Eigen::MatrixXd& V,
                                  const std::vector<std::string>& labels, std::optional<double> df,
                                  const MaxtOptions& opt = {}) {
  const auto m = est.size();
  if (V.rows() != m || V.cols() != m) throw method_error("covariance does not match estimates");
  if (static_cast<Eigen::Index>(labels.size()) != m) throw method_error("labels do not match estimates");

  SimTestResult res;
  res.df = df;
  res.alternative = opt.alternative;
  res.level = opt.level;
  res.seed = opt.seed;

  const double vmax = V.diagonal().maxCoeff();
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (vmax <= 0.0 || V(j, j) <= 1e-12 * vmax) {
      res.warnings.push_back("hypothesis '" + labels[static_cast<std::size_t>(j)] +
                             "' has zero variance; excluded from the max");
    } else {
      active.push_back(j);
    }
  }
  if (active.empty()) throw method_error("all hypotheses degenerate");

  const auto ma = static_cast<Eigen::Index>(active.size());
  Eigen::VectorXd sd(ma), stat(ma);
  res.correlation.resize(ma, ma);
  for (Eigen::Index i = 0; i < ma; ++i) {
    sd(i) = std::sqrt(V(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(i)]));
    stat(i) = est(active[static_cast<std::size_t>(i)]) / sd(i);
  }
  for (Eigen::Index i = 0; i < ma; ++i)
    for (Eigen::Index j = 0; j < ma; ++j)
      res.correlation(i, j) =
          V(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]) / (sd(i) * sd(j));

  const bool two_sided = opt.alternative == Alternative::two_sided;
  double q = std::numeric_limits<double>::quiet_NaN();
  if (opt.confidence_intervals)
    q = equicoordinate_quantile(res.correlation, df, opt.level, two_sided, opt.seed);
  res.quantile = q;

  res.hypotheses.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    auto& h = res.hypotheses[static_cast<std::size_t>(j)];
    h.label = labels[static_cast<std::size_t>(j)];
    h.estimate = est(j);
  }
  // degenerate rows: p = 1, point interval
  for (Eigen::Index j = 0; j < m; ++j) {
    if (std::find(active.begin(), active.end(), j) != active.end()) continue;
    auto& h = res.hypotheses[static_cast<std::size_t>(j)];
    h.degenerate = true;
    h.ci_lower = h.ci_upper = h.estimate;
  }

  for (Eigen::Index i = 0; i < ma; ++i) {
    auto& h = res.hypotheses[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])];
    h.se = sd(i);
    h.statistic = stat(i);
    double directed = stat(i);
    if (opt.alternative == Alternative::less) directed = -directed;
    if (two_sided) directed = std::abs(directed);
    h.p_raw = marginal_p(directed, df, two_sided);
    MvProbability pr = two_sided ? mv_absmax_cdf(res.correlation, directed, df, opt.tol, opt.seed)
                                 : mv_max_cdf(res.correlation, directed, df, opt.tol, opt.seed);
    h.p_adjusted = std::min(1.0, std::max(h.p_raw, 1.0 - pr.value));
    res.integration_error = std::max(res.integration_error, pr.error);
    if (!pr.converged) res.warnings.push_back("integration tolerance not met for '" + h.label + "'");
    if (opt.confidence_intervals) {
      switch (opt.alternative) {
        case Alternative::greater:
          h.ci_lower = h.estimate - q * h.se;
          break;
        case Alternative::less:
          h.ci_upper = h.estimate + q * h.se;
          break;
        case Alternative::two_sided:
          h.ci_lower = h.estimate - q * h.se;
          h.ci_upper = h.estimate + q * h.se;
          break;
      }
    }
  }
  return res;
}

}  // namespace sevtest
