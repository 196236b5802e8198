#pragma once

// Rectangle probabilities for the multivariate normal and multivariate t
// distributions by randomized quasi-Monte Carlo (separation-of-variables
// with a shifted Richtmyer lattice), plus the equicoordinate quantile used
// for simultaneous confidence intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sevtest/core.hpp"
#include "sevtest/distributions.hpp"

namespace sevtest {

struct MvProbability {
  double value = 0.0;
  double error = 0.0;  // ~3 sigma estimate over randomizations
  bool converged = true;
  std::uint64_t points = 0;
};

namespace detail {

inline const double kSqrtPrimes[] = {
    1.4142135623730951, 1.7320508075688772, 2.23606797749979,  2.6457513110645907, 3.3166247903554,
    3.605551275463989,  4.123105625617661,  4.358898943540674, 4.795831523312719,  5.385164807134504,
    5.5677643628300215, 6.082762530298219,  6.4031242374328485, 6.557438524302,    6.855654600401044,
    7.280109889280518,  7.681145747868608,  7.810249675906654, 8.18535277187245,   8.426149773176359,
    8.54400374531753,   8.888194417315589,  9.1104335791443,   9.433981132056603,  9.848857801796104};

// Cholesky with a small escalating ridge so that singular correlation
// matrices (perfectly correlated hypotheses) remain integrable.
inline Eigen::MatrixXd chol_with_ridge(const Eigen::MatrixXd& R) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() < -1e-8 * std::max(lmax, 1.0))
    throw method_error("correlation matrix is not positive semidefinite");
  for (double ridge : {0.0, 1e-12, 1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd M = R;
    if (ridge > 0.0) {
      M += ridge * Eigen::MatrixXd::Identity(R.rows(), R.cols());
      M /= 1.0 + ridge;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw method_error("correlation matrix Cholesky failed");
}

inline double clamp01(double u) { return std::min(1.0 - 1e-15, std::max(1e-15, u)); }

// Tabulated chi mixing factor c(u) = sqrt(qchisq(u, nu)/nu) with linear
// interpolation on a uniform grid; the outer grid cells fall back to the
// exact quantile where the curvature is worst.
class ChiScaleTable {
 public:
  ChiScaleTable(double nu, int cells = 4096) : nu_(nu), cells_(cells), values_(static_cast<std::size_t>(cells) + 1) {
    for (int i = 1; i < cells_; ++i)
      values_[static_cast<std::size_t>(i)] =
          std::sqrt(chisq_quantile(static_cast<double>(i) / cells_, nu) / nu);
    values_[0] = values_[1];
    values_[static_cast<std::size_t>(cells_)] = values_[static_cast<std::size_t>(cells_ - 1)];
  }

  double operator()(double u) const {
    double x = u * cells_;
    int i = static_cast<int>(x);
    if (i < 16 || i >= cells_ - 16)
      return std::sqrt(chisq_quantile(clamp01(u), nu_) / nu_);
    double frac = x - i;
    return values_[static_cast<std::size_t>(i)] * (1.0 - frac) + values_[static_cast<std::size_t>(i) + 1] * frac;
  }

 private:
  double nu_;
  int cells_;
  std::vector<double> values_;
};

// One separation-of-variables evaluation of the rectangle integrand for a
// point w in [0,1)^(m-1), limits already scaled for the t mixture.
inline double sov_integrand(const Eigen::MatrixXd& L, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                            const double* w, std::vector<double>& y) {
  const auto m = L.rows();
  double d = norm_cdf(lo(0) / L(0, 0));
  double e = norm_cdf(hi(0) / L(0, 0));
  double f = e - d;
  for (Eigen::Index i = 1; i < m; ++i) {
    if (f <= 0.0) return 0.0;
    y[static_cast<std::size_t>(i - 1)] = norm_quantile(clamp01(d + w[i - 1] * (e - d)));
    double mu = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) mu += L(i, j) * y[static_cast<std::size_t>(j)];
    d = norm_cdf((lo(i) - mu) / L(i, i));
    e = norm_cdf((hi(i) - mu) / L(i, i));
    f *= (e - d);
  }
  return std::max(0.0, f);
}

}  // namespace detail

// P(lower <= X <= upper) for X ~ MVN(0, R) when df is absent, or
// multivariate t with `df` degrees of freedom otherwise. Limits may be
// +/-infinity. The error field is a ~3-sigma estimate across the lattice
// randomizations; converged=false flags an unmet tolerance at max_points.
inline MvProbability mv_rectangle_prob(const Eigen::MatrixXd& R, const Eigen::VectorXd& lower,
                                       const Eigen::VectorXd& upper, std::optional<double> df,
                                       double tol = 1e-4, std::uint64_t seed = 20150820,
                                       std::uint64_t max_points = std::uint64_t(1) << 23) {
  const auto m = R.rows();
  if (lower.size() != m || upper.size() != m) throw method_error("rectangle limits do not match dimension");
  for (Eigen::Index i = 0; i < m; ++i)
    if (!(lower(i) < upper(i))) throw method_error("rectangle limits must satisfy lower < upper");
  if (df && *df <= 0) throw method_error("df must be positive");

  // dimension 1: closed form
  if (m == 1) {
    MvProbability out;
    auto cdf = [&](double x) {
      if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
      return df ? t_cdf(x, *df) : norm_cdf(x);
    };
    out.value = std::max(0.0, cdf(upper(0)) - cdf(lower(0)));
    out.error = 1e-15;
    return out;
  }

  Eigen::MatrixXd L = detail::chol_with_ridge(R);
  const unsigned nshift = 12;
  const unsigned udim = static_cast<unsigned>(m - 1) + (df ? 1u : 0u);
  if (udim > std::size(detail::kSqrtPrimes)) throw method_error("dimension too large for lattice table");

  std::vector<std::vector<double>> shifts(nshift, std::vector<double>(udim));
  for (unsigned s = 0; s < nshift; ++s) {
    auto rng = rng_stream(seed, s);
    for (unsigned j = 0; j < udim; ++j) shifts[s][j] = uniform01(rng);
  }

  MvProbability out;
  std::uint64_t n = 2048;
  std::uint64_t total = 0;
  std::vector<double> means(nshift, 0.0);
  std::vector<std::uint64_t> counts(nshift, 0);
  std::optional<detail::ChiScaleTable> chi;
  if (df) chi.emplace(*df);

  while (true) {
    for (unsigned s = 0; s < nshift; ++s) {
      double acc = 0.0;
      std::vector<double> w(udim), y(static_cast<std::size_t>(m));
      Eigen::VectorXd lo(m), hi(m);
      for (std::uint64_t k = counts[s] + 1; k <= n; ++k) {
        for (unsigned j = 0; j < udim; ++j) {
          double v = std::fmod(static_cast<double>(k) * detail::kSqrtPrimes[j] + shifts[s][j], 1.0);
          w[j] = std::abs(2.0 * v - 1.0);  // baker transform
        }
        if (chi) {
          double c = (*chi)(w[udim - 1]);
          for (Eigen::Index i = 0; i < m; ++i) {
            lo(i) = std::isinf(lower(i)) ? lower(i) : lower(i) * c;
            hi(i) = std::isinf(upper(i)) ? upper(i) : upper(i) * c;
          }
        } else {
          lo = lower;
          hi = upper;
        }
        acc += detail::sov_integrand(L, lo, hi, w.data(), y);
      }
      means[s] = (means[s] * static_cast<double>(counts[s]) + acc) / static_cast<double>(n);
      counts[s] = n;
    }
    total = n * nshift;
    double mean = 0.0;
    for (double v : means) mean += v;
    mean /= nshift;
    double var = 0.0;
    for (double v : means) var += (v - mean) * (v - mean);
    var /= (nshift - 1.0) * nshift;
    out.value = std::min(1.0, std::max(0.0, mean));
    out.error = 3.0 * std::sqrt(var);
    out.points = total;
    if (out.error <= tol) return out;
    if (total >= max_points) {
      out.converged = false;
      return out;
    }
    n *= 2;
  }
}

// One-sided upper orthant helper: P(all X_j <= q).
inline MvProbability mv_max_cdf(const Eigen::MatrixXd& R, double q, std::optional<double> df,
                                double tol = 1e-4, std::uint64_t seed = 20150820) {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(R.rows(), -std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(R.rows(), q);
  return mv_rectangle_prob(R, lo, hi, df, tol, seed);
}

// P(max |X_j| <= q).
inline MvProbability mv_absmax_cdf(const Eigen::MatrixXd& R, double q, std::optional<double> df,
                                   double tol = 1e-4, std::uint64_t seed = 20150820) {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(R.rows(), -q);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(R.rows(), q);
  return mv_rectangle_prob(R, lo, hi, df, tol, seed);
}

// Equicoordinate quantile q with P(max X <= q) = level (one-sided) or
// P(max |X| <= q) = level (two-sided), to about quantile_tol. The same
// lattice randomization is reused across bisection steps so the bracketing
// function is monotone.
inline double equicoordinate_quantile(const Eigen::MatrixXd& R, std::optional<double> df, double level,
                                      bool two_sided, std::uint64_t seed = 20150820,
                                      double quantile_tol = 1e-3, double prob_tol = 2e-5) {
  if (level <= 0.0 || level >= 1.0) throw method_error("level must be in (0,1)");
  const double m = static_cast<double>(R.rows());
  auto qmarg = [&](double p) { return df ? t_quantile(p, *df) : norm_quantile(p); };
  double lo, hi;
  if (two_sided) {
    lo = qmarg((1.0 + level) / 2.0);               // perfect correlation
    hi = qmarg(1.0 - (1.0 - level) / (2.0 * m));   // Bonferroni
  } else {
    lo = qmarg(level);
    hi = qmarg(1.0 - (1.0 - level) / m);
  }
  if (R.rows() == 1) return lo;
  auto prob = [&](double q) {
    return (two_sided ? mv_absmax_cdf(R, q, df, prob_tol, seed) : mv_max_cdf(R, q, df, prob_tol, seed)).value;
  };
  // widen brackets defensively against integration noise
  lo -= 1e-3;
  hi += 1e-3;
  for (int it = 0; it < 60 && hi - lo > quantile_tol; ++it) {
    double mid = 0.5 * (lo + hi);
    if (prob(mid) < level)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace sevtest
