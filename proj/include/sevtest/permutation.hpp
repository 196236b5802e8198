#pragma once

// Conditional-inference permutation engine: max-type multiple contrast test
// over contrast rows x endpoint columns with single-step adjusted p-values.
// The null distribution of the maximum standardized component is obtained by
// exact enumeration of distinct group-label assignments or by Monte Carlo
// label shuffles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sevtest/contrasts.hpp"
#include "sevtest/core.hpp"
#include "sevtest/data.hpp"

namespace sevtest {

enum class Alternative { greater, less, two_sided };

inline std::string to_string(Alternative a) {
  switch (a) {
    case Alternative::greater: return "greater";
    case Alternative::less: return "less";
    case Alternative::two_sided: return "two-sided";
  }
  return "?";
}

inline Alternative alternative_from_string(const std::string& s) {
  if (s == "greater") return Alternative::greater;
  if (s == "less") return Alternative::less;
  if (s == "two-sided" || s == "two.sided" || s == "twosided") return Alternative::two_sided;
  throw parse_error("unknown alternative: " + s);
}

// Linear statistic T = sum_i g_i h_i^T with its conditional permutation
// moments. Components are vectorized with the contrast index fastest,
// i.e. vec index c = endpoint * p + contrast (column-major of the p x q T).
struct LinearStatistic {
  Eigen::MatrixXd T;       // p x q
  Eigen::MatrixXd mu;      // p x q
  Eigen::MatrixXd sigma;   // (p q) x (p q)
  Eigen::MatrixXd z;       // p x q standardized (0 where degenerate)
  std::vector<bool> degenerate;  // per vec component
};

// Conditional mean and covariance of vec(T) given the data, over uniformly
// random permutations of the h rows:
//   mu    = vec(G E(h)^T)
//   sigma = n/(n-1) V(h) (x) S  -  1/(n-1) V(h) (x) G G^T
// with G = sum g_i, S = sum g_i g_i^T, E and V the empirical moments of h.
inline void conditional_moments(const Eigen::MatrixXd& g, const Eigen::MatrixXd& h,
                                Eigen::MatrixXd& mu, Eigen::MatrixXd& sigma) {
  const auto n = g.rows();
  if (n < 2 || h.rows() != n) throw method_error("conditional moments need n >= 2 with matching rows");
  const auto p = g.cols(), q = h.cols();
  Eigen::RowVectorXd Eh = h.colwise().mean();
  Eigen::MatrixXd hc = h.rowwise() - Eh;
  Eigen::MatrixXd Vh = (hc.transpose() * hc) / static_cast<double>(n);
  Eigen::VectorXd G = g.colwise().sum().transpose();
  Eigen::MatrixXd S = g.transpose() * g;
  mu = G * Eh;
  const double nn = static_cast<double>(n);
  Eigen::MatrixXd W = (nn / (nn - 1.0)) * S - (1.0 / (nn - 1.0)) * (G * G.transpose());
  sigma.resize(p * q, p * q);
  for (Eigen::Index a = 0; a < q; ++a)
    for (Eigen::Index b = 0; b < q; ++b)
      sigma.block(a * p, b * p, p, p) = Vh(a, b) * W;
}

// Directed standardization; degenerate components (conditional variance at
// most eps_var relative to the largest) get z = 0 and a flag.
inline LinearStatistic standardize(const Eigen::MatrixXd& T, const Eigen::MatrixXd& mu,
                                   const Eigen::MatrixXd& sigma, Alternative alternative,
                                   double eps_var = 1e-12) {
  LinearStatistic ls;
  ls.T = T;
  ls.mu = mu;
  ls.sigma = sigma;
  const auto p = T.rows(), q = T.cols();
  const double vmax = sigma.diagonal().maxCoeff();
  ls.degenerate.assign(static_cast<std::size_t>(p * q), false);
  ls.z = Eigen::MatrixXd::Zero(p, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const Eigen::Index c = a * p + j;
      const double v = sigma(c, c);
      if (vmax <= 0.0 || v <= eps_var * vmax) {
        ls.degenerate[static_cast<std::size_t>(c)] = true;
        continue;
      }
      double zz = (T(j, a) - mu(j, a)) / std::sqrt(v);
      switch (alternative) {
        case Alternative::greater: break;
        case Alternative::less: zz = -zz; break;
        case Alternative::two_sided: zz = std::abs(zz); break;
      }
      ls.z(j, a) = zz;
    }
  }
  return ls;
}

// Number of distinct assignments of group labels, n!/(prod n_i!), or
// nullopt once it exceeds `cap`.
inline std::optional<std::uint64_t> count_permutations(const std::vector<int>& group_sizes,
                                                       std::uint64_t cap = std::uint64_t(1) << 62) {
  unsigned __int128 res = 1;
  unsigned long long seen = 0;
  for (int s : group_sizes) {
    if (s < 1) throw method_error("group sizes must be >= 1");
    for (int i = 1; i <= s; ++i) {
      ++seen;
      res = res * seen / static_cast<unsigned>(i);  // partial binomials stay integral in this order
      if (res > cap) return std::nullopt;
    }
  }
  return static_cast<std::uint64_t>(res);
}

enum class PermMode { exact, montecarlo, automatic };

inline PermMode perm_mode_from_string(const std::string& s) {
  if (s == "on" || s == "exact") return PermMode::exact;
  if (s == "off" || s == "montecarlo") return PermMode::montecarlo;
  if (s == "auto") return PermMode::automatic;
  throw parse_error("unknown exactness mode: " + s);
}

struct PermutationOptions {
  Alternative alternative = Alternative::greater;
  std::uint64_t replicates = 10000;
  std::uint64_t seed = 0;
  PermMode mode = PermMode::automatic;
  std::uint64_t exact_threshold = 2000000;
  unsigned threads = 1;
  double eps_var = 1e-12;
};

struct PermutationResult {
  std::vector<std::string> contrast_labels;
  std::vector<std::string> endpoint_labels;
  Eigen::MatrixXd estimate;    // contrast applied to group means of each endpoint
  Eigen::MatrixXd observed_z;  // directed
  Eigen::MatrixXd p_raw;       // marginal permutation p per component
  Eigen::MatrixXd p_adjusted;  // single-step: P(max over components >= z_c)
  std::vector<bool> degenerate;  // vec index = endpoint * p + contrast
  std::uint64_t replicates = 0;  // enumeration count in exact mode
  bool exact = false;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  bool is_degenerate(Eigen::Index contrast, Eigen::Index endpoint) const {
    return degenerate[static_cast<std::size_t>(endpoint * estimate.rows() + contrast)];
  }
};

namespace detail {

// Canonicalized problem: subjects sorted by (group, endpoint row) so that
// resampling streams and results are invariant to input subject order.
struct PermProblem {
  Eigen::MatrixXd K;       // p x k
  Eigen::MatrixXd h;       // n x q, canonical order
  std::vector<int> labels;  // canonical: group 0 block, group 1 block, ...
  std::vector<int> sizes;
  Eigen::MatrixXd mu;      // p x q
  Eigen::MatrixXd sigma;   // pq x pq
  Eigen::VectorXd inv_sd;  // per vec component, 0 where degenerate
  std::vector<bool> degenerate;

  Eigen::Index p() const { return K.rows(); }
  Eigen::Index q() const { return h.cols(); }

  // T for an assignment of labels to canonical h rows.
  Eigen::MatrixXd statistic(const std::vector<int>& assign) const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(K.cols(), h.cols());
    for (std::size_t i = 0; i < assign.size(); ++i)
      M.row(assign[i]) += h.row(static_cast<Eigen::Index>(i));
    return K * M;
  }

  // Directed z for an assignment; degenerate components forced to -inf so
  // they never contribute to the max.
  void directed_z(const std::vector<int>& assign, Alternative alt, Eigen::VectorXd& out) const {
    Eigen::MatrixXd T = statistic(assign);
    const auto pp = p(), qq = q();
    for (Eigen::Index a = 0; a < qq; ++a) {
      for (Eigen::Index j = 0; j < pp; ++j) {
        const Eigen::Index c = a * pp + j;
        if (degenerate[static_cast<std::size_t>(c)]) {
          out(c) = -std::numeric_limits<double>::infinity();
          continue;
        }
        double zz = (T(j, a) - mu(j, a)) * inv_sd(c);
        if (alt == Alternative::less)
          zz = -zz;
        else if (alt == Alternative::two_sided)
          zz = std::abs(zz);
        out(c) = zz;
      }
    }
  }
};

inline PermProblem make_problem(const Dataset& d, const ContrastMatrix& K, const Eigen::MatrixXd& Y,
                                double eps_var) {
  if (d.n_groups() < 2) throw method_error("need at least 2 groups");
  if (Y.rows() != static_cast<Eigen::Index>(d.n_subjects()))
    throw method_error("endpoint matrix rows do not match dataset");
  if (K.coef.cols() != static_cast<Eigen::Index>(d.n_groups()))
    throw method_error("contrast matrix columns do not match group count");

  const auto n = Y.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    int ga = d.records[static_cast<std::size_t>(a)].group;
    int gb = d.records[static_cast<std::size_t>(b)].group;
    if (ga != gb) return ga < gb;
    for (Eigen::Index c = 0; c < Y.cols(); ++c)
      if (Y(a, c) != Y(b, c)) return Y(a, c) < Y(b, c);
    return false;
  });

  PermProblem pr;
  pr.K = K.coef;
  pr.h.resize(n, Y.cols());
  pr.labels.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    pr.h.row(static_cast<Eigen::Index>(i)) = Y.row(order[i]);
    pr.labels[i] = d.records[static_cast<std::size_t>(order[i])].group;
  }
  pr.sizes = d.group_sizes();

  // g_i is the contrast column of subject i's group
  Eigen::MatrixXd g(n, pr.K.rows());
  for (Eigen::Index i = 0; i < n; ++i) g.row(i) = pr.K.col(pr.labels[static_cast<std::size_t>(i)]).transpose();
  conditional_moments(g, pr.h, pr.mu, pr.sigma);

  const auto m = pr.sigma.rows();
  const double vmax = pr.sigma.diagonal().maxCoeff();
  pr.inv_sd.resize(m);
  pr.degenerate.assign(static_cast<std::size_t>(m), false);
  for (Eigen::Index c = 0; c < m; ++c) {
    const double v = pr.sigma(c, c);
    if (vmax <= 0.0 || v <= eps_var * vmax) {
      pr.degenerate[static_cast<std::size_t>(c)] = true;
      pr.inv_sd(c) = 0.0;
    } else {
      pr.inv_sd(c) = 1.0 / std::sqrt(v);
    }
  }
  return pr;
}

inline double tail_tolerance(double z) { return 1e-10 * (1.0 + std::abs(z)); }

}  // namespace detail

// Full exact null distribution of the max statistic: one entry per distinct
// group-label assignment, equally probable.
struct ExactDistribution {
  std::vector<double> max_values;  // sorted ascending
  double tail_probability(double t) const {
    auto it = std::lower_bound(max_values.begin(), max_values.end(), t - detail::tail_tolerance(t));
    return static_cast<double>(max_values.end() - it) / static_cast<double>(max_values.size());
  }
};

inline ExactDistribution exact_distribution(const Dataset& d, const ContrastMatrix& K,
                                            const Eigen::MatrixXd& Y, Alternative alternative,
                                            std::uint64_t threshold = 2000000, double eps_var = 1e-12) {
  auto pr = detail::make_problem(d, K, Y, eps_var);
  if (std::all_of(pr.degenerate.begin(), pr.degenerate.end(), [](bool b) { return b; }))
    throw method_error("no testable endpoint: all components degenerate");
  auto count = count_permutations(pr.sizes, threshold);
  if (!count) throw method_error("exact enumeration exceeds threshold of " + std::to_string(threshold));
  ExactDistribution dist;
  dist.max_values.reserve(*count);
  std::vector<int> assign = pr.labels;
  std::sort(assign.begin(), assign.end());
  Eigen::VectorXd zbuf(pr.sigma.rows());
  do {
    pr.directed_z(assign, alternative, zbuf);
    dist.max_values.push_back(zbuf.maxCoeff());
  } while (std::next_permutation(assign.begin(), assign.end()));
  std::sort(dist.max_values.begin(), dist.max_values.end());
  return dist;
}

// The max(max) multiple contrast test. Y columns are the (possibly
// score-augmented) endpoints; labels_for_endpoints names them in the result.
inline PermutationResult maxmax_test(const Dataset& d, const ContrastMatrix& K, const Eigen::MatrixXd& Y,
                                     const std::vector<std::string>& endpoint_labels,
                                     const PermutationOptions& opt) {
  auto pr = detail::make_problem(d, K, Y, opt.eps_var);
  const auto p = pr.p(), q = pr.q();
  const auto ncomp = p * q;

  PermutationResult res;
  res.contrast_labels = K.labels;
  res.endpoint_labels = endpoint_labels;
  res.degenerate = pr.degenerate;
  res.seed = opt.seed;
  if (std::all_of(pr.degenerate.begin(), pr.degenerate.end(), [](bool b) { return b; }))
    throw method_error("no testable endpoint: all components degenerate");
  for (Eigen::Index c = 0; c < ncomp; ++c)
    if (pr.degenerate[static_cast<std::size_t>(c)])
      res.warnings.push_back("component (" + K.labels[static_cast<std::size_t>(c % p)] + ", " +
                             endpoint_labels[static_cast<std::size_t>(c / p)] +
                             ") has zero conditional variance; reported p = 1");

  // Observed directed z and group-mean contrasts.
  Eigen::VectorXd zobs(ncomp);
  pr.directed_z(pr.labels, opt.alternative, zobs);
  res.observed_z.resize(p, q);
  for (Eigen::Index a = 0; a < q; ++a)
    for (Eigen::Index j = 0; j < p; ++j)
      res.observed_z(j, a) =
          pr.degenerate[static_cast<std::size_t>(a * p + j)] ? 0.0 : zobs(a * p + j);

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(pr.K.cols(), q);
  for (std::size_t i = 0; i < pr.labels.size(); ++i) M.row(pr.labels[i]) += pr.h.row(static_cast<Eigen::Index>(i));
  for (int g = 0; g < static_cast<int>(pr.sizes.size()); ++g) M.row(g) /= static_cast<double>(pr.sizes[g]);
  res.estimate = pr.K * M;

  auto total = count_permutations(pr.sizes, opt.exact_threshold);
  const bool exact = opt.mode == PermMode::exact ||
                     (opt.mode == PermMode::automatic && total.has_value());
  if (opt.mode == PermMode::exact && !total)
    throw method_error("exact mode requested but enumeration exceeds threshold");

  std::vector<std::uint64_t> max_count(static_cast<std::size_t>(ncomp), 0);
  std::vector<std::uint64_t> raw_count(static_cast<std::size_t>(ncomp), 0);
  std::uint64_t nrep = 0;

  auto tally = [&](const Eigen::VectorXd& zstar, std::vector<std::uint64_t>& mc,
                   std::vector<std::uint64_t>& rc) {
    const double m = zstar.maxCoeff();
    for (Eigen::Index c = 0; c < ncomp; ++c) {
      if (pr.degenerate[static_cast<std::size_t>(c)]) continue;
      const double tol = detail::tail_tolerance(zobs(c));
      if (m >= zobs(c) - tol) mc[static_cast<std::size_t>(c)]++;
      if (zstar(c) >= zobs(c) - tol) rc[static_cast<std::size_t>(c)]++;
    }
  };

  if (exact) {
    std::vector<int> assign = pr.labels;
    std::sort(assign.begin(), assign.end());
    Eigen::VectorXd zbuf(ncomp);
    do {
      pr.directed_z(assign, opt.alternative, zbuf);
      tally(zbuf, max_count, raw_count);
      ++nrep;
    } while (std::next_permutation(assign.begin(), assign.end()));
    res.exact = true;
  } else {
    const std::uint64_t B = opt.replicates;
    if (B < 1) throw method_error("Monte Carlo mode needs replicates >= 1");
    const unsigned nw = std::max(1u, opt.threads);
    std::vector<std::vector<std::uint64_t>> mc(nw, std::vector<std::uint64_t>(static_cast<std::size_t>(ncomp), 0));
    std::vector<std::vector<std::uint64_t>> rc(nw, mc[0]);
    const std::uint64_t chunk = (B + nw - 1) / nw;
    parallel_for(nw, nw, [&](std::size_t w) {
      std::vector<int> assign(pr.labels.size());
      Eigen::VectorXd zbuf(ncomp);
      const std::uint64_t lo = w * chunk, hi = std::min<std::uint64_t>(B, lo + chunk);
      for (std::uint64_t r = lo; r < hi; ++r) {
        assign = pr.labels;
        auto rng = rng_stream(opt.seed, r);
        fisher_yates(assign, rng);
        pr.directed_z(assign, opt.alternative, zbuf);
        tally(zbuf, mc[w], rc[w]);
      }
    });
    for (unsigned w = 0; w < nw; ++w)
      for (Eigen::Index c = 0; c < ncomp; ++c) {
        max_count[static_cast<std::size_t>(c)] += mc[w][static_cast<std::size_t>(c)];
        raw_count[static_cast<std::size_t>(c)] += rc[w][static_cast<std::size_t>(c)];
      }
    nrep = B;
    res.exact = false;
  }

  res.replicates = nrep;
  res.p_adjusted.resize(p, q);
  res.p_raw.resize(p, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const Eigen::Index c = a * p + j;
      if (pr.degenerate[static_cast<std::size_t>(c)]) {
        res.p_adjusted(j, a) = 1.0;
        res.p_raw(j, a) = 1.0;
      } else if (res.exact) {
        res.p_adjusted(j, a) = static_cast<double>(max_count[static_cast<std::size_t>(c)]) / static_cast<double>(nrep);
        res.p_raw(j, a) = static_cast<double>(raw_count[static_cast<std::size_t>(c)]) / static_cast<double>(nrep);
      } else {
        res.p_adjusted(j, a) =
            (1.0 + static_cast<double>(max_count[static_cast<std::size_t>(c)])) / (static_cast<double>(nrep) + 1.0);
        res.p_raw(j, a) =
            (1.0 + static_cast<double>(raw_count[static_cast<std::size_t>(c)])) / (static_cast<double>(nrep) + 1.0);
      }
    }
  }
  return res;
}

inline PermutationResult maxmax_test(const Dataset& d, const ContrastMatrix& K, const BinarizedMatrix& Y,
                                     const PermutationOptions& opt) {
  auto res = maxmax_test(d, K, Y.columns, Y.labels, opt);
  res.warnings.insert(res.warnings.begin(), Y.warnings.begin(), Y.warnings.end());
  return res;
}

}  // namespace sevtest
