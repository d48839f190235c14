#ifndef VINECAL_VINE_HPP
#define VINECAL_VINE_HPP

// Gaussian pair-copula machinery for D- and C-vine decompositions of log p(d | phi).
//
// Indices are 0-based throughout. For a pair in vine tree j (1-based):
//   D-vine: (i, i+j) conditioned on {i+1, ..., i+j-1}
//   C-vine: (j-1, j-1+i) conditioned on {0, ..., j-2}
// Pairs are enumerated tree-major: all tree-1 pairs by increasing first index,
// then tree 2, and so on up to the truncation level l.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vinecal/model.hpp"
#include "vinecal/normal.hpp"

namespace vinecal {

enum class VineKind { DVine, CVine };

inline const char* to_string(VineKind k) { return k == VineKind::DVine ? "d" : "c"; }

/// Number of pairs in the first l trees of an n-dimensional vine: l(2n - l - 1)/2.
inline std::size_t pair_count(std::size_t n, std::size_t l) {
  if (n < 2 || l < 1 || l > n - 1)
    throw std::domain_error("pair_count: truncation level must satisfy 1 <= l <= n-1");
  return l * (2 * n - l - 1) / 2;
}

struct VineSpec {
  VineKind kind = VineKind::DVine;
  std::size_t n = 2;
  std::size_t l = 1;

  void validate() const {
    if (n < 2 || l < 1 || l > n - 1)
      throw std::domain_error("VineSpec: truncation level must satisfy 1 <= l <= n-1");
  }
  std::size_t pairs() const { return pair_count(n, l); }
};

struct PairIndex {
  std::size_t first = 0;
  std::size_t second = 1;
  std::size_t tree = 1;
  VineKind kind = VineKind::DVine;
  std::vector<std::size_t> conditioning;

  friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

inline std::string describe(const PairIndex& p) {
  return std::string(to_string(p.kind)) + "-vine pair (" + std::to_string(p.first) + ", " +
         std::to_string(p.second) + ") in tree " + std::to_string(p.tree);
}

/// k-th pair (0-based) of the truncated vine under tree-major ordering.
inline PairIndex bijection(std::size_t k, const VineSpec& spec) {
  spec.validate();
  if (k >= spec.pairs()) throw std::out_of_range("bijection: pair index out of range");
  std::size_t tree = 1;
  while (k >= spec.n - tree) {
    k -= spec.n - tree;
    ++tree;
  }
  PairIndex p;
  p.tree = tree;
  p.kind = spec.kind;
  if (spec.kind == VineKind::DVine) {
    p.first = k;
    p.second = k + tree;
    for (std::size_t v = p.first + 1; v < p.second; ++v) p.conditioning.push_back(v);
  } else {
    p.first = tree - 1;
    p.second = tree + k;
    for (std::size_t v = 0; v < p.first; ++v) p.conditioning.push_back(v);
  }
  return p;
}

namespace detail {
// Number of truncated D-vine pairs containing margin m (1-based).
inline std::size_t dvine_margin_weight(std::size_t m, std::size_t n, std::size_t l) {
  const auto ll = static_cast<long long>(l);
  const auto nn = static_cast<long long>(n);
  const auto mm = static_cast<long long>(m);
  long long w = 2 * ll;
  if (mm <= ll) w -= ll + 1 - mm;
  if (mm > nn - ll) w -= ll - nn + mm;
  return static_cast<std::size_t>(w);
}
}  // namespace detail

/// D-vine weights (a, b) for pair (first, first + gap): the reciprocals multiply the
/// two marginal log densities.
inline std::pair<std::size_t, std::size_t> marginal_weights_d(std::size_t first, std::size_t gap,
                                                              std::size_t n, std::size_t l) {
  pair_count(n, l);
  if (gap < 1 || gap > l || first + gap >= n)
    throw std::domain_error("marginal_weights_d: not a pair of the truncated D-vine");
  return {detail::dvine_margin_weight(first + 1, n, l),
          detail::dvine_margin_weight(first + gap + 1, n, l)};
}

/// C-vine weights for pair (first, first + gap), first = tree - 1.
inline std::pair<std::size_t, std::size_t> marginal_weights_c(std::size_t first, std::size_t gap,
                                                              std::size_t n, std::size_t l) {
  pair_count(n, l);
  if (gap < 1 || first + 1 > l || first + gap >= n)
    throw std::domain_error("marginal_weights_c: not a pair of the truncated C-vine");
  const std::size_t second_1based = first + gap + 1;
  const std::size_t w2 = (second_1based <= l ? n - 1 - l : 0) + l;
  return {n - 1, w2};
}

inline std::pair<std::size_t, std::size_t> marginal_weights(const PairIndex& p, std::size_t n,
                                                            std::size_t l) {
  return p.kind == VineKind::DVine ? marginal_weights_d(p.first, p.second - p.first, n, l)
                                   : marginal_weights_c(p.first, p.second - p.first, n, l);
}

/// Log Gaussian pair-copula density at normal scores (w_i, w_j).
inline double gauss_copula_logdensity_scores(double wi, double wj, double rho) {
  const double one_minus = 1.0 - rho * rho;
  return -0.5 * std::log(one_minus) -
         (rho * rho * (wi * wi + wj * wj) - 2.0 * rho * wi * wj) / (2.0 * one_minus);
}

inline void check_copula_args(double ui, double uj, double rho, const char* who) {
  if (!(ui > 0.0 && ui < 1.0 && uj > 0.0 && uj < 1.0))
    throw std::domain_error(std::string(who) + ": uniforms must lie in (0, 1)");
  if (!(std::abs(rho) < 1.0)) throw std::domain_error(std::string(who) + ": |rho| must be < 1");
}

/// Log density of the bivariate Gaussian copula with correlation rho.
inline double gauss_pair_copula_logdensity(double ui, double uj, double rho) {
  check_copula_args(ui, uj, rho, "gauss_pair_copula_logdensity");
  return gauss_copula_logdensity_scores(uniform_to_score(ui), uniform_to_score(uj), rho);
}

/// Conditional CDF of U_i given U_j = u_j under the Gaussian pair copula.
inline double h_function(double ui, double uj, double rho) {
  check_copula_args(ui, uj, rho, "h_function");
  return norm_cdf((uniform_to_score(ui) - rho * uniform_to_score(uj)) / std::sqrt(1.0 - rho * rho));
}

namespace detail {
inline std::vector<std::size_t> concat(std::span<const std::size_t> head, std::size_t a) {
  std::vector<std::size_t> out(head.begin(), head.end());
  out.push_back(a);
  return out;
}

inline Matrix submatrix(const Matrix& k, std::span<const std::size_t> idx) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  Matrix s(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      s(a, b) = k(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]),
                  static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
  return s;
}
}  // namespace detail

/// Partial correlation of (i, j) given D from the precision of the (|D|+2) submatrix.
inline double partial_correlation(std::size_t i, std::size_t j, std::span<const std::size_t> given,
                                  const Matrix& k) {
  std::vector<std::size_t> idx{i, j};
  idx.insert(idx.end(), given.begin(), given.end());
  const Matrix sub = detail::submatrix(k, idx);
  Eigen::LLT<Matrix> llt(sub);
  if (llt.info() != Eigen::Success)
    throw NumericalError("partial_correlation: singular conditioning submatrix");
  const Matrix prec = llt.solve(Matrix::Identity(sub.rows(), sub.cols()));
  return -prec(0, 1) / std::sqrt(prec(0, 0) * prec(1, 1));
}

/// Standardized conditional residual (d_t - mu_{t|D}) / s_{t|D} by direct conditioning.
inline double gaussian_conditional_score(std::size_t target, std::span<const std::size_t> given,
                                         const Vector& d, const JointMoments& mom) {
  const auto t = static_cast<Eigen::Index>(target);
  if (given.empty()) return (d(t) - mom.mean(t)) / std::sqrt(mom.cov(t, t));
  const Matrix kdd = detail::submatrix(mom.cov, given);
  const auto m = static_cast<Eigen::Index>(given.size());
  Vector kdt(m), rd(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto g = static_cast<Eigen::Index>(given[static_cast<std::size_t>(a)]);
    kdt(a) = mom.cov(g, t);
    rd(a) = d(g) - mom.mean(g);
  }
  Eigen::LLT<Matrix> llt(kdd);
  if (llt.info() != Eigen::Success)
    throw NumericalError("gaussian_conditional_cdf: singular conditioning submatrix");
  const Vector alpha = llt.solve(kdt);
  const double mu = mom.mean(t) + alpha.dot(rd);
  const double var = mom.cov(t, t) - alpha.dot(kdt);
  if (!(var > 0.0)) throw NumericalError("gaussian_conditional_cdf: degenerate conditional variance");
  return (d(t) - mu) / std::sqrt(var);
}

/// F(d_target | d_given) under N(mean, cov).
inline double gaussian_conditional_cdf(std::size_t target, std::span<const std::size_t> given,
                                       const Vector& d, const JointMoments& mom) {
  return norm_cdf(gaussian_conditional_score(target, given, d, mom));
}

/// The three additive pieces of a pair term. Weighted marginals already carry 1/a, 1/b.
struct PairTermParts {
  double copula = 0.0;
  double first_marginal = 0.0;
  double second_marginal = 0.0;
  double rho = 0.0;
  std::uint64_t copula_mask = 0;
  std::uint64_t first_mask = 0;
  std::uint64_t second_mask = 0;

  double total() const { return copula + first_marginal + second_marginal; }
};

/// Reusable buffers for pair evaluation.
struct PairWorkspace {
  std::vector<std::size_t> idx;
  Vector mean;
  Matrix cov;
  Vector resid;
};

/// Pair term with its dependency masks. `l` is the truncation level of the decomposition.
/// The copula is evaluated at the normal scores of the conditional CDFs, obtained from one
/// Cholesky factor of the (D, first, second) block.
inline PairTermParts pair_term_parts(const PairIndex& pair, const KohModel& model, const Vector& phi,
                                     std::size_t l, PairWorkspace& ws, bool with_masks = true) {
  const std::size_t n = model.n();
  const auto [wa, wb] = marginal_weights(pair, n, l);
  ws.idx.assign(pair.conditioning.begin(), pair.conditioning.end());
  ws.idx.push_back(pair.first);
  ws.idx.push_back(pair.second);
  model.sub_moments(ws.idx, phi, ws.mean, ws.cov);

  const auto m = static_cast<Eigen::Index>(pair.conditioning.size());
  const Vector& d = model.data().responses();
  ws.resid.resize(m + 2);
  for (Eigen::Index a = 0; a < m + 2; ++a)
    ws.resid(a) = d(static_cast<Eigen::Index>(ws.idx[static_cast<std::size_t>(a)])) - ws.mean(a);

  PairTermParts parts;
  const double sa = std::sqrt(ws.cov(m, m));
  const double sb = std::sqrt(ws.cov(m + 1, m + 1));
  parts.first_marginal = norm_logpdf(ws.resid(m) / sa) - std::log(sa);
  parts.second_marginal = norm_logpdf(ws.resid(m + 1) / sb) - std::log(sb);
  parts.first_marginal /= static_cast<double>(wa);
  parts.second_marginal /= static_cast<double>(wb);

  try {
    const auto llt = cholesky_with_jitter(ws.cov, model.run_jitter(phi), phi);
    const auto& L = llt.matrixLLT();
    const Vector z = llt.matrixL().solve(ws.resid);
    const double lba = L(m + 1, m);
    const double lbb = L(m + 1, m + 1);
    const double sb_given = std::hypot(lba, lbb);
    const double wi = z(m);
    const double wj = (lba * z(m) + lbb * z(m + 1)) / sb_given;
    parts.rho = lba / sb_given;
    parts.copula = gauss_copula_logdensity_scores(wi, wj, parts.rho);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " at " + describe(pair), phi);
  }

  if (with_masks) {
    const std::size_t a = pair.first;
    const std::size_t b = pair.second;
    parts.first_mask = model.mean_mask(a) | model.entry_mask(a, a);
    parts.second_mask = model.mean_mask(b) | model.entry_mask(b, b);
    std::uint64_t cm = 0;
    for (std::size_t r = 0; r < ws.idx.size(); ++r) {
      cm |= model.mean_mask(ws.idx[r]);
      for (std::size_t s = 0; s <= r; ++s) cm |= model.entry_mask(ws.idx[r], ws.idx[s]);
    }
    parts.copula_mask = cm;
  }
  return parts;
}

inline double pair_term(const PairIndex& pair, const KohModel& model, const Vector& phi, std::size_t l) {
  PairWorkspace ws;
  return pair_term_parts(pair, model, phi, l, ws, false).total();
}

/// Untruncated vine reconstruction of log p(d | phi); cost grows like n^5, hence the bound.
inline double full_vine_loglik(const KohModel& model, const Vector& phi, VineKind kind,
                               std::size_t max_n = 64) {
  const std::size_t n = model.n();
  if (n > max_n) throw std::domain_error("full_vine_loglik: n exceeds the configured bound");
  model.check_domain(phi);
  const VineSpec spec{kind, n, n - 1};
  PairWorkspace ws;
  double total = 0.0;
  for (std::size_t k = 0; k < spec.pairs(); ++k)
    total += pair_term_parts(bijection(k, spec), model, phi, spec.l, ws, false).total();
  return total;
}

struct CardinalityDistribution {
  std::vector<double> pmf;  // P(|D| = i), i = 0..l-1
  double expectation = 0.0;
};

/// Distribution of the conditioning-set size of a uniformly drawn truncated pair.
inline CardinalityDistribution conditioning_cardinality(std::size_t n, std::size_t l) {
  const double total = static_cast<double>(pair_count(n, l));
  CardinalityDistribution out;
  out.pmf.resize(l);
  for (std::size_t i = 0; i < l; ++i) out.pmf[i] = static_cast<double>(n - (i + 1)) / total;
  const double nn = static_cast<double>(n);
  const double ll = static_cast<double>(l);
  out.expectation = (ll - 1.0) * (3.0 * nn - 2.0 * ll - 2.0) / (3.0 * (2.0 * nn - ll - 1.0));
  return out;
}

}  // namespace vinecal

#endif  // VINECAL_VINE_HPP
