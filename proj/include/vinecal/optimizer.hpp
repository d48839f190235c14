#ifndef VINECAL_OPTIMIZER_HPP
#define VINECAL_OPTIMIZER_HPP

// Stochastic gradient ascent on the l-truncated vine ELBO
//   L_l(lambda) = E_q[ sum_{pairs} p_pair(phi) ] - KL(q || prior).
// Each step draws one pair uniformly and estimates
//   C * E_q[ score(phi) * (p_pair(phi) - log(q/p)(phi) / C) ],  C = l(2n - l - 1)/2,
// optionally Rao-Blackwellized per coordinate, with control variates and
// overdispersed importance sampling.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vinecal/model.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/variational.hpp"
#include "vinecal/vine.hpp"

namespace vinecal {

enum class EstimatorVariant { Plain, RB, RBCV, RBCVIS };

inline const char* to_string(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::Plain: return "plain";
    case EstimatorVariant::RB: return "rb";
    case EstimatorVariant::RBCV: return "rbcv";
    case EstimatorVariant::RBCVIS: return "rbcvis";
  }
  return "?";
}

inline bool uses_cv(EstimatorVariant v) { return v == EstimatorVariant::RBCV || v == EstimatorVariant::RBCVIS; }

struct EstimatorConfig {
  EstimatorVariant variant = EstimatorVariant::RBCVIS;
  std::size_t samples = 50;
  std::size_t cv_samples = 10;
  double tau = 1.5;
  /// Consecutive rejected draws tolerated before giving up.
  std::size_t max_rejections = 1000;

  void validate() const {
    if (samples < 1) throw std::invalid_argument("estimator needs at least one sample");
    if (uses_cv(variant) && cv_samples < 2)
      throw std::invalid_argument("control variates need at least two extra draws");
    if (!(tau >= 1.0)) throw std::invalid_argument("dispersion coefficient must be >= 1");
  }
};

/// The truncated-vine objective: model, priors and vine layout.
class VineElbo {
 public:
  VineElbo(const KohModel& model, PriorSpec priors, VineSpec spec)
      : model_(&model), priors_(std::move(priors)), spec_(spec) {
    spec_.validate();
    if (spec_.n != model.n()) throw std::invalid_argument("VineElbo: vine size differs from data size");
    if (priors_.size() != model.layout().size())
      throw std::invalid_argument("VineElbo: one prior per latent coordinate required");
    for (std::size_t j = 0; j < priors_.size(); ++j)
      if (model.layout().domain(j) == Domain::Real && priors_[j].kind == Prior::Kind::Gamma)
        throw std::invalid_argument("VineElbo: gamma prior on real coordinate " + model.layout().name(j));
  }

  const KohModel& model() const { return *model_; }
  const PriorSpec& priors() const { return priors_; }
  const VineSpec& spec() const { return spec_; }
  std::size_t dim() const { return priors_.size(); }
  /// Number of truncated pairs C.
  double scale() const { return static_cast<double>(spec_.pairs()); }

  PairTermParts parts(const PairIndex& pair, const Vector& phi, PairWorkspace& ws) const {
    return pair_term_parts(pair, *model_, phi, spec_.l, ws, true);
  }

 private:
  const KohModel* model_;
  PriorSpec priors_;
  VineSpec spec_;
};

/// Uniform draw over the truncated pairs.
inline PairIndex draw_pair(const VineSpec& spec, Rng& rng) {
  std::uniform_int_distribution<std::size_t> k(0, spec.pairs() - 1);
  return bijection(k(rng), spec);
}

struct GradientEstimate {
  Vector values;
  PairIndex pair;
  EstimatorVariant variant = EstimatorVariant::Plain;
  std::size_t samples = 0;
  std::size_t rejected = 0;
  std::size_t cv_disabled = 0;
};

/// One evaluated Monte Carlo draw.
struct SampleEval {
  Vector phi;
  PairTermParts parts;
  Vector log_qp;  // log q_j(phi_j) - log p_j(phi_j)
  Vector log_w;   // log q_j(phi_j) - log r_j(phi_j); zero without importance sampling
  Vector score;   // unconstrained score, 2 per coordinate
};

/// Evaluate phi for `pair`. Returns false when the draw is unusable (outside the support,
/// non-finite densities, or a failed factorization).
inline bool evaluate_sample(const VineElbo& elbo, const VariationalParams& lambda, const PairIndex& pair,
                            Vector phi, double tau, PairWorkspace& ws, SampleEval& out) {
  const auto p = static_cast<Eigen::Index>(elbo.dim());
  const auto& layout = elbo.model().layout();
  out.log_qp.resize(p);
  out.log_w.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double x = phi(j);
    if (!std::isfinite(x)) return false;
    if (layout.domain(static_cast<std::size_t>(j)) == Domain::Positive && !(x > 0.0)) return false;
    const double lq = lambda.factor_log_q(static_cast<std::size_t>(j), x);
    const double lp = elbo.priors()[static_cast<std::size_t>(j)].logpdf(x);
    out.log_qp(j) = lq - lp;
    out.log_w(j) = tau == 1.0 ? 0.0 : lq - lambda.factor_log_r(static_cast<std::size_t>(j), x, tau);
    if (!std::isfinite(out.log_qp(j)) || !std::isfinite(out.log_w(j))) return false;
  }
  try {
    out.parts = elbo.parts(pair, phi, ws);
  } catch (const NumericalError&) {
    return false;
  }
  if (!std::isfinite(out.parts.total())) return false;
  out.score = score_gradient(phi, lambda);
  if (!out.score.allFinite()) return false;
  out.phi = std::move(phi);
  return true;
}

/// Draw from q (tau = 1) or r(. | lambda, tau) until a usable sample appears.
inline SampleEval draw_sample(const VineElbo& elbo, const VariationalParams& lambda, const PairIndex& pair,
                              double tau, std::size_t max_rejections, Rng& rng, PairWorkspace& ws,
                              std::size_t& rejected) {
  SampleEval out;
  for (std::size_t attempt = 0; attempt <= max_rejections; ++attempt) {
    Vector phi = tau == 1.0 ? sample(lambda, rng) : sample_overdispersed(lambda, tau, rng);
    if (evaluate_sample(elbo, lambda, pair, std::move(phi), tau, ws, out)) return out;
    ++rejected;
  }
  throw NumericalError("gradient estimator: too many rejected draws at " + describe(pair));
}

/// Single-sample term of the plain estimator: score * (C p_pair - log q/p).
inline Vector plain_contribution(const VineElbo& elbo, const SampleEval& s) {
  return s.score * (elbo.scale() * s.parts.total() - s.log_qp.sum());
}

namespace detail {

// Per-coordinate Rao-Blackwellized contribution xi (weighted) and control variate psi.
inline void rb_contribution(const VineElbo& elbo, const SampleEval& s, bool weighted, Vector& xi, Vector& psi) {
  const auto p = static_cast<Eigen::Index>(elbo.dim());
  xi.resize(2 * p);
  psi.resize(2 * p);
  const double c = elbo.scale();
  const auto& parts = s.parts;
  for (Eigen::Index j = 0; j < p; ++j) {
    const std::uint64_t bit = std::uint64_t{1} << j;
    double ptilde = 0.0;
    std::uint64_t blanket = bit;
    if (parts.copula_mask & bit) {
      ptilde += parts.copula;
      blanket |= parts.copula_mask;
    }
    if (parts.first_mask & bit) {
      ptilde += parts.first_marginal;
      blanket |= parts.first_mask;
    }
    if (parts.second_mask & bit) {
      ptilde += parts.second_marginal;
      blanket |= parts.second_mask;
    }
    double w = 1.0;
    if (weighted) {
      double lw = 0.0;
      for (Eigen::Index k = 0; k < p; ++k)
        if (blanket & (std::uint64_t{1} << k)) lw += s.log_w(k);
      w = std::exp(lw);
    }
    const double h = c * ptilde - s.log_qp(j);
    psi.segment<2>(2 * j) = s.score.segment<2>(2 * j) * w;
    xi.segment<2>(2 * j) = psi.segment<2>(2 * j) * h;
  }
}

}  // namespace detail

/// Plain estimator on pre-drawn samples from q.
inline GradientEstimate estimate_gradient_plain(const VineElbo& elbo, std::span<const SampleEval> samples,
                                                const PairIndex& pair) {
  if (samples.empty()) throw std::invalid_argument("estimate_gradient_plain: no samples");
  GradientEstimate est;
  est.values = Vector::Zero(2 * static_cast<Eigen::Index>(elbo.dim()));
  for (const auto& s : samples) est.values += plain_contribution(elbo, s);
  est.values /= static_cast<double>(samples.size());
  est.pair = pair;
  est.variant = EstimatorVariant::Plain;
  est.samples = samples.size();
  return est;
}

/// Rao-Blackwellized estimator with optional control variates and importance sampling.
/// Coordinate j only sees the pieces of the pair term that depend on phi_j. Importance
/// weights cover j and every coordinate those pieces depend on. Control-variate
/// coefficients come from cfg.cv_samples fresh draws, never the estimation draws.
inline GradientEstimate estimate_gradient_rb_cv_is(const VineElbo& elbo, const VariationalParams& lambda,
                                                   const PairIndex& pair, const EstimatorConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.variant == EstimatorVariant::Plain)
    throw std::invalid_argument("estimate_gradient_rb_cv_is: variant must be RB, RBCV or RBCVIS");
  const bool is = cfg.variant == EstimatorVariant::RBCVIS;
  const double tau = is ? cfg.tau : 1.0;
  const auto dim2 = 2 * static_cast<Eigen::Index>(elbo.dim());

  GradientEstimate est;
  est.pair = pair;
  est.variant = cfg.variant;
  est.samples = cfg.samples;
  PairWorkspace ws;
  Vector xi, psi;

  Vector a = Vector::Zero(dim2);
  if (uses_cv(cfg.variant)) {
    const auto m = static_cast<double>(cfg.cv_samples);
    Vector sx = Vector::Zero(dim2), sp = Vector::Zero(dim2), sxp = Vector::Zero(dim2), spp = Vector::Zero(dim2);
    for (std::size_t s = 0; s < cfg.cv_samples; ++s) {
      const SampleEval ev = draw_sample(elbo, lambda, pair, tau, cfg.max_rejections, rng, ws, est.rejected);
      detail::rb_contribution(elbo, ev, is, xi, psi);
      sx += xi;
      sp += psi;
      sxp += xi.cwiseProduct(psi);
      spp += psi.cwiseProduct(psi);
    }
    for (Eigen::Index c = 0; c < dim2; ++c) {
      const double cov = sxp(c) - sx(c) * sp(c) / m;
      const double var = spp(c) - sp(c) * sp(c) / m;
      if (var > 0.0 && std::isfinite(cov / var)) {
        a(c) = cov / var;
      } else {
        ++est.cv_disabled;
      }
    }
  }

  est.values = Vector::Zero(dim2);
  for (std::size_t s = 0; s < cfg.samples; ++s) {
    const SampleEval ev = draw_sample(elbo, lambda, pair, tau, cfg.max_rejections, rng, ws, est.rejected);
    detail::rb_contribution(elbo, ev, is, xi, psi);
    est.values += xi - a.cwiseProduct(psi);
  }
  est.values /= static_cast<double>(cfg.samples);
  return est;
}

/// Dispatch on cfg.variant; draws its own samples.
inline GradientEstimate estimate_gradient(const VineElbo& elbo, const VariationalParams& lambda,
                                          const PairIndex& pair, const EstimatorConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.variant != EstimatorVariant::Plain) return estimate_gradient_rb_cv_is(elbo, lambda, pair, cfg, rng);
  PairWorkspace ws;
  std::size_t rejected = 0;
  std::vector<SampleEval> draws;
  draws.reserve(cfg.samples);
  for (std::size_t s = 0; s < cfg.samples; ++s)
    draws.push_back(draw_sample(elbo, lambda, pair, 1.0, cfg.max_rejections, rng, ws, rejected));
  auto est = estimate_gradient_plain(elbo, draws, pair);
  est.rejected = rejected;
  return est;
}

struct AdaGradState {
  Vector sum_sq;
  double eta = 0.1;
  double eps = 1e-6;
};

/// Accumulates g^2 and returns the per-coordinate rates eta / sqrt(G + eps).
inline Vector adagrad_step(AdaGradState& state, const Vector& g) {
  if (!g.allFinite()) throw std::invalid_argument("adagrad_step: non-finite gradient");
  if (state.sum_sq.size() == 0) state.sum_sq = Vector::Zero(g.size());
  if (state.sum_sq.size() != g.size()) throw std::invalid_argument("adagrad_step: dimension mismatch");
  state.sum_sq += g.cwiseProduct(g);
  return (state.eta / (state.sum_sq.array() + state.eps).sqrt()).matrix();
}

struct RunConfig {
  VineSpec vine;
  EstimatorConfig estimator;
  double eta = 0.1;
  double adagrad_eps = 1e-6;
  std::size_t max_iters = 10000;
  /// Stop once the windowed mean of max |delta lambda| falls below tol.
  double tol = 1e-4;
  std::size_t window = 50;
  std::uint64_t seed = 1;
  std::size_t trace_stride = 100;
  /// Independent pair draws averaged per update. 1 reproduces the single-pair algorithm.
  std::size_t pairs_per_step = 1;

  void validate() const {
    vine.validate();
    estimator.validate();
    if (!(tol > 0.0)) throw std::invalid_argument("RunConfig: tol must be positive");
    if (window < 1) throw std::invalid_argument("RunConfig: window must be >= 1");
    if (!(eta > 0.0)) throw std::invalid_argument("RunConfig: eta must be positive");
    if (pairs_per_step < 1) throw std::invalid_argument("RunConfig: pairs_per_step must be >= 1");
    if (trace_stride < 1) throw std::invalid_argument("RunConfig: trace_stride must be >= 1");
  }
};

struct TraceRow {
  std::size_t iteration = 0;
  double wall_seconds = 0.0;
  Vector means;
  Vector sds;
  double grad_norm = 0.0;
};

struct CalibrationResult {
  VariationalParams lambda;
  std::vector<TraceRow> trace;
  std::size_t iterations = 0;
  bool converged = false;
  double wall_seconds = 0.0;
  std::size_t rejected = 0;
};

/// Called every trace_stride iterations with (iteration, current lambda).
using CalibrationObserver = std::function<void(std::size_t, const VariationalParams&)>;

inline CalibrationResult run_calibration(const VineElbo& elbo, const RunConfig& config,
                                         const VariationalParams& init, const CalibrationObserver& observer = {}) {
  config.validate();
  if (config.vine.n != elbo.spec().n || config.vine.l != elbo.spec().l || config.vine.kind != elbo.spec().kind)
    throw std::invalid_argument("run_calibration: config vine differs from the objective's");
  if (init.size() != elbo.dim()) throw std::invalid_argument("run_calibration: initial lambda has wrong size");

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };

  CalibrationResult result;
  result.lambda = init;
  Rng rng = make_rng(config.seed);
  AdaGradState ada{Vector::Zero(init.unconstrained().size()), config.eta, config.adagrad_eps};
  std::deque<double> changes;
  double change_sum = 0.0;

  auto record = [&](std::size_t it, double gnorm) {
    result.trace.push_back({it, elapsed(), result.lambda.means(), result.lambda.sds(), gnorm});
    if (observer) observer(it, result.lambda);
  };
  record(0, 0.0);

  for (std::size_t it = 1; it <= config.max_iters; ++it) {
    Vector g = Vector::Zero(init.unconstrained().size());
    for (std::size_t b = 0; b < config.pairs_per_step; ++b) {
      const PairIndex pair = draw_pair(config.vine, rng);
      const auto est = estimate_gradient(elbo, result.lambda, pair, config.estimator, rng);
      result.rejected += est.rejected;
      g += est.values;
    }
    g /= static_cast<double>(config.pairs_per_step);
    if (!g.allFinite()) {
      std::ostringstream msg;
      msg << "run_calibration: non-finite gradient at iteration " << it << "; lambda = ["
          << result.lambda.unconstrained().transpose() << "]";
      throw NumericalError(msg.str(), result.lambda.unconstrained());
    }
    const Vector rate = adagrad_step(ada, g);
    const Vector step = rate.cwiseProduct(g);
    result.lambda.unconstrained() += step;
    if (!result.lambda.unconstrained().allFinite()) {
      std::ostringstream msg;
      msg << "run_calibration: non-finite lambda at iteration " << it << "; last gradient = ["
          << g.transpose() << "]";
      throw NumericalError(msg.str(), result.lambda.unconstrained());
    }
    result.iterations = it;

    const double change = step.cwiseAbs().maxCoeff();
    changes.push_back(change);
    change_sum += change;
    if (changes.size() > config.window) {
      change_sum -= changes.front();
      changes.pop_front();
    }
    const bool stop = changes.size() == config.window && change_sum / static_cast<double>(config.window) < config.tol;
    if (it % config.trace_stride == 0 || stop || it == config.max_iters) record(it, g.norm());
    if (stop) {
      result.converged = true;
      break;
    }
  }
  result.wall_seconds = elapsed();
  return result;
}

struct TruncationSelection {
  std::size_t level = 1;
  /// deltas[k] compares level k+2 against level k+1.
  std::vector<double> deltas;
  std::vector<CalibrationResult> fits;
  bool reached_limit = false;
};

/// Largest sd-scaled change of the variational means between consecutive levels.
inline double truncation_distance(const VariationalParams& next, const VariationalParams& current) {
  double d = 0.0;
  for (std::size_t j = 0; j < current.size(); ++j)
    d = std::max(d, std::abs(next.mean(j) - current.mean(j)) / current.sd(j));
  return d;
}

/// Fits l = 1, 2, ... with a common seed and returns the first l whose successor moves the
/// variational means by less than tol (in units of the level-l sds); l_max if none does.
inline TruncationSelection select_truncation_level(const KohModel& model, const PriorSpec& priors,
                                                   const RunConfig& config, const VariationalParams& init,
                                                   std::size_t l_max, double tol) {
  const std::size_t n = model.n();
  if (l_max < 1 || l_max > n - 1) throw std::domain_error("select_truncation_level: need 1 <= l_max <= n-1");
  TruncationSelection sel;
  if (l_max == 1 || std::isinf(tol)) {
    sel.level = 1;
    return sel;
  }
  auto fit = [&](std::size_t l) {
    RunConfig c = config;
    c.vine = VineSpec{config.vine.kind, n, l};
    const VineElbo elbo(model, priors, c.vine);
    return run_calibration(elbo, c, init);
  };
  sel.fits.push_back(fit(1));
  for (std::size_t l = 1; l < l_max; ++l) {
    sel.fits.push_back(fit(l + 1));
    const double delta = truncation_distance(sel.fits[l].lambda, sel.fits[l - 1].lambda);
    sel.deltas.push_back(delta);
    if (delta < tol) {
      sel.level = l;
      return sel;
    }
  }
  sel.level = l_max;
  sel.reached_limit = true;
  return sel;
}

}  // namespace vinecal

#endif  // VINECAL_OPTIMIZER_HPP
