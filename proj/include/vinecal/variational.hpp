#ifndef VINECAL_VARIATIONAL_HPP
#define VINECAL_VARIATIONAL_HPP

// Mean-field variational families. Real coordinates get a Gaussian factor, positive
// coordinates a Gamma factor; both are parametrized by (mean, sd). Every positive
// parameter is stored through the inverse softplus so the optimizer works unconstrained:
//   Gaussian: (mu, softplus^-1(sd)),  Gamma: (softplus^-1(mu), softplus^-1(sd)).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vinecal/model.hpp"
#include "vinecal/normal.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/special.hpp"

namespace vinecal {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class FactorKind { Gaussian, Gamma };

inline FactorKind factor_kind_for(Domain d) {
  return d == Domain::Real ? FactorKind::Gaussian : FactorKind::Gamma;
}

inline const char* to_string(FactorKind k) { return k == FactorKind::Gaussian ? "gaussian" : "gamma"; }

struct FactorFamily {
  FactorKind kind = FactorKind::Gaussian;
  double mean = 0.0;
  double sd = 1.0;
};

inline double to_unconstrained(double value) { return softplus_inverse(value); }
inline double from_unconstrained(double value) { return softplus(value); }

struct GammaShapeRate {
  double shape = 1.0;
  double rate = 1.0;
};

/// Moment matching: shape = mean^2 / sd^2, rate = mean / sd^2.
inline GammaShapeRate gamma_shape_rate(double mean, double sd) {
  if (!(mean > 0.0 && sd > 0.0)) throw std::domain_error("gamma factor needs positive mean and sd");
  return {mean * mean / (sd * sd), mean / (sd * sd)};
}

/// Overdispersed member r of the same family with dispersion tau >= 1.
inline FactorFamily overdispersed(const FactorFamily& f, double tau) {
  if (!(tau >= 1.0)) throw std::domain_error("dispersion coefficient must be >= 1");
  if (f.kind == FactorKind::Gaussian) return {f.kind, f.mean, f.sd * std::sqrt(tau)};
  const double mu = f.mean;
  const double s = f.sd;
  return {f.kind, mu + (tau - 1.0) * s * s / mu,
          s * std::sqrt(tau * mu * mu + tau * s * s * (tau - 1.0)) / mu};
}

inline double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double factor_logpdf(const FactorFamily& f, double x) {
  if (f.kind == FactorKind::Gaussian) return norm_logpdf(x, f.mean, f.sd);
  const auto g = gamma_shape_rate(f.mean, f.sd);
  return gamma_logpdf(x, g.shape, g.rate);
}

inline double factor_sample(const FactorFamily& f, Rng& rng) {
  if (f.kind == FactorKind::Gaussian) return f.mean + f.sd * standard_normal(rng);
  const auto g = gamma_shape_rate(f.mean, f.sd);
  if (!(g.shape > 0.0)) throw std::domain_error("gamma factor shape must be positive");
  return std::gamma_distribution<double>(g.shape, 1.0 / g.rate)(rng);
}

/// Gradient of log q(x) w.r.t. the unconstrained pair (u0, u1) of one factor.
inline Eigen::Vector2d factor_score(FactorKind kind, double u0, double u1, double x) {
  const double sd = softplus(u1);
  const double dsd = sigmoid(u1);
  if (kind == FactorKind::Gaussian) {
    const double r = x - u0;
    return {r / (sd * sd), (r * r / (sd * sd * sd) - 1.0 / sd) * dsd};
  }
  const double mu = softplus(u0);
  const double dmu = sigmoid(u0);
  const double v = sd * sd;
  const double shape = mu * mu / v;
  const double rate = mu / v;
  const double d_shape = std::log(rate) - digamma(shape) + std::log(x);
  const double d_rate = shape / rate - x;
  const double d_mu = d_shape * 2.0 * mu / v + d_rate / v;
  const double d_sd = d_shape * (-2.0 * mu * mu / (v * sd)) + d_rate * (-2.0 * mu / (v * sd));
  return {d_mu * dmu, d_sd * dsd};
}

/// lambda: one factor per latent coordinate, stored as 2 unconstrained numbers each.
class VariationalParams {
 public:
  VariationalParams() = default;
  VariationalParams(std::vector<FactorKind> kinds, Vector unconstrained)
      : kinds_(std::move(kinds)), u_(std::move(unconstrained)) {
    if (static_cast<std::size_t>(u_.size()) != 2 * kinds_.size())
      throw std::invalid_argument("VariationalParams: need two unconstrained values per factor");
  }

  static VariationalParams from_moments(const std::vector<FactorKind>& kinds, const Vector& means,
                                        const Vector& sds) {
    const auto p = kinds.size();
    if (static_cast<std::size_t>(means.size()) != p || static_cast<std::size_t>(sds.size()) != p)
      throw std::invalid_argument("VariationalParams: size mismatch");
    Vector u(2 * static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (kinds[j] == FactorKind::Gamma && !(means(jj) > 0.0))
        throw std::domain_error("VariationalParams: gamma factor needs a positive mean");
      u(2 * jj) = kinds[j] == FactorKind::Gaussian ? means(jj) : to_unconstrained(means(jj));
      u(2 * jj + 1) = to_unconstrained(sds(jj));
    }
    return {kinds, u};
  }

  static VariationalParams for_layout(const LatentLayout& layout, const Vector& means, const Vector& sds) {
    std::vector<FactorKind> kinds;
    for (auto d : layout.domains()) kinds.push_back(factor_kind_for(d));
    return from_moments(kinds, means, sds);
  }

  std::size_t size() const { return kinds_.size(); }
  FactorKind kind(std::size_t j) const { return kinds_[j]; }
  const std::vector<FactorKind>& kinds() const { return kinds_; }

  Vector& unconstrained() { return u_; }
  const Vector& unconstrained() const { return u_; }
  double u0(std::size_t j) const { return u_(2 * static_cast<Eigen::Index>(j)); }
  double u1(std::size_t j) const { return u_(2 * static_cast<Eigen::Index>(j) + 1); }

  double mean(std::size_t j) const { return kinds_[j] == FactorKind::Gaussian ? u0(j) : softplus(u0(j)); }
  double sd(std::size_t j) const { return softplus(u1(j)); }
  FactorFamily factor(std::size_t j) const { return {kinds_[j], mean(j), sd(j)}; }

  Vector means() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j) v(static_cast<Eigen::Index>(j)) = mean(j);
    return v;
  }
  Vector sds() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j) v(static_cast<Eigen::Index>(j)) = sd(j);
    return v;
  }

  double factor_log_q(std::size_t j, double x) const { return factor_logpdf(factor(j), x); }
  double factor_log_r(std::size_t j, double x, double tau) const {
    return factor_logpdf(overdispersed(factor(j), tau), x);
  }
  Eigen::Vector2d factor_score(std::size_t j, double x) const {
    return vinecal::factor_score(kinds_[j], u0(j), u1(j), x);
  }

 private:
  std::vector<FactorKind> kinds_;
  Vector u_;
};

inline Vector sample(const VariationalParams& lambda, Rng& rng) {
  Vector phi(static_cast<Eigen::Index>(lambda.size()));
  for (std::size_t j = 0; j < lambda.size(); ++j)
    phi(static_cast<Eigen::Index>(j)) = factor_sample(lambda.factor(j), rng);
  return phi;
}

inline Vector sample_overdispersed(const VariationalParams& lambda, double tau, Rng& rng) {
  Vector phi(static_cast<Eigen::Index>(lambda.size()));
  for (std::size_t j = 0; j < lambda.size(); ++j)
    phi(static_cast<Eigen::Index>(j)) = factor_sample(overdispersed(lambda.factor(j), tau), rng);
  return phi;
}

inline double log_q(const Vector& phi, const VariationalParams& lambda) {
  double s = 0.0;
  for (std::size_t j = 0; j < lambda.size(); ++j) s += lambda.factor_log_q(j, phi(static_cast<Eigen::Index>(j)));
  return s;
}

inline double log_r(const Vector& phi, const VariationalParams& lambda, double tau) {
  double s = 0.0;
  for (std::size_t j = 0; j < lambda.size(); ++j)
    s += lambda.factor_log_r(j, phi(static_cast<Eigen::Index>(j)), tau);
  return s;
}

/// q(phi) / r(phi); zero outside the support of q.
inline double importance_weight(const Vector& phi, const VariationalParams& lambda, double tau) {
  const double lq = log_q(phi, lambda);
  if (lq == kNegInf) return 0.0;
  return std::exp(lq - log_r(phi, lambda, tau));
}

/// grad_lambda log q(phi | lambda) in unconstrained coordinates, (mu, sd) per factor.
inline Vector score_gradient(const Vector& phi, const VariationalParams& lambda) {
  Vector g(2 * static_cast<Eigen::Index>(lambda.size()));
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    const auto s = lambda.factor_score(j, phi(static_cast<Eigen::Index>(j)));
    g.segment<2>(2 * static_cast<Eigen::Index>(j)) = s;
  }
  return g;
}

/// Independent per-coordinate prior.
struct Prior {
  enum class Kind { Normal, Gamma };
  Kind kind = Kind::Normal;
  double a = 0.0;  // normal mean, or gamma shape
  double b = 1.0;  // normal sd, or gamma rate

  static Prior normal(double mean, double sd) {
    if (!(sd > 0.0)) throw std::domain_error("normal prior needs a positive sd");
    return {Kind::Normal, mean, sd};
  }
  static Prior gamma(double shape, double rate) {
    if (!(shape > 0.0 && rate > 0.0)) throw std::domain_error("gamma prior needs positive shape and rate");
    return {Kind::Gamma, shape, rate};
  }

  double logpdf(double x) const {
    return kind == Kind::Normal ? norm_logpdf(x, a, b) : gamma_logpdf(x, a, b);
  }
  double mean() const { return kind == Kind::Normal ? a : a / b; }
  double sd() const { return kind == Kind::Normal ? b : std::sqrt(a) / b; }
  double sample(Rng& rng) const {
    return kind == Kind::Normal ? a + b * standard_normal(rng)
                                : std::gamma_distribution<double>(a, 1.0 / b)(rng);
  }
};

using PriorSpec = std::vector<Prior>;

inline double log_prior(const Vector& phi, const PriorSpec& priors) {
  if (static_cast<std::size_t>(phi.size()) != priors.size())
    throw std::invalid_argument("log_prior: dimension mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < priors.size(); ++j) s += priors[j].logpdf(phi(static_cast<Eigen::Index>(j)));
  return s;
}

/// lambda whose factors match each prior's mean and sd.
inline VariationalParams init_from_prior_moments(const LatentLayout& layout, const PriorSpec& priors) {
  Vector means(static_cast<Eigen::Index>(priors.size())), sds(static_cast<Eigen::Index>(priors.size()));
  for (std::size_t j = 0; j < priors.size(); ++j) {
    means(static_cast<Eigen::Index>(j)) = priors[j].mean();
    sds(static_cast<Eigen::Index>(j)) = priors[j].sd();
  }
  return VariationalParams::for_layout(layout, means, sds);
}

/// Means drawn from the priors (redrawn until in the factor's domain), sds matching the priors.
inline VariationalParams init_from_prior_sample(const LatentLayout& layout, const PriorSpec& priors, Rng& rng) {
  Vector means(static_cast<Eigen::Index>(priors.size())), sds(static_cast<Eigen::Index>(priors.size()));
  for (std::size_t j = 0; j < priors.size(); ++j) {
    double m = priors[j].sample(rng);
    while (layout.domain(j) == Domain::Positive && !(m > 0.0)) m = priors[j].sample(rng);
    means(static_cast<Eigen::Index>(j)) = m;
    sds(static_cast<Eigen::Index>(j)) = priors[j].sd();
  }
  return VariationalParams::for_layout(layout, means, sds);
}

}  // namespace vinecal

#endif  // VINECAL_VARIATIONAL_HPP
