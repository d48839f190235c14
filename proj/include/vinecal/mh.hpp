#ifndef VINECAL_MH_HPP
#define VINECAL_MH_HPP

// Random-walk Metropolis-Hastings over phi. Positive coordinates move in softplus space
// and the target picks up log|d phi / d u| = log sigmoid(u).

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "vinecal/model.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/special.hpp"
#include "vinecal/variational.hpp"

namespace vinecal {

/// Log posterior (up to a constant). May return -inf or throw NumericalError; both reject.
using LogDensity = std::function<double(const Vector&)>;

/// log p(d | phi) + log p(phi) under the exact joint Gaussian.
inline LogDensity koh_log_posterior(const KohModel& model, const PriorSpec& priors) {
  if (priors.size() != model.layout().size()) throw std::invalid_argument("koh_log_posterior: prior count");
  return [&model, &priors](const Vector& phi) {
    const double lp = log_prior(phi, priors);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    return lp + model.full_log_likelihood(phi);
  };
}

struct MHConfig {
  /// Initial proposal sd per unconstrained coordinate.
  Vector proposal_sd;
  std::size_t iterations = 10000;
  std::size_t burn_in = 2000;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  bool adapt = true;
  std::size_t adapt_batch = 50;
  double target_acceptance = 0.234;

  void validate(std::size_t dim) const {
    if (static_cast<std::size_t>(proposal_sd.size()) != dim)
      throw std::invalid_argument("MHConfig: one proposal sd per coordinate");
    if (!(proposal_sd.array() > 0.0).all()) throw std::invalid_argument("MHConfig: proposal sds must be positive");
    if (burn_in >= iterations) throw std::invalid_argument("MHConfig: burn-in must be shorter than the chain");
    if (thin < 1 || adapt_batch < 1) throw std::invalid_argument("MHConfig: thin and adapt_batch must be >= 1");
  }
};

/// Current position in both parametrizations.
struct MHState {
  Vector u;
  Vector phi;
  double log_post = 0.0;    // log p(phi | d) + const
  double log_target = 0.0;  // log_post + log Jacobian
};

inline Vector to_phi(const Vector& u, const std::vector<Domain>& domains) {
  Vector phi = u;
  for (Eigen::Index j = 0; j < u.size(); ++j)
    if (domains[static_cast<std::size_t>(j)] == Domain::Positive) phi(j) = softplus(u(j));
  return phi;
}

inline Vector to_u(const Vector& phi, const std::vector<Domain>& domains) {
  Vector u = phi;
  for (Eigen::Index j = 0; j < phi.size(); ++j)
    if (domains[static_cast<std::size_t>(j)] == Domain::Positive) u(j) = softplus_inverse(phi(j));
  return u;
}

inline double log_jacobian(const Vector& u, const std::vector<Domain>& domains) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j)
    if (domains[static_cast<std::size_t>(j)] == Domain::Positive) s += log_sigmoid(u(j));
  return s;
}

inline MHState make_state(const Vector& phi, const LogDensity& target, const std::vector<Domain>& domains) {
  MHState s;
  s.phi = phi;
  s.u = to_u(phi, domains);
  s.log_post = target(phi);
  if (!std::isfinite(s.log_post)) throw std::invalid_argument("MH: initial point has non-finite log posterior");
  s.log_target = s.log_post + log_jacobian(s.u, domains);
  return s;
}

/// One Gaussian random-walk step. Returns whether the proposal was accepted.
inline bool mh_step(MHState& state, const Vector& proposal_sd, const LogDensity& target,
                    const std::vector<Domain>& domains, Rng& rng) {
  Vector u = state.u;
  for (Eigen::Index j = 0; j < u.size(); ++j) u(j) += proposal_sd(j) * standard_normal(rng);
  const double log_u = std::log(uniform01(rng));
  const Vector phi = to_phi(u, domains);
  for (Eigen::Index j = 0; j < phi.size(); ++j)
    if (domains[static_cast<std::size_t>(j)] == Domain::Positive && !(phi(j) > 0.0)) return false;
  double lp;
  try {
    lp = target(phi);
  } catch (const NumericalError&) {
    return false;
  }
  if (!std::isfinite(lp)) return false;
  const double lt = lp + log_jacobian(u, domains);
  if (log_u >= lt - state.log_target) return false;
  state.u = u;
  state.phi = phi;
  state.log_post = lp;
  state.log_target = lt;
  return true;
}

struct Chain {
  std::vector<Vector> draws;
  std::vector<double> log_post;
  std::vector<std::size_t> iteration;
  std::vector<bool> accepted;
  /// Cumulative wall time at each kept draw.
  std::vector<double> wall_seconds;
  double acceptance_rate = 0.0;  // after burn-in
  double burn_in_acceptance = 0.0;
  Vector final_proposal_sd;
  double total_seconds = 0.0;
  std::size_t size() const { return draws.size(); }
};

inline Chain run_chain(const Vector& init, const MHConfig& config, const LogDensity& target,
                       const std::vector<Domain>& domains) {
  config.validate(static_cast<std::size_t>(init.size()));
  if (domains.size() != static_cast<std::size_t>(init.size())) throw std::invalid_argument("run_chain: domain count");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  Rng rng = make_rng(config.seed);
  MHState state = make_state(init, target, domains);
  Vector sd = config.proposal_sd;
  const auto p = init.size();

  // Burn-in adaptation: global scale steered towards the target rate, shape from the
  // running per-coordinate sd of the burn-in draws.
  double log_scale = 0.0;
  Vector sum = Vector::Zero(p), sum_sq = Vector::Zero(p);
  std::size_t seen = 0, batch_acc = 0, batches = 0, burn_acc = 0;

  Chain chain;
  std::size_t kept_acc = 0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const bool acc = mh_step(state, sd, target, domains, rng);
    if (it < config.burn_in) {
      burn_acc += acc;
      if (config.adapt) {
        batch_acc += acc;
        sum += state.u;
        sum_sq += state.u.cwiseProduct(state.u);
        ++seen;
        if ((it + 1) % config.adapt_batch == 0) {
          ++batches;
          const double rate = static_cast<double>(batch_acc) / static_cast<double>(config.adapt_batch);
          log_scale += (rate - config.target_acceptance) * 2.0 / std::sqrt(static_cast<double>(batches));
          batch_acc = 0;
          Vector shape = config.proposal_sd;
          if (batches >= 4) {
            const double m = static_cast<double>(seen);
            const Vector var = (sum_sq - sum.cwiseProduct(sum) / m) / (m - 1.0);
            for (Eigen::Index j = 0; j < p; ++j)
              if (var(j) > 0.0) shape(j) = 2.38 / std::sqrt(static_cast<double>(p)) * std::sqrt(var(j));
          }
          sd = shape * std::exp(log_scale);
        }
      }
      continue;
    }
    kept_acc += acc;
    if ((it - config.burn_in) % config.thin == 0) {
      chain.draws.push_back(state.phi);
      chain.log_post.push_back(state.log_post);
      chain.iteration.push_back(it);
      chain.accepted.push_back(acc);
      chain.wall_seconds.push_back(std::chrono::duration<double>(clock::now() - start).count());
    }
  }
  chain.acceptance_rate = static_cast<double>(kept_acc) / static_cast<double>(config.iterations - config.burn_in);
  chain.burn_in_acceptance = config.burn_in ? static_cast<double>(burn_acc) / static_cast<double>(config.burn_in) : 0.0;
  chain.final_proposal_sd = sd;
  chain.total_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return chain;
}

struct ChainSummary {
  Vector mean;
  Vector sd;
  /// Monte Carlo standard error of the mean from batch means.
  Vector mcse;
};

inline ChainSummary summarize(const Chain& chain, std::size_t batches = 20) {
  if (chain.draws.size() < 2) throw std::invalid_argument("summarize: need at least two draws");
  const auto p = chain.draws.front().size();
  const auto n = chain.draws.size();
  ChainSummary s{Vector::Zero(p), Vector::Zero(p), Vector::Zero(p)};
  for (const auto& d : chain.draws) s.mean += d;
  s.mean /= static_cast<double>(n);
  for (const auto& d : chain.draws) s.sd += (d - s.mean).cwiseAbs2();
  s.sd = (s.sd / static_cast<double>(n - 1)).cwiseSqrt();
  batches = std::min(batches, n);
  const std::size_t b = n / batches;
  Vector acc = Vector::Zero(p);
  for (std::size_t k = 0; k < batches; ++k) {
    Vector m = Vector::Zero(p);
    for (std::size_t i = k * b; i < (k + 1) * b; ++i) m += chain.draws[i];
    m /= static_cast<double>(b);
    acc += (m - s.mean).cwiseAbs2();
  }
  s.mcse = (acc / static_cast<double>(batches - 1) / static_cast<double>(batches)).cwiseSqrt();
  return s;
}

}  // namespace vinecal

#endif  // VINECAL_MH_HPP
