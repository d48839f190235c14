#ifndef VINECAL_PREDICTION_HPP
#define VINECAL_PREDICTION_HPP

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "vinecal/mh.hpp"
#include "vinecal/model.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/variational.hpp"

namespace vinecal {

struct TestPoint {
  std::vector<double> x;
  double y = 0.0;
};
using TestSet = std::vector<TestPoint>;

/// Factorization of K(phi) and alpha = K^{-1}(d - M) for one phi, reused across inputs.
class PredictiveCache {
 public:
  PredictiveCache(const KohModel& model, Vector phi) : model_(&model), phi_(std::move(phi)) {
    const JointMoments jm = model.joint_moments_unchecked(phi_);
    const auto llt = cholesky_with_jitter(jm.cov, model.run_jitter(phi_), phi_);
    alpha_ = llt.solve(model.data().responses() - jm.mean);
  }

  /// E[f(x, theta) + delta(x) | d, phi].
  double mean(std::span<const double> x) const {
    const auto& m = *model_;
    const auto& data = m.data();
    if (x.size() != m.spec().x_dim) throw std::invalid_argument("predictive mean: input dimension mismatch");
    const double* theta = phi_.data();
    double s = m.spec().f_mean(x, std::span<const double>(theta, m.spec().theta_dim)) + m.spec().delta_mean;
    for (std::size_t i = 0; i < data.n(); ++i) {
      double k = m.f_kernel(x.data(), theta, data.x(i), m.row_theta(i, phi_), phi_);
      if (data.is_observation(i)) k += m.delta_kernel(x.data(), data.x(i), phi_);
      s += k * alpha_(static_cast<Eigen::Index>(i));
    }
    return s;
  }

  const Vector& phi() const { return phi_; }
  const Vector& alpha() const { return alpha_; }

 private:
  const KohModel* model_;
  Vector phi_;
  Vector alpha_;
};

inline double predictive_mean(std::span<const double> x, const KohModel& model, const Vector& phi) {
  return PredictiveCache(model, phi).mean(x);
}

/// Average of predictive means over the given phi draws, for every input.
inline std::vector<double> average_predictions(const std::vector<std::vector<double>>& xs, const KohModel& model,
                                               const std::vector<Vector>& draws) {
  if (draws.empty()) throw std::invalid_argument("average_predictions: no draws");
  std::vector<double> out(xs.size(), 0.0);
  for (const auto& phi : draws) {
    const PredictiveCache cache(model, phi);
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] += cache.mean(xs[i]);
  }
  for (auto& v : out) v /= static_cast<double>(draws.size());
  return out;
}

/// Posterior predictive means under q: s_pred draws of phi.
inline std::vector<double> posterior_predictive_mean(const std::vector<std::vector<double>>& xs,
                                                     const KohModel& model, const VariationalParams& lambda,
                                                     std::size_t s_pred, Rng& rng) {
  if (s_pred < 1) throw std::invalid_argument("posterior_predictive_mean: need at least one draw");
  std::vector<Vector> draws;
  for (std::size_t s = 0; s < s_pred; ++s) draws.push_back(sample(lambda, rng));
  return average_predictions(xs, model, draws);
}

/// Posterior predictive means under an MCMC chain, using at most max_draws evenly spaced draws.
inline std::vector<double> posterior_predictive_mean(const std::vector<std::vector<double>>& xs,
                                                     const KohModel& model, const Chain& chain,
                                                     std::size_t max_draws = 200) {
  if (chain.draws.empty()) throw std::invalid_argument("posterior_predictive_mean: empty chain");
  std::vector<Vector> draws;
  const std::size_t k = std::min(max_draws, chain.draws.size());
  for (std::size_t i = 0; i < k; ++i) draws.push_back(chain.draws[i * chain.draws.size() / k]);
  return average_predictions(xs, model, draws);
}

inline std::vector<std::vector<double>> inputs_of(const TestSet& t) {
  std::vector<std::vector<double>> xs;
  for (const auto& p : t) xs.push_back(p.x);
  return xs;
}

inline double mse(const TestSet& test, const std::vector<double>& predictions) {
  if (test.size() != predictions.size()) throw std::invalid_argument("mse: length mismatch");
  if (test.empty()) throw std::invalid_argument("mse: empty test set");
  double s = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) s += (test[i].y - predictions[i]) * (test[i].y - predictions[i]);
  return s / static_cast<double>(test.size());
}

inline double rmse(const TestSet& test, const std::vector<double>& predictions) {
  return std::sqrt(mse(test, predictions));
}

}  // namespace vinecal

#endif  // VINECAL_PREDICTION_HPP
