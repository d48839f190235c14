#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "vinecal/prediction.hpp"

using namespace vinecal;

namespace {

// Cross-covariance of y* = f(x*, theta) + delta(x*) with every data row, written out directly.
Vector dense_cross(const KohModel& m, const Vector& phi, const std::vector<double>& xs) {
  const auto& data = m.data();
  const auto& lay = m.layout();
  const auto& spec = m.spec();
  auto at = [&](std::size_t j) { return phi(static_cast<Eigen::Index>(j)); };
  Vector k(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < spec.x_dim; ++c) s += oracle::sq(xs[c] - data.x(i)[c]) / (2.0 * oracle::sq(at(lay.lf(spec.f_x_groups[c]))));
    for (std::size_t c = 0; c < spec.theta_dim; ++c) {
      const double ti = data.is_observation(i) ? at(c) : data.run_theta(i)[c];
      s += oracle::sq(at(c) - ti) / (2.0 * oracle::sq(at(lay.lf(spec.f_theta_groups[c]))));
    }
    double v = at(lay.eta_f()) * std::exp(-s);
    if (data.is_observation(i)) {
      double sd = 0.0;
      for (std::size_t c = 0; c < spec.x_dim; ++c) sd += oracle::sq(xs[c] - data.x(i)[c]) / (2.0 * oracle::sq(at(lay.ld(spec.delta_groups[c]))));
      v += at(lay.eta_d()) * std::exp(-sd);
    }
    k(static_cast<Eigen::Index>(i)) = v;
  }
  return k;
}

double dense_prediction(const KohModel& m, const Vector& phi, const std::vector<double>& xs) {
  const Matrix kinv = oracle::dense_covariance(m, phi).inverse();
  const Vector r = m.data().responses() - oracle::dense_mean(m, phi);
  std::vector<double> th(phi.data(), phi.data() + m.spec().theta_dim);
  const double prior = m.spec().f_mean(xs, th) + m.spec().delta_mean;
  return prior + dense_cross(m, phi, xs).dot(kinv * r);
}

// Same inputs, new responses.
KohModel with_responses(const KohModel& m, const Vector& d) {
  auto obs = m.data().observations();
  auto runs = m.data().runs();
  for (std::size_t i = 0; i < obs.size(); ++i) obs[i].y = d(static_cast<Eigen::Index>(i));
  for (std::size_t j = 0; j < runs.size(); ++j) runs[j].z = d(static_cast<Eigen::Index>(obs.size() + j));
  return KohModel(CalibrationDataset(obs, runs, m.spec().x_dim, m.spec().theta_dim), m.spec());
}

std::vector<double> random_x(std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> x(dim);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST(Prediction, MatchesDenseInverse) {
  std::mt19937_64 rng(51);
  for (std::size_t n : {4u, 4u, 4u, 7u, 12u}) {
    const auto inst = oracle::random_instance(n, rng);
    const auto x = random_x(inst.model.spec().x_dim, rng);
    const double want = dense_prediction(inst.model, inst.phi, x);
    EXPECT_NEAR(predictive_mean(x, inst.model, inst.phi), want, 1e-10 * std::max(1.0, std::abs(want)));
  }
}

TEST(Prediction, InterpolatesNoiseFreeObservations) {
  std::mt19937_64 rng(52);
  auto inst = oracle::random_instance(6, rng);
  inst.phi(static_cast<Eigen::Index>(inst.model.layout().sigma())) = 1e-6;
  const auto& data = inst.model.data();
  for (std::size_t i = 0; i < data.m1(); ++i) {
    std::vector<double> x(data.x(i), data.x(i) + data.x_dim());
    EXPECT_NEAR(predictive_mean(x, inst.model, inst.phi), data.responses()(static_cast<Eigen::Index>(i)), 1e-6);
  }
}

TEST(Prediction, ZeroAmplitudeGivesPriorMean) {
  std::mt19937_64 rng(53);
  const auto inst = oracle::random_instance(6, rng);
  Vector phi = inst.phi;
  const auto& lay = inst.model.layout();
  phi(static_cast<Eigen::Index>(lay.eta_f())) = 1e-14;
  phi(static_cast<Eigen::Index>(lay.eta_d())) = 1e-14;
  // Runs sit exactly on the emulator mean, so only the vanishing kernels could move the prediction.
  Vector d = inst.model.data().responses();
  const Vector mean = oracle::dense_mean(inst.model, phi);
  for (std::size_t j = inst.model.data().m1(); j < inst.model.n(); ++j) d(static_cast<Eigen::Index>(j)) = mean(static_cast<Eigen::Index>(j));
  const KohModel m = with_responses(inst.model, d);
  const auto x = random_x(m.spec().x_dim, rng);
  std::vector<double> th(phi.data(), phi.data() + m.spec().theta_dim);
  EXPECT_NEAR(predictive_mean(x, m, phi), m.spec().f_mean(x, th) + m.spec().delta_mean, 1e-9);
}

TEST(Prediction, LinearInResponses) {
  std::mt19937_64 rng(54);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 10; ++rep) {
    const auto inst = oracle::random_instance(8, rng);
    const auto n = static_cast<Eigen::Index>(inst.model.n());
    const Vector base = Vector::Zero(n);
    Vector d1(n), d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d1(i) = z(rng);
      d2(i) = z(rng);
    }
    const auto x = random_x(inst.model.spec().x_dim, rng);
    // g(d) = prediction(d) - prediction(0) = k* K^{-1} d is linear in d.
    auto g = [&](const Vector& d) {
      return predictive_mean(x, with_responses(inst.model, d), inst.phi) -
             predictive_mean(x, with_responses(inst.model, base), inst.phi);
    };
    EXPECT_NEAR(g(2.0 * d1 - 0.5 * d2), 2.0 * g(d1) - 0.5 * g(d2), 1e-9);
  }
}

TEST(Prediction, DegenerateVariationalPosterior) {
  std::mt19937_64 rng(55);
  const auto inst = oracle::random_instance(6, rng);
  const auto& lay = inst.model.layout();
  const auto lam = VariationalParams::for_layout(lay, inst.phi, Vector::Constant(static_cast<Eigen::Index>(lay.size()), 1e-9));
  const std::vector<std::vector<double>> xs{random_x(inst.model.spec().x_dim, rng)};
  Rng r = make_rng(1);
  const auto got = posterior_predictive_mean(xs, inst.model, lam, 5, r);
  EXPECT_NEAR(got[0], predictive_mean(xs[0], inst.model, inst.phi), 1e-6);
}

TEST(Prediction, SeededSingleDrawIsReproducible) {
  std::mt19937_64 rng(56);
  const auto inst = oracle::random_instance(6, rng);
  const auto& lay = inst.model.layout();
  const auto lam = VariationalParams::for_layout(lay, inst.phi, Vector::Constant(static_cast<Eigen::Index>(lay.size()), 0.05));
  const std::vector<std::vector<double>> xs{random_x(inst.model.spec().x_dim, rng), random_x(inst.model.spec().x_dim, rng)};
  Rng a = make_rng(8), b = make_rng(8);
  EXPECT_EQ(posterior_predictive_mean(xs, inst.model, lam, 1, a), posterior_predictive_mean(xs, inst.model, lam, 1, b));
  Rng c = make_rng(8);
  EXPECT_THROW(posterior_predictive_mean(xs, inst.model, lam, 0, c), std::invalid_argument);
}

TEST(Prediction, ChainAveragesItsDraws) {
  std::mt19937_64 rng(57);
  const auto inst = oracle::random_instance(5, rng);
  const std::vector<std::vector<double>> xs{random_x(inst.model.spec().x_dim, rng)};
  Chain chain;
  Vector other = inst.phi;
  other(0) += 0.2;
  chain.draws = {inst.phi, other};
  const double want = 0.5 * (predictive_mean(xs[0], inst.model, inst.phi) + predictive_mean(xs[0], inst.model, other));
  EXPECT_NEAR(posterior_predictive_mean(xs, inst.model, chain)[0], want, 1e-12);
  // thinning keeps evenly spaced draws
  chain.draws = {inst.phi, other, inst.phi, other};
  EXPECT_NEAR(posterior_predictive_mean(xs, inst.model, chain, 2)[0], predictive_mean(xs[0], inst.model, inst.phi), 1e-12);
}

TEST(Prediction, MseExamples) {
  const TestSet t{{{0.0}, 1.0}, {{1.0}, 2.0}};
  EXPECT_EQ(mse(t, {1.0, 2.0}), 0.0);
  EXPECT_EQ(mse({{{0.0}, 3.0}}, {1.0}), 4.0);
  EXPECT_EQ(rmse({{{0.0}, 3.0}}, {1.0}), 2.0);
  EXPECT_THROW(mse(t, {1.0}), std::invalid_argument);
}
