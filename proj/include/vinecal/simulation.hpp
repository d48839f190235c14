#ifndef VINECAL_SIMULATION_HPP
#define VINECAL_SIMULATION_HPP

// Synthetic two-input, two-parameter calibration problem with known GP constants.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vinecal/design.hpp"
#include "vinecal/model.hpp"
#include "vinecal/prediction.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/variational.hpp"

namespace vinecal {

/// m_f(x, theta) = theta1 cos(x1) + theta2 sin(x2).
inline MeanFunction cos_sin_mean() {
  MeanFunction m;
  m.name = "cos_sin";
  m.depends_on_theta = true;
  m.fn = [](std::span<const double> x, std::span<const double> t) {
    return t[0] * std::cos(x[0]) + t[1] * std::sin(x[1]);
  };
  return m;
}

struct SimulationScenario {
  std::size_t m1 = 144;
  std::size_t m2 = 81;
  std::size_t test_count = 50;
  double noise_sd = 0.1;
  double theta1 = 0.39;
  double theta2 = 0.60;
  double eta_f = 1.0 / 30.0;
  double l_x = 1.0;
  double l_theta = 1.0;
  double eta_delta = 1.0 / 30.0;
  double l_delta = 0.5;
  double beta_delta = 0.15;
  std::uint64_t seed = 7;

  std::size_t n() const { return m1 + m2; }

  /// Grid designs need square m1 and m2; otherwise inputs come from a Latin hypercube.
  bool uses_grid() const {
    auto square = [](std::size_t v) {
      const auto r = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(v))));
      return r >= 2 && r * r == v;
    };
    return square(m1) && square(m2);
  }
  /// Input domain: [0, 3]^2 on grids, [0, 10]^2 for Latin hypercube designs.
  double x_upper() const { return uses_grid() ? 3.0 : 10.0; }

  /// The scenario's default split: 144/81 at n = 225, otherwise half and half.
  static SimulationScenario with_size(std::size_t n) {
    if (n < 2) throw std::invalid_argument("SimulationScenario: n must be >= 2");
    SimulationScenario s;
    if (n == 225) return s;
    s.m1 = n / 2;
    s.m2 = n - s.m1;
    return s;
  }

  void validate() const {
    if (m1 < 1 || m2 < 1) throw std::invalid_argument("SimulationScenario: need observations and runs");
    if (!(noise_sd >= 0.0)) throw std::invalid_argument("SimulationScenario: negative noise sd");
    if (!(eta_f > 0.0 && l_x > 0.0 && l_theta > 0.0 && eta_delta > 0.0 && l_delta > 0.0))
      throw std::invalid_argument("SimulationScenario: GP constants must be positive");
  }

  ModelSpec model_spec() const {
    ModelSpec spec = ModelSpec::shared_lengthscales(2, 2);
    spec.f_mean = cos_sin_mean();
    spec.delta_mean = beta_delta;
    return spec;
  }

  /// phi at the generating values, in the layout of model_spec().
  Vector true_phi() const {
    const LatentLayout lay(model_spec());
    Vector phi(static_cast<Eigen::Index>(lay.size()));
    phi << theta1, theta2, eta_f, l_x, l_theta, eta_delta, l_delta, noise_sd;
    return phi;
  }
};

/// Default priors for the scenario's latent layout.
inline PriorSpec simulation_priors() {
  return {Prior::normal(0.5, 0.3), Prior::normal(0.5, 0.3), Prior::gamma(4.0, 120.0), Prior::gamma(4.0, 4.0),
          Prior::gamma(4.0, 4.0),  Prior::gamma(4.0, 120.0), Prior::gamma(4.0, 8.0),  Prior::gamma(4.0, 40.0)};
}

struct SimulatedData {
  CalibrationDataset data;
  ModelSpec spec;
  Vector phi_true;
  TestSet test;
};

inline SimulatedData simulate_dataset(const SimulationScenario& sc) {
  sc.validate();
  const double hi = sc.x_upper();
  const Bounds xb{{0.0, hi}, {0.0, hi}};
  const Bounds tb{{0.0, 1.0}, {0.0, 1.0}};
  Rng design_rng = make_rng(sc.seed, 0);
  Rng field_rng = make_rng(sc.seed, 1);
  Rng noise_rng = make_rng(sc.seed, 2);
  Rng test_rng = make_rng(sc.seed, 3);

  std::vector<std::vector<double>> obs_x, run_x, run_t;
  if (sc.uses_grid()) {
    obs_x = tensor_grid(static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(sc.m1)))), xb);
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(sc.m2))));
    run_x = tensor_grid(side, xb);
    run_t = tensor_grid(side, tb);
    std::shuffle(run_t.begin(), run_t.end(), design_rng);
  } else {
    obs_x = latin_hypercube(sc.m1, xb, design_rng);
    run_x = latin_hypercube(sc.m2, xb, design_rng);
    run_t = latin_hypercube(sc.m2, tb, design_rng);
  }
  std::vector<std::vector<double>> test_x;
  for (std::size_t i = 0; i < sc.test_count; ++i) test_x.push_back({hi * uniform01(test_rng), hi * uniform01(test_rng)});

  // One joint draw over observations, held-out points and runs. Held-out points are noise
  // free, so they enter as observations with a vanishing noise sd.
  std::vector<ExperimentalObservation> obs;
  for (const auto& x : obs_x) obs.push_back({x, 0.0});
  for (const auto& x : test_x) obs.push_back({x, 0.0});
  std::vector<ModelRun> runs;
  for (std::size_t j = 0; j < run_x.size(); ++j) runs.push_back({run_x[j], run_t[j], 0.0});
  const ModelSpec spec = sc.model_spec();
  const KohModel joint(CalibrationDataset(obs, runs, 2, 2), spec);
  Vector phi = sc.true_phi();
  phi(static_cast<Eigen::Index>(joint.layout().sigma())) = 1e-5;
  const JointMoments jm = joint.joint_moments_unchecked(phi);
  const auto llt = cholesky_with_jitter(jm.cov, 1e-10, phi);
  Vector z(jm.mean.size());
  for (auto& v : z) v = standard_normal(field_rng);
  const Vector draw = jm.mean + llt.matrixL() * z;

  SimulatedData out;
  std::vector<ExperimentalObservation> train_obs;
  for (std::size_t i = 0; i < sc.m1; ++i)
    train_obs.push_back({obs_x[i], draw(static_cast<Eigen::Index>(i)) + sc.noise_sd * standard_normal(noise_rng)});
  for (std::size_t i = 0; i < sc.test_count; ++i)
    out.test.push_back({test_x[i], draw(static_cast<Eigen::Index>(sc.m1 + i))});
  const auto off = static_cast<Eigen::Index>(sc.m1 + sc.test_count);
  std::vector<ModelRun> train_runs;
  for (std::size_t j = 0; j < run_x.size(); ++j)
    train_runs.push_back({run_x[j], run_t[j], draw(off + static_cast<Eigen::Index>(j))});
  out.data = CalibrationDataset(std::move(train_obs), std::move(train_runs), 2, 2);
  out.spec = spec;
  out.phi_true = sc.true_phi();
  return out;
}

}  // namespace vinecal

#endif  // VINECAL_SIMULATION_HPP
