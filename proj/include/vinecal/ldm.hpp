#ifndef VINECAL_LDM_HPP
#define VINECAL_LDM_HPP

// Liquid drop model of nuclear binding energies, its least-squares fit, and the
// calibration dataset built from nuclide records.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vinecal/design.hpp"
#include "vinecal/model.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/variational.hpp"

namespace vinecal {

struct NuclideRecord {
  int Z = 1;
  int N = 1;
  double y = 0.0;  // MeV
};

/// (a_vol, a_surf, a_sym, a_C) in MeV.
struct LDMParams {
  double a_vol = 0.0;
  double a_surf = 0.0;
  double a_sym = 0.0;
  double a_C = 0.0;

  std::array<double, 4> as_array() const { return {a_vol, a_surf, a_sym, a_C}; }
  static LDMParams from(std::span<const double> v) { return {v[0], v[1], v[2], v[3]}; }
};

inline const std::array<const char*, 4> kLdmParamNames{"a_vol", "a_surf", "a_sym", "a_C"};

/// Coefficients of (a_vol, a_surf, a_sym, a_C) in E_B.
inline std::array<double, 4> ldm_basis(double Z, double N) {
  const double A = Z + N;
  return {A, -std::cbrt(A * A), -(N - Z) * (N - Z) / A, -Z * (Z - 1.0) / std::cbrt(A)};
}

inline void check_nuclide(int Z, int N) {
  if (Z < 1 || N < 1) throw std::domain_error("nuclide needs Z >= 1 and N >= 1");
}

inline double ldm_binding_energy(int Z, int N, const LDMParams& p) {
  check_nuclide(Z, N);
  const auto b = ldm_basis(Z, N);
  return p.a_vol * b[0] + p.a_surf * b[1] + p.a_sym * b[2] + p.a_C * b[3];
}

/// Emulator mean option: E_B(x1 = Z, x2 = N; theta).
inline MeanFunction ldm_mean() {
  MeanFunction m;
  m.name = "ldm";
  m.depends_on_theta = true;
  m.fn = [](std::span<const double> x, std::span<const double> t) {
    const auto b = ldm_basis(x[0], x[1]);
    return t[0] * b[0] + t[1] * b[1] + t[2] * b[2] + t[3] * b[3];
  };
  return m;
}

struct LsFit {
  LDMParams params;
  std::array<double, 4> se{};
  double sigma_hat = 0.0;
  double rmse = 0.0;  // on the fitted records
};

/// Ordinary least squares of y on the LDM basis. Standard errors from sigma^2 (X'X)^{-1};
/// NaN when there are no residual degrees of freedom.
inline LsFit ls_fit(const std::vector<NuclideRecord>& records) {
  if (records.size() < 4) throw std::invalid_argument("ls_fit: need at least 4 records");
  const auto n = static_cast<Eigen::Index>(records.size());
  Matrix X(n, 4);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    check_nuclide(r.Z, r.N);
    const auto b = ldm_basis(r.Z, r.N);
    for (int c = 0; c < 4; ++c) X(i, c) = b[static_cast<std::size_t>(c)];
    y(i) = r.y;
  }
  // Scale columns so the rank test is not dominated by units.
  const Vector scale = X.colwise().norm().transpose();
  Matrix Xs = X;
  for (int c = 0; c < 4; ++c) {
    if (!(scale(c) > 0.0)) throw std::invalid_argument(std::string("ls_fit: column ") + kLdmParamNames[static_cast<std::size_t>(c)] + " is identically zero");
    Xs.col(c) /= scale(c);
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(Xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4) {
    std::string cols;
    for (int c = 0; c < 4; ++c) {
      Matrix rest(n, 3);
      for (int k = 0, o = 0; k < 4; ++k)
        if (k != c) rest.col(o++) = Xs.col(k);
      Eigen::ColPivHouseholderQR<Matrix> q2(rest);
      q2.setThreshold(1e-10);
      if (q2.rank() == qr.rank()) cols += (cols.empty() ? "" : ", ") + std::string(kLdmParamNames[static_cast<std::size_t>(c)]);
    }
    throw std::invalid_argument("ls_fit: design matrix is rank deficient; collinear columns: " + cols);
  }
  const Vector beta = qr.solve(y).cwiseQuotient(scale);
  const Vector resid = y - X * beta;
  const double rss = resid.squaredNorm();
  LsFit fit;
  fit.params = LDMParams::from(std::span<const double>(beta.data(), 4));
  fit.rmse = std::sqrt(rss / static_cast<double>(n));
  const Matrix xtx_inv = (X.transpose() * X).ldlt().solve(Matrix::Identity(4, 4));
  if (n > 4) {
    const double s2 = rss / static_cast<double>(n - 4);
    fit.sigma_hat = std::sqrt(s2);
    for (int c = 0; c < 4; ++c) fit.se[static_cast<std::size_t>(c)] = std::sqrt(s2 * xtx_inv(c, c));
  } else {
    fit.sigma_hat = std::numeric_limits<double>::quiet_NaN();
    fit.se.fill(std::numeric_limits<double>::quiet_NaN());
  }
  return fit;
}

/// Sampling box for the calibration inputs of the model runs.
inline Bounds ldm_default_bounds() {
  return {{15.008, 15.829}, {15.628, 18.193}, {21.435, 23.505}, {0.665, 0.72}};
}

/// Observations at the records' (Z, N); runs at Latin-hypercube parameters with (Z, N)
/// taken from the records replicated as often as needed and randomly permuted.
inline CalibrationDataset build_ldm_dataset(const std::vector<NuclideRecord>& records, std::size_t run_count,
                                            const Bounds& bounds, Rng& rng) {
  if (records.empty()) throw std::invalid_argument("build_ldm_dataset: no records");
  if (bounds.size() != 4) throw std::invalid_argument("build_ldm_dataset: need four parameter bounds");
  std::vector<ExperimentalObservation> obs;
  for (const auto& r : records) {
    check_nuclide(r.Z, r.N);
    obs.push_back({{static_cast<double>(r.Z), static_cast<double>(r.N)}, r.y});
  }
  std::vector<ModelRun> runs;
  if (run_count > 0) {
    const auto thetas = latin_hypercube(run_count, bounds, rng);
    std::vector<std::size_t> pool;
    while (pool.size() < run_count)
      for (std::size_t i = 0; i < records.size(); ++i) pool.push_back(i);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t j = 0; j < run_count; ++j) {
      const auto& r = records[pool[j]];
      const auto p = LDMParams::from(thetas[j]);
      runs.push_back({{static_cast<double>(r.Z), static_cast<double>(r.N)}, thetas[j], ldm_binding_energy(r.Z, r.N, p)});
    }
  }
  return CalibrationDataset(std::move(obs), std::move(runs), 2, 4);
}

/// Priors centred at the LS fit with sd = theta_sd_factor * SE; gamma hyperpriors.
/// eta_f's rate is set so its mean equals the mean squared response (shape kept).
inline PriorSpec ldm_priors(const LsFit& fit, const LatentLayout& layout, const std::vector<NuclideRecord>& records,
                            double theta_sd_factor = 7.5) {
  PriorSpec pri(layout.size(), Prior::gamma(10.0, 1.0));
  const auto p = fit.params.as_array();
  for (std::size_t k = 0; k < 4; ++k) pri[layout.theta(k)] = Prior::normal(p[k], theta_sd_factor * fit.se[k]);
  double m2 = 0.0;
  for (const auto& r : records) m2 += r.y * r.y;
  m2 /= static_cast<double>(records.size());
  constexpr double shape = 110.0;
  pri[layout.eta_f()] = Prior::gamma(shape, shape / m2);
  pri[layout.eta_d()] = Prior::gamma(10.0, 1.0);
  pri[layout.sigma()] = Prior::gamma(2.0, 1.0);
  return pri;
}

/// Reference-like parameters for synthetic data.
inline LDMParams ldm_reference_params() { return {15.42, 16.91, 22.47, 0.69}; }

/// Smooth shell-like deviation from the liquid drop (MeV).
inline double synthetic_discrepancy(int Z, int N, double amplitude) {
  const double tau = 2.0 * std::numbers::pi;
  return amplitude * (std::sin(tau * Z / 28.0) * std::cos(tau * N / 36.0) + 0.5 * std::sin(tau * (Z + N) / 60.0));
}

/// Distinct nuclides scattered around the valley of stability, y = E_B + discrepancy + noise.
inline std::vector<NuclideRecord> synthetic_nuclides(std::size_t count, Rng& rng, double discrepancy = 3.0,
                                                     double noise_sd = 0.3, LDMParams params = ldm_reference_params()) {
  std::set<std::pair<int, int>> seen;
  std::vector<NuclideRecord> out;
  std::size_t guard = 0;
  while (out.size() < count) {
    if (++guard > 1000 * (count + 10)) throw std::runtime_error("synthetic_nuclides: could not find enough nuclides");
    const double A = 16.0 + 234.0 * uniform01(rng);
    const double z0 = A / (1.98 + 0.0155 * std::cbrt(A * A));
    const int Z = static_cast<int>(std::lround(z0 + 0.35 * std::sqrt(A) * standard_normal(rng)));
    const int N = static_cast<int>(std::lround(A)) - Z;
    if (Z < 2 || N < 2 || !seen.insert({Z, N}).second) continue;
    out.push_back({Z, N, ldm_binding_energy(Z, N, params) + synthetic_discrepancy(Z, N, discrepancy) +
                             noise_sd * standard_normal(rng)});
  }
  return out;
}

/// Random split; the test part has round(fraction * size) records.
inline std::pair<std::vector<NuclideRecord>, std::vector<NuclideRecord>> split_records(
    std::vector<NuclideRecord> records, double test_fraction, Rng& rng) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("split_records: fraction in [0, 1)");
  std::shuffle(records.begin(), records.end(), rng);
  const auto k = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(records.size())));
  std::vector<NuclideRecord> test(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<NuclideRecord> train(records.begin() + static_cast<std::ptrdiff_t>(k), records.end());
  return {std::move(train), std::move(test)};
}

}  // namespace vinecal

#endif  // VINECAL_LDM_HPP
