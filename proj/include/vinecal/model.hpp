#ifndef VINECAL_MODEL_HPP
#define VINECAL_MODEL_HPP

// Kennedy-O'Hagan joint Gaussian model over d = (y_1..y_m1, z_1..z_m2):
//   y_i = f(x_i, theta) + delta(x_i) + sigma * eps_i,  z_j = f(xt_j, tt_j),
// with independent squared-exponential GPs for f and delta.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vinecal/normal.hpp"

namespace vinecal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Factorization or conditioning failure. Carries the latent vector that triggered it.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, Vector phi = {})
      : std::runtime_error(what), phi_(std::move(phi)) {}
  const Vector& phi() const noexcept { return phi_; }

 private:
  Vector phi_;
};

enum class Domain { Real, Positive };

struct ExperimentalObservation {
  std::vector<double> x;
  double y = 0.0;
};

struct ModelRun {
  std::vector<double> x;
  std::vector<double> theta;
  double z = 0.0;
};

/// Observations followed by model runs; row i < m1 is an observation.
class CalibrationDataset {
 public:
  CalibrationDataset() = default;

  CalibrationDataset(std::vector<ExperimentalObservation> observations, std::vector<ModelRun> runs,
                     std::size_t x_dim, std::size_t theta_dim)
      : observations_(std::move(observations)), runs_(std::move(runs)), x_dim_(x_dim),
        theta_dim_(theta_dim) {
    const std::size_t n = observations_.size() + runs_.size();
    if (n < 2) throw std::invalid_argument("CalibrationDataset: need at least two data points");
    if (x_dim_ == 0) throw std::invalid_argument("CalibrationDataset: input dimension must be >= 1");
    xs_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(x_dim_));
    thetas_.resize(static_cast<Eigen::Index>(runs_.size()), static_cast<Eigen::Index>(theta_dim_));
    d_.resize(static_cast<Eigen::Index>(n));
    auto check = [](double v, const char* what, std::size_t row) {
      if (!std::isfinite(v))
        throw std::invalid_argument(std::string("CalibrationDataset: non-finite ") + what +
                                    " in row " + std::to_string(row));
    };
    for (std::size_t i = 0; i < observations_.size(); ++i) {
      const auto& o = observations_[i];
      if (o.x.size() != x_dim_)
        throw std::invalid_argument("CalibrationDataset: observation " + std::to_string(i) +
                                    " has wrong input dimension");
      for (std::size_t k = 0; k < x_dim_; ++k) {
        check(o.x[k], "input", i);
        xs_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = o.x[k];
      }
      check(o.y, "response", i);
      d_(static_cast<Eigen::Index>(i)) = o.y;
    }
    const std::size_t m1 = observations_.size();
    for (std::size_t j = 0; j < runs_.size(); ++j) {
      const auto& r = runs_[j];
      const auto row = static_cast<Eigen::Index>(m1 + j);
      if (r.x.size() != x_dim_ || r.theta.size() != theta_dim_)
        throw std::invalid_argument("CalibrationDataset: run " + std::to_string(j) +
                                    " has wrong dimension");
      for (std::size_t k = 0; k < x_dim_; ++k) {
        check(r.x[k], "input", m1 + j);
        xs_(row, static_cast<Eigen::Index>(k)) = r.x[k];
      }
      for (std::size_t k = 0; k < theta_dim_; ++k) {
        check(r.theta[k], "calibration input", m1 + j);
        thetas_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = r.theta[k];
      }
      check(r.z, "model output", m1 + j);
      d_(row) = r.z;
    }
  }

  std::size_t n() const { return observations_.size() + runs_.size(); }
  std::size_t m1() const { return observations_.size(); }
  std::size_t m2() const { return runs_.size(); }
  std::size_t x_dim() const { return x_dim_; }
  std::size_t theta_dim() const { return theta_dim_; }
  bool is_observation(std::size_t i) const { return i < observations_.size(); }

  const Vector& responses() const { return d_; }
  const double* x(std::size_t i) const { return xs_.row(static_cast<Eigen::Index>(i)).data(); }
  /// Calibration input of run row i (i >= m1).
  const double* run_theta(std::size_t i) const {
    return thetas_.row(static_cast<Eigen::Index>(i - m1())).data();
  }

  const std::vector<ExperimentalObservation>& observations() const { return observations_; }
  const std::vector<ModelRun>& runs() const { return runs_; }

 private:
  std::vector<ExperimentalObservation> observations_;
  std::vector<ModelRun> runs_;
  std::size_t x_dim_ = 0;
  std::size_t theta_dim_ = 0;
  RowMatrix xs_;
  RowMatrix thetas_;
  Vector d_;
};

/// Mean function m_f(x, theta) of the emulator GP. An empty callable means zero.
struct MeanFunction {
  std::string name = "zero";
  std::function<double(std::span<const double>, std::span<const double>)> fn;
  bool depends_on_theta = false;

  double operator()(std::span<const double> x, std::span<const double> theta) const {
    return fn ? fn(x, theta) : 0.0;
  }
  static MeanFunction zero() { return {}; }
};

/// GP structure. Length-scale groups map every input dimension onto a shared
/// length-scale coordinate; f groups are numbered jointly over x and theta dimensions.
struct ModelSpec {
  std::size_t x_dim = 1;
  std::size_t theta_dim = 1;
  MeanFunction f_mean;
  double delta_mean = 0.0;
  std::vector<std::size_t> f_x_groups;
  std::vector<std::size_t> f_theta_groups;
  std::vector<std::size_t> delta_groups;
  /// Diagonal jitter on the run block, relative to eta_f.
  double run_jitter = 1e-8;

  /// One length-scale for all x dims and one for all theta dims (f); one for delta.
  static ModelSpec shared_lengthscales(std::size_t x_dim, std::size_t theta_dim) {
    ModelSpec s;
    s.x_dim = x_dim;
    s.theta_dim = theta_dim;
    s.f_x_groups.assign(x_dim, 0);
    s.f_theta_groups.assign(theta_dim, theta_dim > 0 ? 1 : 0);
    s.delta_groups.assign(x_dim, 0);
    return s;
  }

  static ModelSpec per_dim_lengthscales(std::size_t x_dim, std::size_t theta_dim) {
    ModelSpec s;
    s.x_dim = x_dim;
    s.theta_dim = theta_dim;
    for (std::size_t k = 0; k < x_dim; ++k) s.f_x_groups.push_back(k);
    for (std::size_t k = 0; k < theta_dim; ++k) s.f_theta_groups.push_back(x_dim + k);
    for (std::size_t k = 0; k < x_dim; ++k) s.delta_groups.push_back(k);
    return s;
  }

  std::size_t f_lengthscale_count() const {
    std::size_t g = 0;
    for (auto v : f_x_groups) g = std::max(g, v + 1);
    for (auto v : f_theta_groups) g = std::max(g, v + 1);
    return g;
  }
  std::size_t delta_lengthscale_count() const {
    std::size_t g = 0;
    for (auto v : delta_groups) g = std::max(g, v + 1);
    return g;
  }

  void validate() const {
    if (f_x_groups.size() != x_dim || f_theta_groups.size() != theta_dim ||
        delta_groups.size() != x_dim)
      throw std::invalid_argument("ModelSpec: length-scale groups do not match dimensions");
    if (!(run_jitter >= 0.0)) throw std::invalid_argument("ModelSpec: negative run jitter");
    if (!std::isfinite(delta_mean)) throw std::invalid_argument("ModelSpec: non-finite delta mean");
  }
};

/// Layout of phi: [theta_1..theta_k, eta_f, lf_1..lf_G, eta_d, ld_1..ld_H, sigma].
class LatentLayout {
 public:
  LatentLayout() = default;
  explicit LatentLayout(const ModelSpec& spec)
      : theta_dim_(spec.theta_dim), f_groups_(spec.f_lengthscale_count()),
        d_groups_(spec.delta_lengthscale_count()) {
    for (std::size_t k = 0; k < theta_dim_; ++k) add("theta" + std::to_string(k + 1), Domain::Real);
    add("eta_f", Domain::Positive);
    for (std::size_t g = 0; g < f_groups_; ++g) add("lf" + std::to_string(g + 1), Domain::Positive);
    add("eta_d", Domain::Positive);
    for (std::size_t g = 0; g < d_groups_; ++g) add("ld" + std::to_string(g + 1), Domain::Positive);
    add("sigma", Domain::Positive);
  }

  std::size_t size() const { return names_.size(); }
  std::size_t theta(std::size_t k) const { return k; }
  std::size_t theta_dim() const { return theta_dim_; }
  std::size_t eta_f() const { return theta_dim_; }
  std::size_t lf(std::size_t g) const { return theta_dim_ + 1 + g; }
  std::size_t eta_d() const { return theta_dim_ + 1 + f_groups_; }
  std::size_t ld(std::size_t g) const { return eta_d() + 1 + g; }
  std::size_t sigma() const { return size() - 1; }

  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  Domain domain(std::size_t i) const { return domains_[i]; }
  const std::vector<Domain>& domains() const { return domains_; }

  /// Index of a named coordinate, or size() when unknown.
  std::size_t find(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    return static_cast<std::size_t>(it - names_.begin());
  }

 private:
  void add(std::string name, Domain d) {
    names_.push_back(std::move(name));
    domains_.push_back(d);
  }
  std::size_t theta_dim_ = 0;
  std::size_t f_groups_ = 0;
  std::size_t d_groups_ = 0;
  std::vector<std::string> names_;
  std::vector<Domain> domains_;
};

struct JointMoments {
  Vector mean;
  Matrix cov;
};

struct UnivariateMarginal {
  double mean = 0.0;
  double sd = 1.0;
};

/// amplitude * exp(-sum_k (a_k - b_k)^2 / (2 l_k^2)), one length-scale per dimension.
inline double sqexp_kernel(std::span<const double> a, std::span<const double> b, double amplitude,
                           std::span<const double> lengthscales) {
  if (!(amplitude > 0.0)) throw std::domain_error("sqexp_kernel: amplitude must be positive");
  if (a.size() != b.size() || a.size() != lengthscales.size())
    throw std::invalid_argument("sqexp_kernel: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double l = lengthscales[k];
    if (!(l > 0.0)) throw std::domain_error("sqexp_kernel: length-scales must be positive");
    const double diff = a[k] - b[k];
    s += diff * diff / (2.0 * l * l);
  }
  return amplitude * std::exp(-s);
}

/// Cholesky with one jitter escalation: on failure retry with 10 * base_jitter added
/// to the diagonal. Throws NumericalError if both attempts fail.
inline Eigen::LLT<Matrix> cholesky_with_jitter(const Matrix& k, double base_jitter,
                                               const Vector& phi = {}) {
  Eigen::LLT<Matrix> llt(k);
  auto ok = [&](const Eigen::LLT<Matrix>& f) {
    if (f.info() != Eigen::Success) return false;
    const auto diag = f.matrixLLT().diagonal();
    return diag.allFinite() && (diag.array() > 0.0).all();
  };
  if (ok(llt)) return llt;
  Matrix bumped = k;
  bumped.diagonal().array() += 10.0 * std::max(base_jitter, 1e-300);
  llt.compute(bumped);
  if (ok(llt)) return llt;
  throw NumericalError("covariance matrix is not positive definite after jitter", phi);
}

/// Gaussian log density of `x` given a successful Cholesky factor of the covariance.
inline double mvn_logpdf_chol(const Vector& x, const Vector& mean, const Eigen::LLT<Matrix>& llt) {
  const Vector r = x - mean;
  const Vector z = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + logdet) - static_cast<double>(x.size()) * kLogSqrt2Pi;
}

class KohModel {
 public:
  KohModel() = default;
  KohModel(CalibrationDataset data, ModelSpec spec)
      : data_(std::move(data)), spec_(std::move(spec)), layout_(spec_) {
    spec_.validate();
    if (spec_.x_dim != data_.x_dim() || spec_.theta_dim != data_.theta_dim())
      throw std::invalid_argument("KohModel: dataset dimensions do not match the model spec");
    if (layout_.size() > 64) throw std::invalid_argument("KohModel: at most 64 latent coordinates");
    x_lengthscale_of_.resize(spec_.x_dim);
    for (std::size_t k = 0; k < spec_.x_dim; ++k) x_lengthscale_of_[k] = layout_.lf(spec_.f_x_groups[k]);
    t_lengthscale_of_.resize(spec_.theta_dim);
    for (std::size_t k = 0; k < spec_.theta_dim; ++k)
      t_lengthscale_of_[k] = layout_.lf(spec_.f_theta_groups[k]);
    d_lengthscale_of_.resize(spec_.x_dim);
    for (std::size_t k = 0; k < spec_.x_dim; ++k) d_lengthscale_of_[k] = layout_.ld(spec_.delta_groups[k]);
    build_masks();
  }

  const CalibrationDataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }
  const LatentLayout& layout() const { return layout_; }
  std::size_t n() const { return data_.n(); }

  /// Throws std::domain_error unless phi has the right size, is finite and positives are > 0.
  void check_domain(const Vector& phi) const {
    if (static_cast<std::size_t>(phi.size()) != layout_.size())
      throw std::domain_error("latent vector has wrong dimension");
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const double v = phi(static_cast<Eigen::Index>(i));
      if (!std::isfinite(v) || (layout_.domain(i) == Domain::Positive && !(v > 0.0)))
        throw std::domain_error("latent coordinate " + layout_.name(i) + " outside its domain");
    }
  }

  /// f-kernel between (xa, ta) and (xb, tb).
  double f_kernel(const double* xa, const double* ta, const double* xb, const double* tb,
                  const Vector& phi) const {
    double s = 0.0;
    for (std::size_t k = 0; k < spec_.x_dim; ++k) {
      const double l = phi(static_cast<Eigen::Index>(x_lengthscale_of_[k]));
      const double diff = xa[k] - xb[k];
      s += diff * diff / (2.0 * l * l);
    }
    if (ta != tb) {
      for (std::size_t k = 0; k < spec_.theta_dim; ++k) {
        const double l = phi(static_cast<Eigen::Index>(t_lengthscale_of_[k]));
        const double diff = ta[k] - tb[k];
        s += diff * diff / (2.0 * l * l);
      }
    }
    return phi(static_cast<Eigen::Index>(layout_.eta_f())) * std::exp(-s);
  }

  double delta_kernel(const double* xa, const double* xb, const Vector& phi) const {
    double s = 0.0;
    for (std::size_t k = 0; k < spec_.x_dim; ++k) {
      const double l = phi(static_cast<Eigen::Index>(d_lengthscale_of_[k]));
      const double diff = xa[k] - xb[k];
      s += diff * diff / (2.0 * l * l);
    }
    return phi(static_cast<Eigen::Index>(layout_.eta_d())) * std::exp(-s);
  }

  double run_jitter(const Vector& phi) const {
    return spec_.run_jitter * phi(static_cast<Eigen::Index>(layout_.eta_f()));
  }

  /// Calibration input attached to row i: theta from phi for observations, tt_j for runs.
  const double* row_theta(std::size_t i, const Vector& phi) const {
    return data_.is_observation(i) ? phi.data() : data_.run_theta(i);
  }

  /// M_i(phi).
  double mean_entry(std::size_t i, const Vector& phi) const {
    const std::span<const double> x(data_.x(i), spec_.x_dim);
    const std::span<const double> t(row_theta(i, phi), spec_.theta_dim);
    const double mf = spec_.f_mean(x, t);
    return data_.is_observation(i) ? mf + spec_.delta_mean : mf;
  }

  /// K_ij(phi). The single source of every covariance entry.
  double cov_entry(std::size_t i, std::size_t j, const Vector& phi) const {
    if (i > j) std::swap(i, j);
    const bool obs_i = data_.is_observation(i);
    const bool obs_j = data_.is_observation(j);
    double k = f_kernel(data_.x(i), row_theta(i, phi), data_.x(j), row_theta(j, phi), phi);
    if (obs_i && obs_j) k += delta_kernel(data_.x(i), data_.x(j), phi);
    if (i == j) {
      if (obs_i) {
        const double s = phi(static_cast<Eigen::Index>(layout_.sigma()));
        k += s * s;
      } else {
        k += run_jitter(phi);
      }
    }
    return k;
  }

  /// Moments of the sub-vector d_idx.
  void sub_moments(std::span<const std::size_t> idx, const Vector& phi, Vector& mean, Matrix& cov) const {
    const auto m = static_cast<Eigen::Index>(idx.size());
    mean.resize(m);
    cov.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      mean(a) = mean_entry(idx[static_cast<std::size_t>(a)], phi);
      for (Eigen::Index b = 0; b <= a; ++b) {
        const double v = cov_entry(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)], phi);
        cov(a, b) = v;
        cov(b, a) = v;
      }
    }
  }

  /// Full (M, K) without a positive-definiteness check.
  JointMoments joint_moments_unchecked(const Vector& phi) const {
    check_domain(phi);
    const std::size_t n = data_.n();
    JointMoments jm;
    jm.mean.resize(static_cast<Eigen::Index>(n));
    jm.cov.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      jm.mean(ii) = mean_entry(i, phi);
      for (std::size_t j = 0; j <= i; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double v = cov_entry(j, i, phi);
        jm.cov(ii, jj) = v;
        jm.cov(jj, ii) = v;
      }
    }
    return jm;
  }

  /// (M, K); throws NumericalError when K cannot be factorized even after jitter.
  JointMoments assemble_joint_moments(const Vector& phi) const {
    JointMoments jm = joint_moments_unchecked(phi);
    cholesky_with_jitter(jm.cov, run_jitter(phi), phi);
    return jm;
  }

  /// Exact log p(d | phi).
  double full_log_likelihood(const Vector& phi) const {
    const JointMoments jm = joint_moments_unchecked(phi);
    const auto llt = cholesky_with_jitter(jm.cov, run_jitter(phi), phi);
    return mvn_logpdf_chol(data_.responses(), jm.mean, llt);
  }

  /// (M_i, sqrt(K_ii)).
  UnivariateMarginal marginal_univariate(std::size_t i, const Vector& phi) const {
    if (i >= data_.n()) throw std::out_of_range("marginal_univariate: index out of range");
    return {mean_entry(i, phi), std::sqrt(cov_entry(i, i, phi))};
  }

  // Symbolic dependency of moments on latent coordinates, as bitmasks over phi.
  // Masks may over-approximate (a coordinate listed need not change the value) but
  // never omit a coordinate the value depends on.
  std::uint64_t mean_mask(std::size_t i) const {
    return data_.is_observation(i) ? obs_mean_mask_ : 0;
  }
  std::uint64_t entry_mask(std::size_t i, std::size_t j) const {
    const bool oi = data_.is_observation(i);
    const bool oj = data_.is_observation(j);
    if (i == j) return oi ? obs_diag_mask_ : run_diag_mask_;
    if (oi && oj) return obs_obs_mask_;
    if (oi || oj) return obs_run_mask_;
    return run_run_mask_;
  }

 private:
  static std::uint64_t bit(std::size_t i) { return std::uint64_t{1} << i; }

  void build_masks() {
    const std::uint64_t eta_f = bit(layout_.eta_f());
    std::uint64_t theta = 0;
    for (std::size_t k = 0; k < spec_.theta_dim; ++k) theta |= bit(layout_.theta(k));
    std::uint64_t lx = 0, lt = 0, ld = 0;
    for (auto idx : x_lengthscale_of_) lx |= bit(idx);
    for (auto idx : t_lengthscale_of_) lt |= bit(idx);
    for (auto idx : d_lengthscale_of_) ld |= bit(idx);
    const std::uint64_t eta_d = bit(layout_.eta_d());
    const std::uint64_t sigma = bit(layout_.sigma());

    obs_mean_mask_ = spec_.f_mean.depends_on_theta ? theta : 0;
    obs_diag_mask_ = eta_f | eta_d | sigma;
    run_diag_mask_ = eta_f;
    // theta - theta is identically zero between two observations.
    obs_obs_mask_ = eta_f | lx | eta_d | ld;
    obs_run_mask_ = eta_f | lx | lt | theta;
    run_run_mask_ = eta_f | lx | lt;
  }

  CalibrationDataset data_;
  ModelSpec spec_;
  LatentLayout layout_;
  std::vector<std::size_t> x_lengthscale_of_;
  std::vector<std::size_t> t_lengthscale_of_;
  std::vector<std::size_t> d_lengthscale_of_;
  std::uint64_t obs_mean_mask_ = 0;
  std::uint64_t obs_diag_mask_ = 0;
  std::uint64_t run_diag_mask_ = 0;
  std::uint64_t obs_obs_mask_ = 0;
  std::uint64_t obs_run_mask_ = 0;
  std::uint64_t run_run_mask_ = 0;
};

}  // namespace vinecal

#endif  // VINECAL_MODEL_HPP
