#ifndef VINECAL_CLI_HPP
#define VINECAL_CLI_HPP

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vinecal/io.hpp"
#include "vinecal/ldm.hpp"
#include "vinecal/mh.hpp"
#include "vinecal/optimizer.hpp"
#include "vinecal/prediction.hpp"
#include "vinecal/simulation.hpp"

namespace vinecal {

namespace fs = std::filesystem;

/// Bad flag values or configuration: reported with exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli {

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "model.f_mean",         "model.delta_mean",    "model.f_x_lengthscales", "model.f_theta_lengthscales",
      "model.delta_lengthscales", "model.run_jitter", "calibrate.vine",         "calibrate.trunc",
      "calibrate.trunc_max",  "calibrate.trunc_tol", "calibrate.variant",      "calibrate.samples",
      "calibrate.cv_samples", "calibrate.tau",       "calibrate.eta",          "calibrate.seed",
      "calibrate.max_iters",  "calibrate.tol",       "calibrate.window",       "calibrate.trace_stride",
      "calibrate.init",       "calibrate.pairs_per_step", "mh.iterations",     "mh.burn_in",
      "mh.thin",              "mh.seed",             "mh.adapt",               "predict.samples",
      "predict.seed",         "predict.max_chain_draws"};
  return keys;
}

inline void check_keys(const Config& cfg) {
  for (const auto& [k, v] : cfg.values())
    if (!known_keys().count(k) && k.rfind("prior.", 0) != 0)
      throw UsageError(cfg.where(k) + ": unknown configuration key '" + k + "'");
}

inline std::vector<std::size_t> groups(const std::string& mode, std::size_t dims, std::size_t offset,
                                       const std::string& where) {
  std::vector<std::size_t> g;
  if (mode == "shared") g.assign(dims, offset);
  else if (mode == "per_dim")
    for (std::size_t k = 0; k < dims; ++k) g.push_back(offset + k);
  else throw UsageError(where + ": length-scale mode must be 'shared' or 'per_dim'");
  return g;
}

inline ModelSpec model_spec(const Config& cfg, std::size_t xd, std::size_t td) {
  ModelSpec s;
  s.x_dim = xd;
  s.theta_dim = td;
  const std::string mean = cfg.get_or("model.f_mean", "zero");
  if (mean == "cos_sin") {
    if (xd != 2 || td != 2) throw UsageError(cfg.where("model.f_mean") + ": cos_sin mean needs 2 inputs and 2 parameters");
    s.f_mean = cos_sin_mean();
  } else if (mean == "ldm") {
    if (xd != 2 || td != 4) throw UsageError(cfg.where("model.f_mean") + ": ldm mean needs inputs (Z, N) and 4 parameters");
    s.f_mean = ldm_mean();
  } else if (mean != "zero") {
    throw UsageError(cfg.where("model.f_mean") + ": unknown mean '" + mean + "' (zero, cos_sin, ldm)");
  }
  s.delta_mean = cfg.number("model.delta_mean", 0.0);
  s.run_jitter = cfg.number("model.run_jitter", 1e-8);
  s.f_x_groups = groups(cfg.get_or("model.f_x_lengthscales", "shared"), xd, 0, cfg.where("model.f_x_lengthscales"));
  const std::size_t off = s.f_x_groups.empty() ? 0 : s.f_x_groups.back() + 1;
  s.f_theta_groups = groups(cfg.get_or("model.f_theta_lengthscales", "shared"), td, off, cfg.where("model.f_theta_lengthscales"));
  s.delta_groups = groups(cfg.get_or("model.delta_lengthscales", "shared"), xd, 0, cfg.where("model.delta_lengthscales"));
  return s;
}

/// prior.<name> for every latent coordinate; defaults N(0, 1) and Gamma(2, 2).
inline PriorSpec priors(const Config& cfg, const LatentLayout& lay) {
  PriorSpec p;
  for (std::size_t j = 0; j < lay.size(); ++j) {
    const std::string key = "prior." + lay.name(j);
    if (cfg.has(key)) {
      p.push_back(parse_prior(cfg.get(key), cfg.where(key)));
      if (lay.domain(j) == Domain::Positive && p.back().kind != Prior::Kind::Gamma)
        throw UsageError(cfg.where(key) + ": positive coordinate '" + lay.name(j) + "' needs a gamma prior");
      if (lay.domain(j) == Domain::Real && p.back().kind != Prior::Kind::Normal)
        throw UsageError(cfg.where(key) + ": real coordinate '" + lay.name(j) + "' needs a normal prior");
    } else {
      p.push_back(lay.domain(j) == Domain::Real ? Prior::normal(0.0, 1.0) : Prior::gamma(2.0, 2.0));
    }
  }
  for (const auto& [k, v] : cfg.values())
    if (k.rfind("prior.", 0) == 0 && lay.find(k.substr(6)) >= lay.size())
      throw UsageError(cfg.where(k) + ": no latent coordinate named '" + k.substr(6) + "'");
  return p;
}

inline EstimatorVariant parse_variant(const std::string& s) {
  if (s == "plain") return EstimatorVariant::Plain;
  if (s == "rb") return EstimatorVariant::RB;
  if (s == "rbcv") return EstimatorVariant::RBCV;
  if (s == "rbcvis") return EstimatorVariant::RBCVIS;
  throw UsageError("variant must be plain, rb, rbcv or rbcvis (got '" + s + "')");
}

inline VineKind parse_vine(const std::string& s) {
  if (s == "d") return VineKind::DVine;
  if (s == "c") return VineKind::CVine;
  throw UsageError("vine must be 'd' or 'c' (got '" + s + "')");
}

struct Problem {
  Config cfg;
  std::unique_ptr<KohModel> model;
  PriorSpec priors;
};

inline Problem load_problem(const fs::path& data_dir, const std::string& config_path) {
  Problem p;
  const fs::path cfg_file = config_path.empty() ? data_dir / "model.cfg" : fs::path(config_path);
  if (!config_path.empty() || fs::exists(cfg_file)) p.cfg = Config::load(cfg_file);
  check_keys(p.cfg);
  CalibrationDataset data = read_dataset(data_dir / "observations.csv", data_dir / "runs.csv");
  const ModelSpec spec = model_spec(p.cfg, data.x_dim(), data.theta_dim());
  p.model = std::make_unique<KohModel>(std::move(data), spec);
  p.priors = priors(p.cfg, p.model->layout());
  return p;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_config(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& entries,
                         const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# " << comment << '\n';
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

inline std::vector<std::pair<std::string, std::string>> prior_entries(const LatentLayout& lay, const PriorSpec& pri) {
  std::vector<std::pair<std::string, std::string>> e;
  for (std::size_t j = 0; j < lay.size(); ++j) e.emplace_back("prior." + lay.name(j), format_prior(pri[j]));
  return e;
}

// --- subcommands -----------------------------------------------------------------

struct SimulateOpts {
  std::size_t n = 225, m1 = 0, m2 = 0, test_count = 50;
  double noise_sd = 0.1;
  std::uint64_t seed = 7;
  std::string out = ".";
};

inline int simulate(const SimulateOpts& o, std::ostream& os) {
  auto sc = SimulationScenario::with_size(o.n);
  if (o.m1 || o.m2) {
    if (o.m1 + o.m2 != o.n) throw UsageError("--m1 + --m2 must equal --n");
    sc.m1 = o.m1;
    sc.m2 = o.m2;
  }
  sc.test_count = o.test_count;
  sc.noise_sd = o.noise_sd;
  sc.seed = o.seed;
  if (sc.test_count < 1) throw UsageError("--test-count must be >= 1");
  const auto sim = simulate_dataset(sc);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_dataset(dir / "observations.csv", dir / "runs.csv", sim.data);
  write_test_set(dir / "test.csv", sim.test);
  const LatentLayout lay(sim.spec);
  json truth;
  for (std::size_t j = 0; j < lay.size(); ++j) truth[lay.name(j)] = sim.phi_true(static_cast<Eigen::Index>(j));
  write_json(dir / "truth.json", {{"phi", truth}, {"seed", o.seed}, {"m1", sc.m1}, {"m2", sc.m2}});
  std::vector<std::pair<std::string, std::string>> e{
      {"model.f_mean", "cos_sin"},          {"model.delta_mean", format_double(sc.beta_delta)},
      {"model.f_x_lengthscales", "shared"}, {"model.f_theta_lengthscales", "shared"},
      {"model.delta_lengthscales", "shared"}};
  const auto pe = prior_entries(lay, simulation_priors());
  e.insert(e.end(), pe.begin(), pe.end());
  e.insert(e.end(), {{"calibrate.vine", "d"}, {"calibrate.trunc", "3"}, {"calibrate.variant", "rbcvis"},
                     {"calibrate.samples", "50"}, {"calibrate.cv_samples", "10"}});
  write_config(dir / "model.cfg", e, "simulation scenario, n = " + std::to_string(sc.n()));
  os << "wrote " << sc.n() << " data points (" << sc.m1 << " observations, " << sc.m2 << " runs) and "
     << sc.test_count << " test points to " << dir.string() << '\n';
  return 0;
}

struct CalibrateOpts {
  std::string data = ".", config, out, trunc, vine, variant, init;
  std::optional<std::size_t> samples, cv_samples, max_iters, window, trace_stride, trunc_max;
  std::optional<double> tau, eta, tol, trunc_tol;
  std::optional<std::uint64_t> seed;
};

inline RunConfig run_config(const Problem& p, const CalibrateOpts& o) {
  const Config& c = p.cfg;
  RunConfig rc;
  rc.vine.kind = parse_vine(o.vine.empty() ? c.get_or("calibrate.vine", "d") : o.vine);
  rc.vine.n = p.model->n();
  rc.estimator.variant = parse_variant(o.variant.empty() ? c.get_or("calibrate.variant", "rbcvis") : o.variant);
  rc.estimator.samples = o.samples.value_or(c.count("calibrate.samples", 50));
  rc.estimator.cv_samples = o.cv_samples.value_or(c.count("calibrate.cv_samples", 10));
  rc.estimator.tau = o.tau.value_or(c.number("calibrate.tau", 1.5));
  rc.eta = o.eta.value_or(c.number("calibrate.eta", 0.1));
  rc.seed = o.seed.value_or(static_cast<std::uint64_t>(c.count("calibrate.seed", 1)));
  rc.max_iters = o.max_iters.value_or(c.count("calibrate.max_iters", 10000));
  rc.tol = o.tol.value_or(c.number("calibrate.tol", 1e-4));
  rc.window = o.window.value_or(c.count("calibrate.window", 50));
  rc.trace_stride = o.trace_stride.value_or(c.count("calibrate.trace_stride", 100));
  rc.pairs_per_step = c.count("calibrate.pairs_per_step", 1);
  if (rc.estimator.variant == EstimatorVariant::RBCVIS && !(rc.estimator.tau > 1.0))
    throw UsageError("--tau must be > 1 with the rbcvis variant");
  try {
    rc.estimator.validate();
    if (!(rc.tol > 0.0) || rc.window < 1 || !(rc.eta > 0.0) || rc.trace_stride < 1 || rc.pairs_per_step < 1)
      throw std::invalid_argument("tol and eta must be positive; window, trace stride and pairs per step >= 1");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return rc;
}

inline int calibrate(const CalibrateOpts& o, std::ostream& os) {
  const Problem p = load_problem(o.data, o.config);
  RunConfig rc = run_config(p, o);
  const std::size_t n = p.model->n();
  const std::string trunc = o.trunc.empty() ? p.cfg.get_or("calibrate.trunc", "3") : o.trunc;
  const std::string init_mode = o.init.empty() ? p.cfg.get_or("calibrate.init", "prior") : o.init;
  VariationalParams init;
  if (init_mode == "prior") {
    init = init_from_prior_moments(p.model->layout(), p.priors);
  } else if (init_mode == "sample") {
    Rng r = make_rng(rc.seed, 101);
    init = init_from_prior_sample(p.model->layout(), p.priors, r);
  } else {
    throw UsageError("init must be 'prior' or 'sample'");
  }

  std::size_t level = 0;
  json selection;
  if (trunc == "auto") {
    const std::size_t lmax = o.trunc_max.value_or(p.cfg.count("calibrate.trunc_max", std::min<std::size_t>(5, n - 1)));
    const double tol = o.trunc_tol.value_or(p.cfg.number("calibrate.trunc_tol", 0.25));
    if (lmax < 1 || lmax > n - 1) throw UsageError("--trunc-max must be in [1, n-1]");
    rc.vine.l = 1;
    const auto sel = select_truncation_level(*p.model, p.priors, rc, init, lmax, tol);
    level = sel.level;
    selection = {{"deltas", sel.deltas}, {"reached_limit", sel.reached_limit}};
    if (sel.reached_limit) os << "warning: truncation did not stabilize below tolerance; using l = " << lmax << '\n';
  } else {
    double v = 0.0;
    try {
      v = parse_double(trunc, "--trunc");
    } catch (const ParseError&) {
      throw UsageError("--trunc must be a positive integer or 'auto'");
    }
    if (v < 1 || v != std::floor(v) || v > static_cast<double>(n - 1))
      throw UsageError("--trunc must be an integer in [1, n-1] or 'auto' (got " + trunc + ")");
    level = static_cast<std::size_t>(v);
  }
  rc.vine.l = level;
  const VineElbo elbo(*p.model, p.priors, rc.vine);
  const auto res = run_calibration(elbo, rc, init);

  const fs::path out = o.out.empty() ? fs::path(o.data) : fs::path(o.out);
  fs::create_directories(out);
  write_json(out / "posterior.json", posterior_json(res.lambda, p.model->layout()));
  write_csv(out / "trace.csv", trace_table(res.trace, p.model->layout()));
  json metrics{{"wall_seconds", res.wall_seconds}, {"iterations", res.iterations}, {"converged", res.converged},
               {"truncation", level},            {"vine", to_string(rc.vine.kind)}, {"variant", to_string(rc.estimator.variant)},
               {"rejected_draws", res.rejected}};
  if (!selection.is_null()) metrics["truncation_selection"] = selection;
  write_json(out / "metrics.json", metrics);
  os << "calibrated with " << to_string(rc.vine.kind) << "-vine l = " << level << ", " << res.iterations
     << " iterations" << (res.converged ? " (converged)" : "") << " in " << res.wall_seconds << " s\n";
  const auto& lay = p.model->layout();
  for (std::size_t j = 0; j < lay.size(); ++j)
    os << "  " << std::left << std::setw(8) << lay.name(j) << " mean " << res.lambda.mean(j) << "  sd " << res.lambda.sd(j) << '\n';
  return 0;
}

struct MhOpts {
  std::string data = ".", config, out;
  std::optional<std::size_t> iterations, burn_in, thin;
  std::optional<std::uint64_t> seed;
};

/// Start at the prior means with proposal sds of a tenth of the prior sd, mapped to
/// unconstrained space.
inline std::pair<Vector, Vector> mh_start(const LatentLayout& lay, const PriorSpec& pri) {
  const auto p = static_cast<Eigen::Index>(lay.size());
  Vector init(p), sd(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& pr = pri[static_cast<std::size_t>(j)];
    init(j) = pr.mean();
    sd(j) = 0.1 * pr.sd();
    if (lay.domain(static_cast<std::size_t>(j)) == Domain::Positive) sd(j) /= sigmoid(softplus_inverse(init(j)));
  }
  return {init, sd};
}

inline int mh(const MhOpts& o, std::ostream& os) {
  const Problem p = load_problem(o.data, o.config);
  const auto& lay = p.model->layout();
  auto [init, sd] = mh_start(lay, p.priors);
  MHConfig mc;
  mc.proposal_sd = sd;
  mc.iterations = o.iterations.value_or(p.cfg.count("mh.iterations", 10000));
  mc.burn_in = o.burn_in.value_or(p.cfg.count("mh.burn_in", mc.iterations / 5));
  mc.thin = o.thin.value_or(p.cfg.count("mh.thin", 1));
  mc.seed = o.seed.value_or(static_cast<std::uint64_t>(p.cfg.count("mh.seed", 1)));
  mc.adapt = p.cfg.get_or("mh.adapt", "true") != "false";
  try {
    mc.validate(lay.size());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto chain = run_chain(init, mc, koh_log_posterior(*p.model, p.priors), lay.domains());
  const fs::path out = o.out.empty() ? fs::path(o.data) : fs::path(o.out);
  fs::create_directories(out);
  write_csv(out / "chain.csv", chain_table(chain, lay));
  const auto s = summarize(chain);
  json summary{{"acceptance_rate", chain.acceptance_rate}, {"wall_seconds", chain.total_seconds},
               {"iterations", mc.iterations}, {"burn_in", mc.burn_in}, {"kept", chain.size()}};
  for (std::size_t j = 0; j < lay.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    summary["coordinates"].push_back({{"name", lay.name(j)}, {"mean", s.mean(jj)}, {"sd", s.sd(jj)}, {"mcse", s.mcse(jj)}});
  }
  write_json(out / "mh.json", summary);
  os << "MH: " << mc.iterations << " iterations, acceptance " << chain.acceptance_rate << ", " << chain.total_seconds << " s\n";
  return 0;
}

struct PredictOpts {
  std::string data = ".", config, test, posterior, chain, out;
  std::optional<std::size_t> samples;
  std::optional<std::uint64_t> seed;
};

inline int predict(const PredictOpts& o, std::ostream& os) {
  const fs::path data(o.data);
  const fs::path out = o.out.empty() ? data : fs::path(o.out);
  const fs::path post_path = o.posterior.empty() ? data / "posterior.json" : fs::path(o.posterior);
  if (o.chain.empty() && !fs::exists(post_path))
    throw std::runtime_error("no posterior summary found at " + post_path.string() + " (run calibrate first)");
  const Problem p = load_problem(data, o.config);
  const TestSet test = read_test_set(o.test.empty() ? data / "test.csv" : fs::path(o.test));
  const auto xs = inputs_of(test);
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> pred;
  json metrics;
  if (!o.chain.empty()) {
    const Chain chain = chain_from_table(read_csv(fs::path(o.chain)), p.model->layout());
    pred = posterior_predictive_mean(xs, *p.model, chain, p.cfg.count("predict.max_chain_draws", 200));
    metrics["iterations"] = chain.size() ? chain.iteration.back() + 1 : 0;
  } else {
    const auto lambda = posterior_from_json(read_json(post_path), p.model->layout());
    Rng rng = make_rng(o.seed.value_or(static_cast<std::uint64_t>(p.cfg.count("predict.seed", 1))), 7);
    const std::size_t s = o.samples.value_or(p.cfg.count("predict.samples", 50));
    if (s < 1) throw UsageError("--samples must be >= 1");
    pred = posterior_predictive_mean(xs, *p.model, lambda, s, rng);
    const fs::path mpath = post_path.parent_path() / "metrics.json";
    metrics["iterations"] = 0;
    if (fs::exists(mpath)) {
      const json m = read_json(mpath);
      metrics["iterations"] = m.value("iterations", 0);
      metrics["training_seconds"] = m.value("wall_seconds", 0.0);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  metrics["mse"] = mse(test, pred);
  metrics["rmse"] = rmse(test, pred);
  metrics["wall_seconds"] = secs;
  fs::create_directories(out);
  CsvTable t;
  for (std::size_t k = 1; k <= xs.front().size(); ++k) t.header.push_back("x" + std::to_string(k));
  t.header.insert(t.header.end(), {"y_true", "y_pred", "residual"});
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto row = test[i].x;
    row.insert(row.end(), {test[i].y, pred[i], test[i].y - pred[i]});
    t.rows.push_back(std::move(row));
  }
  write_csv(out / "predictions.csv", t);
  write_json(out / "prediction_metrics.json", metrics);
  os << "mse " << metrics["mse"].get<double>() << "  rmse " << metrics["rmse"].get<double>() << '\n';
  return 0;
}

struct LdmSynthOpts {
  std::size_t count = 556;
  double discrepancy = 3.0, noise_sd = 0.3;
  std::uint64_t seed = 1;
  std::string out = "records.csv";
};

inline int ldm_synth(const LdmSynthOpts& o, std::ostream& os) {
  Rng rng = make_rng(o.seed, 31);
  const auto recs = synthetic_nuclides(o.count, rng, o.discrepancy, o.noise_sd);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  write_records(o.out, recs);
  os << "wrote " << recs.size() << " synthetic nuclides to " << o.out << '\n';
  return 0;
}

inline json ls_json(const LsFit& f) {
  json j;
  const auto p = f.params.as_array();
  for (std::size_t k = 0; k < 4; ++k) j[kLdmParamNames[k]] = {{"estimate", p[k]}, {"se", f.se[k]}};
  j["sigma_hat"] = f.sigma_hat;
  j["train_rmse"] = f.rmse;
  return j;
}

inline double ls_test_rmse(const LsFit& f, const std::vector<NuclideRecord>& test) {
  double s = 0.0;
  for (const auto& r : test) {
    const double e = r.y - ldm_binding_energy(r.Z, r.N, f.params);
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(test.size()));
}

inline void print_ls(std::ostream& os, const LsFit& f) {
  const auto p = f.params.as_array();
  os << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < 4; ++k)
    os << std::left << std::setw(8) << kLdmParamNames[k] << std::right << std::setw(12) << p[k] << "  ("
       << f.se[k] << ")\n";
  os << "rmse    " << std::setw(12) << f.rmse << " MeV\n";
  os << std::defaultfloat;
}

inline int ldm_ls(const std::string& records, const std::string& json_out, std::ostream& os) {
  const auto recs = read_records(records);
  const auto f = ls_fit(recs);
  print_ls(os, f);
  if (!json_out.empty()) write_json(json_out, ls_json(f));
  return 0;
}

struct LdmBuildOpts {
  std::string records, out = "ldm";
  std::size_t runs = 2000, max_records = 500;
  double test_fraction = 0.1;
  std::uint64_t seed = 1;
  std::string bounds;
};

inline Bounds parse_bounds(const std::string& s) {
  if (s.empty()) return ldm_default_bounds();
  Bounds b;
  for (const auto& part : split(s, ';')) {
    const auto lohi = split(part, ',');
    if (lohi.size() != 2) throw UsageError("--bounds must look like 'lo,hi;lo,hi;lo,hi;lo,hi'");
    b.emplace_back(parse_double(lohi[0], "--bounds"), parse_double(lohi[1], "--bounds"));
    if (!(b.back().first < b.back().second)) throw UsageError("--bounds: each lower bound must be below its upper bound");
  }
  if (b.size() != 4) throw UsageError("--bounds needs four intervals");
  return b;
}

inline int ldm_build(const LdmBuildOpts& o, std::ostream& os) {
  const Bounds bounds = parse_bounds(o.bounds);
  if (!(o.test_fraction >= 0.0 && o.test_fraction < 1.0)) throw UsageError("--test-fraction must be in [0, 1)");
  auto recs = read_records(o.records);
  Rng rng = make_rng(o.seed, 41);
  auto [train, test] = split_records(std::move(recs), o.test_fraction, rng);
  if (o.max_records && train.size() > o.max_records) train.resize(o.max_records);
  const auto fit = ls_fit(train);
  const auto data = build_ldm_dataset(train, o.runs, bounds, rng);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_dataset(dir / "observations.csv", dir / "runs.csv", data);
  json ls = ls_json(fit);
  if (!test.empty()) {
    TestSet ts;
    for (const auto& r : test) ts.push_back({{static_cast<double>(r.Z), static_cast<double>(r.N)}, r.y});
    write_test_set(dir / "test.csv", ts);
    ls["test_rmse"] = ls_test_rmse(fit, test);
  }
  write_json(dir / "ls.json", ls);

  Config tmp;
  tmp.set("model.f_x_lengthscales", "per_dim");
  tmp.set("model.f_theta_lengthscales", "per_dim");
  tmp.set("model.delta_lengthscales", "per_dim");
  const LatentLayout lay(model_spec(tmp, 2, 4));
  std::vector<std::pair<std::string, std::string>> e{{"model.f_mean", "zero"},
                                                     {"model.f_x_lengthscales", "per_dim"},
                                                     {"model.f_theta_lengthscales", "per_dim"},
                                                     {"model.delta_lengthscales", "per_dim"}};
  const auto pe = prior_entries(lay, ldm_priors(fit, lay, train));
  e.insert(e.end(), pe.begin(), pe.end());
  e.insert(e.end(), {{"calibrate.vine", "d"}, {"calibrate.trunc", "3"}, {"calibrate.variant", "rbcvis"},
                     {"calibrate.samples", "50"}, {"calibrate.cv_samples", "10"}, {"calibrate.init", "sample"}});
  write_config(dir / "model.cfg", e, "liquid drop model calibration");
  os << "wrote " << train.size() << " observations, " << o.runs << " runs and " << test.size() << " test records to "
     << dir.string() << '\n';
  print_ls(os, fit);
  if (!test.empty()) os << "LS test rmse " << ls["test_rmse"].get<double>() << " MeV\n";
  return 0;
}

}  // namespace cli

/// Entry point shared by the executable and the tests.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Variational calibration of computer models with truncated vine copulas", "vinecal"};
  app.require_subcommand(1);

  cli::SimulateOpts sim;
  auto* s = app.add_subcommand("simulate", "generate the synthetic calibration scenario");
  s->add_option("--n", sim.n, "total data points")->check(CLI::PositiveNumber);
  s->add_option("--m1", sim.m1, "observations (default 144 at n = 225, else n/2)");
  s->add_option("--m2", sim.m2, "model runs");
  s->add_option("--test-count", sim.test_count, "held-out points");
  s->add_option("--noise-sd", sim.noise_sd, "observation noise sd");
  s->add_option("--seed", sim.seed, "random seed");
  s->add_option("--out", sim.out, "output directory");

  cli::CalibrateOpts cal;
  auto* c = app.add_subcommand("calibrate", "variational calibration");
  c->add_option("--data", cal.data, "directory with observations.csv and runs.csv");
  c->add_option("--config", cal.config, "configuration file (default DATA/model.cfg)");
  c->add_option("--out", cal.out, "output directory (default DATA)");
  c->add_option("--vine", cal.vine, "d or c");
  c->add_option("--trunc", cal.trunc, "truncation level or 'auto'");
  c->add_option("--trunc-max", cal.trunc_max, "largest level tried by --trunc auto");
  c->add_option("--trunc-tol", cal.trunc_tol, "stopping tolerance for --trunc auto");
  c->add_option("--variant", cal.variant, "plain, rb, rbcv or rbcvis");
  c->add_option("--samples", cal.samples, "Monte Carlo samples per gradient");
  c->add_option("--cv-samples", cal.cv_samples, "extra draws for control variates");
  c->add_option("--tau", cal.tau, "dispersion coefficient for importance sampling");
  c->add_option("--eta", cal.eta, "AdaGrad learning rate");
  c->add_option("--seed", cal.seed, "random seed");
  c->add_option("--max-iters", cal.max_iters, "iteration cap");
  c->add_option("--tol", cal.tol, "convergence tolerance");
  c->add_option("--window", cal.window, "convergence window");
  c->add_option("--trace-stride", cal.trace_stride, "trace thinning");
  c->add_option("--init", cal.init, "prior or sample");

  cli::MhOpts mho;
  auto* m = app.add_subcommand("mh", "random-walk Metropolis-Hastings baseline");
  m->add_option("--data", mho.data, "data directory");
  m->add_option("--config", mho.config, "configuration file");
  m->add_option("--out", mho.out, "output directory");
  m->add_option("--iterations", mho.iterations, "chain length");
  m->add_option("--burn-in", mho.burn_in, "burn-in iterations");
  m->add_option("--thin", mho.thin, "thinning");
  m->add_option("--seed", mho.seed, "random seed");

  cli::PredictOpts pr;
  auto* p = app.add_subcommand("predict", "posterior predictive means and MSE");
  p->add_option("--data", pr.data, "data directory");
  p->add_option("--config", pr.config, "configuration file");
  p->add_option("--test", pr.test, "test CSV (default DATA/test.csv)");
  p->add_option("--posterior", pr.posterior, "posterior summary (default DATA/posterior.json)");
  p->add_option("--chain", pr.chain, "use an MH chain CSV instead of the variational posterior");
  p->add_option("--samples", pr.samples, "draws from the variational posterior");
  p->add_option("--seed", pr.seed, "random seed");
  p->add_option("--out", pr.out, "output directory (default DATA)");

  cli::LdmSynthOpts ls;
  auto* y = app.add_subcommand("ldm-synth", "write synthetic nuclide records");
  y->add_option("--count", ls.count, "number of nuclides");
  y->add_option("--discrepancy", ls.discrepancy, "amplitude of the smooth model discrepancy (MeV)");
  y->add_option("--noise-sd", ls.noise_sd, "noise sd (MeV)");
  y->add_option("--seed", ls.seed, "random seed");
  y->add_option("--out", ls.out, "output CSV");

  std::string ls_records, ls_json_out;
  auto* l = app.add_subcommand("ldm-ls", "least-squares fit of the liquid drop model");
  l->add_option("--records", ls_records, "records CSV with header Z,N,y")->required();
  l->add_option("--json", ls_json_out, "also write the fit as JSON");

  cli::LdmBuildOpts lb;
  auto* b = app.add_subcommand("ldm-build", "build the LDM calibration dataset");
  b->add_option("--records", lb.records, "records CSV with header Z,N,y")->required();
  b->add_option("--runs", lb.runs, "number of model runs");
  b->add_option("--max-records", lb.max_records, "cap on training records (0 = all)");
  b->add_option("--test-fraction", lb.test_fraction, "held-out fraction");
  b->add_option("--bounds", lb.bounds, "parameter box 'lo,hi;lo,hi;lo,hi;lo,hi'");
  b->add_option("--seed", lb.seed, "random seed");
  b->add_option("--out", lb.out, "output directory");

  std::vector<const char*> argv{"vinecal"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }
  try {
    if (*s) return cli::simulate(sim, out);
    if (*c) return cli::calibrate(cal, out);
    if (*m) return cli::mh(mho, out);
    if (*p) return cli::predict(pr, out);
    if (*y) return cli::ldm_synth(ls, out);
    if (*l) return cli::ldm_ls(ls_records, ls_json_out, out);
    if (*b) return cli::ldm_build(lb, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace vinecal

#endif  // VINECAL_CLI_HPP
