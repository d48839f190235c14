#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "vinecal/cli.hpp"

using namespace vinecal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vinecal_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

// --- design ----------------------------------------------------------------------

TEST(Design, SinglePointInsideBounds) {
  Rng rng = make_rng(1);
  const auto p = latin_hypercube(1, {{2.0, 3.0}, {-1.0, 0.0}}, rng);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_GE(p[0][0], 2.0);
  EXPECT_LE(p[0][0], 3.0);
  EXPECT_GE(p[0][1], -1.0);
  EXPECT_LE(p[0][1], 0.0);
}

TEST(Design, OnePointPerStratumForManySeeds) {
  const Bounds b{{0.0, 1.0}, {0.0, 10.0}, {-5.0, 5.0}};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed);
    const std::size_t count = seed == 0 ? 10 : 3 + seed % 29;
    const auto pts = latin_hypercube(count, b, rng);
    for (std::size_t d = 0; d < b.size(); ++d) {
      std::set<std::size_t> strata;
      const double w = (b[d].second - b[d].first) / static_cast<double>(count);
      for (const auto& p : pts) {
        ASSERT_GE(p[d], b[d].first);
        ASSERT_LE(p[d], b[d].second);
        strata.insert(std::min(count - 1, static_cast<std::size_t>((p[d] - b[d].first) / w)));
      }
      ASSERT_EQ(strata.size(), count) << "seed " << seed << " dim " << d;
    }
  }
}

TEST(Design, TensorGrid) {
  const auto g = tensor_grid(3, {{0.0, 3.0}, {0.0, 1.0}});
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.front(), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(g.back(), (std::vector<double>{3.0, 1.0}));
  Rng rng = make_rng(1);
  EXPECT_THROW(latin_hypercube(0, {{0.0, 1.0}}, rng), std::invalid_argument);
}

// --- simulation ------------------------------------------------------------------

TEST(Simulation, DefaultScenario) {
  const SimulationScenario sc;
  EXPECT_EQ(sc.n(), 225u);
  EXPECT_TRUE(sc.uses_grid());
  const auto sim = simulate_dataset(sc);
  EXPECT_EQ(sim.data.m1(), 144u);
  EXPECT_EQ(sim.data.m2(), 81u);
  EXPECT_EQ(sim.test.size(), 50u);
  EXPECT_DOUBLE_EQ(sim.phi_true(0), 0.39);
  EXPECT_DOUBLE_EQ(sim.phi_true(1), 0.60);
  for (const auto& r : sim.data.runs())
    for (double t : r.theta) {
      EXPECT_GE(t, 0.0);
      EXPECT_LE(t, 1.0);
    }
  for (const auto& o : sim.data.observations())
    for (double x : o.x) EXPECT_LE(x, 3.0);
}

TEST(Simulation, DeterministicAndNoiseOnlyTouchesObservations) {
  auto sc = SimulationScenario::with_size(60);
  EXPECT_FALSE(sc.uses_grid());
  const auto a = simulate_dataset(sc);
  const auto b = simulate_dataset(sc);
  EXPECT_EQ(a.data.responses(), b.data.responses());
  auto quiet = sc;
  quiet.noise_sd = 0.0;
  const auto c = simulate_dataset(quiet);
  const auto m1 = static_cast<Eigen::Index>(a.data.m1());
  EXPECT_GT((a.data.responses().head(m1) - c.data.responses().head(m1)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_EQ(a.data.responses().tail(a.data.m2()), c.data.responses().tail(c.data.m2()));
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].y, c.test[i].y);
}

TEST(Simulation, MarginalSdOfAnObservation) {
  SimulationScenario sc;
  sc.m1 = 1;
  sc.m2 = 1;
  sc.test_count = 1;
  const auto mean = cos_sin_mean();
  std::vector<double> resid;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    sc.seed = seed;
    const auto sim = simulate_dataset(sc);
    const auto& o = sim.data.observations()[0];
    resid.push_back(o.y - mean(o.x, std::vector<double>{sc.theta1, sc.theta2}) - sc.beta_delta);
  }
  double ss = 0.0;
  for (double r : resid) ss += r * r;
  const double sd = std::sqrt(ss / static_cast<double>(resid.size()));
  const double want = std::sqrt(sc.eta_f + sc.eta_delta + 0.01);
  EXPECT_NEAR(sd, want, 3.0 * want / std::sqrt(2.0 * static_cast<double>(resid.size())));
}

// --- liquid drop model -----------------------------------------------------------

TEST(Ldm, BindingEnergyExamples) {
  const LDMParams p{15.42, 16.91, 22.47, 0.69};
  EXPECT_NEAR(ldm_binding_energy(1, 1, p), 2.0 * 15.42 - 16.91 * std::cbrt(4.0), 1e-12);
  EXPECT_NEAR(ldm_binding_energy(1, 1, p), 3.99704821121774688, 1e-12);
  EXPECT_DOUBLE_EQ(ldm_binding_energy(26, 30, {1.0, 0.0, 0.0, 0.0}), 56.0);
  EXPECT_NEAR(ldm_binding_energy(28, 34, p), 546.30189830796832, 1e-10);
  EXPECT_THROW(ldm_binding_energy(0, 3, p), std::domain_error);
}

TEST(Ldm, LeastSquaresRecoversNoiselessParameters) {
  Rng rng = make_rng(2);
  const LDMParams truth{14.9, 17.3, 23.1, 0.71};
  const auto recs = synthetic_nuclides(200, rng, 0.0, 0.0, truth);
  const auto fit = ls_fit(recs);
  const auto got = fit.params.as_array(), want = truth.as_array();
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(got[k], want[k], 1e-8);
  EXPECT_LT(fit.rmse, 1e-9);
}

TEST(Ldm, DuplicatedRecordsShrinkStandardErrors) {
  Rng rng = make_rng(3);
  auto recs = synthetic_nuclides(300, rng);
  const auto a = ls_fit(recs);
  auto doubled = recs;
  doubled.insert(doubled.end(), recs.begin(), recs.end());
  const auto b = ls_fit(doubled);
  const double n = 300.0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(a.params.as_array()[k], b.params.as_array()[k], 1e-9 * std::abs(a.params.as_array()[k]));
    EXPECT_NEAR(b.se[k] / a.se[k], std::sqrt((n - 4.0) / (2.0 * n - 4.0)), 1e-9);
    EXPECT_NEAR(b.se[k] / a.se[k], 1.0 / std::sqrt(2.0), 0.01);
  }
}

TEST(Ldm, RankDeficiencyNamesColumns) {
  std::vector<NuclideRecord> recs;
  for (int z = 5; z < 15; ++z) recs.push_back({z, 40 - z, 100.0 + z});
  try {
    ls_fit(recs);
    FAIL() << "expected rank error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("a_vol"), std::string::npos) << msg;
    EXPECT_NE(msg.find("a_surf"), std::string::npos) << msg;
  }
  EXPECT_THROW(ls_fit({{2, 2, 1.0}}), std::invalid_argument);
}

TEST(Ldm, NoResidualDegreesOfFreedom) {
  const std::vector<NuclideRecord> recs{{8, 8, 127.6}, {20, 20, 342.0}, {26, 30, 492.3}, {82, 126, 1636.4}};
  const auto fit = ls_fit(recs);
  EXPECT_TRUE(std::isnan(fit.se[0]));
  EXPECT_LT(fit.rmse, 1e-9);
}

TEST(Ldm, DatasetUsesRecordsAndBounds) {
  Rng rng = make_rng(4);
  const std::vector<NuclideRecord> recs{{20, 20, 342.0}, {26, 30, 492.3}};
  const auto bounds = ldm_default_bounds();
  const auto data = build_ldm_dataset(recs, 10, bounds, rng);
  EXPECT_EQ(data.m1(), 2u);
  ASSERT_EQ(data.m2(), 10u);
  for (const auto& r : data.runs()) {
    const bool member = (r.x[0] == 20 && r.x[1] == 20) || (r.x[0] == 26 && r.x[1] == 30);
    EXPECT_TRUE(member);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_GE(r.theta[k], bounds[k].first);
      EXPECT_LE(r.theta[k], bounds[k].second);
    }
    EXPECT_DOUBLE_EQ(r.z, ldm_binding_energy(int(r.x[0]), int(r.x[1]), LDMParams::from(r.theta)));
  }
  EXPECT_EQ(bounds[0], std::make_pair(15.008, 15.829));
  EXPECT_EQ(bounds[3], std::make_pair(0.665, 0.72));
}

TEST(Ldm, PriorsCentredAtLeastSquares) {
  Rng rng = make_rng(5);
  const auto recs = synthetic_nuclides(100, rng);
  const auto fit = ls_fit(recs);
  const LatentLayout lay(ModelSpec::per_dim_lengthscales(2, 4));
  const auto pri = ldm_priors(fit, lay, recs);
  ASSERT_EQ(pri.size(), lay.size());
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(pri[k].kind, Prior::Kind::Normal);
    EXPECT_DOUBLE_EQ(pri[k].mean(), fit.params.as_array()[k]);
    EXPECT_DOUBLE_EQ(pri[k].sd(), 7.5 * fit.se[k]);
  }
  EXPECT_DOUBLE_EQ(pri[lay.sigma()].a, 2.0);
  EXPECT_DOUBLE_EQ(pri[lay.sigma()].b, 1.0);
  EXPECT_DOUBLE_EQ(pri[lay.lf(0)].a, 10.0);
}

// --- I/O ---------------------------------------------------------------------------

TEST(Io, DatasetRoundTripIsLossless) {
  const auto sim = simulate_dataset(SimulationScenario::with_size(30));
  const auto dir = scratch("roundtrip");
  write_dataset(dir / "o.csv", dir / "r.csv", sim.data);
  const auto back = read_dataset(dir / "o.csv", dir / "r.csv");
  EXPECT_EQ(back.responses(), sim.data.responses());
  for (std::size_t j = 0; j < back.m2(); ++j) EXPECT_EQ(back.runs()[j].theta, sim.data.runs()[j].theta);
  write_test_set(dir / "t.csv", sim.test);
  const auto t = read_test_set(dir / "t.csv");
  ASSERT_EQ(t.size(), sim.test.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t[i].x, sim.test[i].x);
    EXPECT_EQ(t[i].y, sim.test[i].y);
  }
  Rng rng = make_rng(6);
  const auto recs = synthetic_nuclides(20, rng);
  write_records(dir / "rec.csv", recs);
  const auto rb = read_records(dir / "rec.csv");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(rb[i].Z, recs[i].Z);
    EXPECT_EQ(rb[i].y, recs[i].y);
  }
}

TEST(Io, MalformedCsvReportsLine) {
  std::istringstream in("x1,y\n0.5,1\n0.7\n");
  try {
    read_csv(in, "obs.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("obs.csv:3"), std::string::npos) << e.what();
  }
  std::istringstream bad("x1,y\n0.5,abc\n");
  EXPECT_THROW(read_csv(bad, "b.csv"), ParseError);
}

TEST(Io, ConfigAndPriors) {
  std::istringstream in("# comment\nmodel.f_mean = cos_sin  # trailing\n\nprior.theta1 = normal 0.5 0.3\nbroken line\n");
  EXPECT_THROW(Config::parse(in, "c.cfg"), ParseError);
  std::istringstream ok("model.f_mean = cos_sin\nprior.eta_f = gamma 4 120\ncalibrate.samples = 20\n");
  const auto c = Config::parse(ok, "c.cfg");
  EXPECT_EQ(c.get("model.f_mean"), "cos_sin");
  EXPECT_EQ(c.count("calibrate.samples", 0), 20u);
  EXPECT_EQ(c.where("prior.eta_f"), "c.cfg:2");
  const auto p = parse_prior(c.get("prior.eta_f"), "x");
  EXPECT_EQ(p.kind, Prior::Kind::Gamma);
  EXPECT_EQ(parse_prior(format_prior(p), "x").b, 120.0);
  EXPECT_THROW(parse_prior("cauchy 0 1", "x"), ParseError);
  EXPECT_THROW(parse_prior("gamma -1 1", "x"), ParseError);
}

TEST(Io, PosteriorAndChainRoundTrip) {
  const LatentLayout lay(SimulationScenario{}.model_spec());
  Vector m(8), s(8);
  m << 0.3, 0.6, 0.04, 1.0, 1.1, 0.05, 0.5, 0.1;
  s << 0.1, 0.1, 0.01, 0.2, 0.2, 0.01, 0.1, 0.02;
  const auto lam = VariationalParams::for_layout(lay, m, s);
  const auto back = posterior_from_json(json::parse(posterior_json(lam, lay).dump()), lay);
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(back.mean(j), lam.mean(j), 1e-12);
    EXPECT_NEAR(back.sd(j), lam.sd(j), 1e-12);
  }
  Chain c;
  c.draws = {m, s};
  c.log_post = {-1.0, -2.0};
  c.iteration = {10, 11};
  c.accepted = {true, false};
  const auto dir = scratch("chain");
  write_csv(dir / "c.csv", chain_table(c, lay));
  const auto cb = chain_from_table(read_csv(dir / "c.csv"), lay);
  ASSERT_EQ(cb.draws.size(), 2u);
  EXPECT_EQ(cb.draws[1], s);
  EXPECT_EQ(cb.iteration[0], 10u);
}

// --- command line ------------------------------------------------------------------

TEST(Cli, UsageErrors) {
  auto r = cli_run({"calibrate", "--no-such-flag"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(cli_run({}).code, 1);
  const auto dir = scratch("usage");
  ASSERT_EQ(cli_run({"simulate", "--n", "20", "--test-count", "3", "--out", dir.string()}).code, 0);
  r = cli_run({"calibrate", "--data", dir.string(), "--trunc", "0"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--trunc"), std::string::npos) << r.err;
  EXPECT_EQ(cli_run({"calibrate", "--data", dir.string(), "--trunc", "20"}).code, 1);
  EXPECT_EQ(cli_run({"calibrate", "--data", dir.string(), "--variant", "fancy"}).code, 1);
  EXPECT_EQ(cli_run({"calibrate", "--data", dir.string(), "--tau", "1"}).code, 1);
}

TEST(Cli, PredictWithoutPosterior) {
  const auto dir = scratch("nopost");
  ASSERT_EQ(cli_run({"simulate", "--n", "20", "--test-count", "3", "--out", dir.string()}).code, 0);
  const auto r = cli_run({"predict", "--data", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no posterior summary found"), std::string::npos) << r.err;
}

TEST(Cli, MalformedInputs) {
  const auto dir = scratch("malformed");
  ASSERT_EQ(cli_run({"simulate", "--n", "20", "--test-count", "3", "--out", dir.string()}).code, 0);
  {
    std::ofstream o(dir / "observations.csv", std::ios::app);
    o << "1.0,2.0\n";
  }
  auto r = cli_run({"calibrate", "--data", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("observations.csv:12"), std::string::npos) << r.err;

  const auto d2 = scratch("badcfg");
  ASSERT_EQ(cli_run({"simulate", "--n", "20", "--test-count", "3", "--out", d2.string()}).code, 0);
  {
    std::ofstream o(d2 / "model.cfg", std::ios::app);
    o << "calibrate.smaples = 3\n";
  }
  r = cli_run({"calibrate", "--data", d2.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model.cfg:"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("calibrate.smaples"), std::string::npos) << r.err;
}

TEST(Cli, SimulateCalibratePredictPipeline) {
  const auto dir = scratch("pipeline");
  ASSERT_EQ(cli_run({"simulate", "--n", "30", "--test-count", "5", "--seed", "3", "--out", dir.string()}).code, 0);
  for (const char* f : {"observations.csv", "runs.csv", "test.csv", "truth.json", "model.cfg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  auto r = cli_run({"calibrate", "--data", dir.string(), "--trunc", "2", "--max-iters", "40", "--samples", "5",
                    "--trace-stride", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = load_json(dir / "metrics.json");
  EXPECT_EQ(metrics["truncation"], 2);  // flag beats the config's 3
  EXPECT_EQ(metrics["iterations"], 40);
  const auto trace = read_csv(dir / "trace.csv");
  EXPECT_EQ(trace.rows.size(), 5u);
  EXPECT_EQ(trace.header.front(), "iteration");

  r = cli_run({"predict", "--data", dir.string(), "--samples", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pm = load_json(dir / "prediction_metrics.json");
  for (const char* k : {"mse", "rmse", "wall_seconds", "iterations"}) EXPECT_TRUE(pm.contains(k)) << k;
  EXPECT_NEAR(pm["rmse"].get<double>(), std::sqrt(pm["mse"].get<double>()), 1e-12);
  const auto preds = read_csv(dir / "predictions.csv");
  EXPECT_EQ(preds.header, (std::vector<std::string>{"x1", "x2", "y_true", "y_pred", "residual"}));
  EXPECT_EQ(preds.rows.size(), 5u);

  // determinism: a second calibration reproduces the posterior exactly
  const auto first = load_json(dir / "posterior.json");
  ASSERT_EQ(cli_run({"calibrate", "--data", dir.string(), "--trunc", "2", "--max-iters", "40", "--samples", "5"}).code, 0);
  EXPECT_EQ(load_json(dir / "posterior.json"), first);

  r = cli_run({"mh", "--data", dir.string(), "--iterations", "300", "--burn-in", "100"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto chain = read_csv(dir / "chain.csv");
  EXPECT_EQ(chain.rows.size(), 200u);
  EXPECT_EQ(chain.header.back(), "accepted");
  r = cli_run({"predict", "--data", dir.string(), "--chain", (dir / "chain.csv").string(), "--out", (dir / "mh").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "mh" / "predictions.csv"));
}

TEST(Cli, AutomaticTruncation) {
  const auto dir = scratch("auto");
  ASSERT_EQ(cli_run({"simulate", "--n", "20", "--test-count", "3", "--out", dir.string()}).code, 0);
  const auto r = cli_run({"calibrate", "--data", dir.string(), "--trunc", "auto", "--trunc-max", "3", "--max-iters", "30",
                          "--samples", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = load_json(dir / "metrics.json");
  EXPECT_GE(m["truncation"].get<int>(), 1);
  EXPECT_LE(m["truncation"].get<int>(), 3);
  EXPECT_TRUE(m.contains("truncation_selection"));
}

TEST(Cli, LiquidDropCommands) {
  const auto dir = scratch("ldm");
  const auto recs = (dir / "records.csv").string();
  ASSERT_EQ(cli_run({"ldm-synth", "--count", "80", "--out", recs}).code, 0);
  auto r = cli_run({"ldm-ls", "--records", recs, "--json", (dir / "ls.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("a_vol"), std::string::npos);
  EXPECT_TRUE(load_json(dir / "ls.json").contains("a_sym"));
  r = cli_run({"ldm-build", "--records", recs, "--runs", "40", "--test-fraction", "0.25", "--out", (dir / "build").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto data = read_dataset(dir / "build" / "observations.csv", dir / "build" / "runs.csv");
  EXPECT_EQ(data.m1(), 60u);
  EXPECT_EQ(data.m2(), 40u);
  EXPECT_EQ(data.theta_dim(), 4u);
  EXPECT_EQ(read_test_set(dir / "build" / "test.csv").size(), 20u);
  r = cli_run({"calibrate", "--data", (dir / "build").string(), "--max-iters", "20", "--samples", "4"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(cli_run({"ldm-build", "--records", recs, "--bounds", "1,2;3"}).code, 1);
  EXPECT_EQ(cli_run({"ldm-ls"}).code, 1);
}
