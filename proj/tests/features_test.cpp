#include "aerosense/features.hpp"

#include <gtest/gtest.h>

#include <random>

#include "aerosense/simulator.hpp"

using namespace aerosense;

namespace {

AirspaceConfig feat_airspace() {
  AirspaceConfig cfg;
  cfg.origin = {36.0, 120.0, 0.0};
  cfg.ap.id = RegionId::AP;
  cfg.ap.footprint = {{-25, -25}, {25, -25}, {25, 25}, {-25, 25}};
  cfg.ap.z_min_km = 0.0;
  cfg.ap.z_max_km = 3.0;
  cfg.ap.center = {0.0, 0.0, 1.0};
  cfg.ar.id = RegionId::AR;
  cfg.ar.footprint = {{-80, -80}, {80, -80}, {80, 80}, {-80, 80}};
  cfg.ar.z_min_km = 3.0;
  cfg.ar.z_max_km = 12.5;
  cfg.ar.center = {0.0, 0.0, 8.0};
  cfg.buffer_km = 100.0;
  cfg.validate();
  return cfg;
}

AdsbMessage make_msg(const AirspaceConfig& cfg, double x, double y, double z, double heading,
                     double v = 400.0) {
  AdsbMessage m;
  m.aircraft_id = "T1";
  m.t_s = 0.0;
  m.pos = from_enu({x, y, z}, cfg.origin);
  m.v_gs_kmh = v;
  m.v_vs_ms = -3.0;
  m.heading_deg = heading;
  m.v_dial_kmh = v;
  m.h_dial_m = 1000.0;
  return m;
}

}  // namespace

TEST(ExtractRaw, MidnightTimeEmbedding) {
  const AirspaceConfig cfg = feat_airspace();
  const StateVector s = extract_raw(make_msg(cfg, 0, 0, 1.0, 0.0), 0.0, cfg);
  EXPECT_NEAR(s.v[14], 0.0, 1e-12);
  EXPECT_NEAR(s.v[15], 1.0, 1e-12);
  EXPECT_NEAR(s.v[16], 0.0, 1e-12);
  EXPECT_NEAR(s.v[17], 1.0, 1e-12);
}

TEST(ExtractRaw, SixAmHourPair) {
  const AirspaceConfig cfg = feat_airspace();
  const StateVector s = extract_raw(make_msg(cfg, 0, 0, 1.0, 0.0), 6.0 * 3600.0, cfg);
  EXPECT_NEAR(s.v[14], 1.0, 1e-12);
  EXPECT_NEAR(s.v[15], 0.0, 1e-12);
}

TEST(ExtractRaw, InsideApHeadingAtCenter) {
  const AirspaceConfig cfg = feat_airspace();
  // inside AP, south of center, flying due north straight at it
  const StateVector s = extract_raw(make_msg(cfg, 0.0, -10.0, 1.0, 0.0), 3600.0, cfg);
  EXPECT_DOUBLE_EQ(s.v[12], 1.0);      // I_AP
  EXPECT_NEAR(s.v[10], 1.0, 1e-6);     // alpha_AP
}

TEST(ExtractRaw, CyclicalPairsAreUnitNorm) {
  const AirspaceConfig cfg = feat_airspace();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ut(0.0, 86400.0 * 3.0);
  for (int i = 0; i < 100; ++i) {
    const StateVector s = extract_raw(make_msg(cfg, 5, 5, 1.0, 90.0), ut(rng), cfg);
    EXPECT_NEAR(s.v[14] * s.v[14] + s.v[15] * s.v[15], 1.0, 1e-9);
    EXPECT_NEAR(s.v[16] * s.v[16] + s.v[17] * s.v[17], 1.0, 1e-9);
  }
}

TEST(ExtractRaw, ContinuousAcrossMidnight) {
  const AirspaceConfig cfg = feat_airspace();
  const AdsbMessage m = make_msg(cfg, 5, 5, 1.0, 90.0);
  const StateVector before = extract_raw(m, 86399.0, cfg);  // 23:59:59
  const StateVector after = extract_raw(m, 86400.0, cfg);   // 00:00:00
  for (int c = 14; c < 18; ++c) EXPECT_LT(std::abs(before.v[c] - after.v[c]), 0.01) << c;
}

TEST(ExtractRaw, VelocityVectorFollowsHeading) {
  const AirspaceConfig cfg = feat_airspace();
  // due-east flight toward a center due east: converging on AP
  const StateVector s = extract_raw(make_msg(cfg, -40.0, 0.0, 1.0, 90.0), 0.0, cfg);
  EXPECT_NEAR(s.v[10], 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(s.v[12], 0.0);  // outside the AP footprint at 40 km
}

TEST(ExtractRaw, ComponentRangeInvariants) {
  const AirspaceConfig cfg = feat_airspace();
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> ux(-250.0, 250.0), uz(0.0, 14.0), uh(0.0, 359.9),
      uv(0.0, 900.0), ut(0.0, 86400.0 * 2.0);
  for (int i = 0; i < 300; ++i) {
    AdsbMessage m = make_msg(cfg, ux(rng), ux(rng), uz(rng), uh(rng), uv(rng));
    const StateVector s = extract_raw(m, ut(rng), cfg);
    for (double v : s.v) EXPECT_TRUE(std::isfinite(v));
    EXPECT_TRUE(s.v[12] == 0.0 || s.v[12] == 1.0);  // inclusion indicators
    EXPECT_TRUE(s.v[13] == 0.0 || s.v[13] == 1.0);
    EXPECT_GE(s.v[8], 0.0);  // boundary distances are unsigned
    EXPECT_GE(s.v[9], 0.0);
    for (int c : {10, 11}) {  // approach factors are cosines
      EXPECT_GE(s.v[c], -1.0);
      EXPECT_LE(s.v[c], 1.0);
    }
    for (int c = 14; c < 18; ++c) {
      EXPECT_GE(s.v[c], -1.0);
      EXPECT_LE(s.v[c], 1.0);
    }
  }
}

TEST(FitNormStats, ZeroVarianceFloor) {
  const AirspaceConfig cfg = feat_airspace();
  std::vector<LabeledSample> train(3);
  for (auto& s : train) {
    s.snapshot.t_s = 100.0;
    s.snapshot.aircraft = {make_msg(cfg, 5, 5, 1.0, 90.0)};
  }
  const NormStats st = fit_norm_stats(train, cfg);
  for (int c = 0; c < kNormalizedDim; ++c) EXPECT_DOUBLE_EQ(st.stddev[c], 1e-6);
  const StateVector raw = extract_raw(train[0].snapshot.aircraft[0], 100.0, cfg);
  const StateVector n = normalize(raw, st);
  // the 1e-6 floor amplifies mean round-off, so "zero" is up to ~1e-8 here
  for (int c = 0; c < kNormalizedDim; ++c) EXPECT_NEAR(n.v[c], 0.0, 1e-6);
}

TEST(FitNormStats, PopulationConvention) {
  const AirspaceConfig cfg = feat_airspace();
  // two states whose v_gs values are 0 and 2 -> mean 1, population std 1
  std::vector<LabeledSample> train(1);
  train[0].snapshot.t_s = 50.0;
  train[0].snapshot.aircraft = {make_msg(cfg, 5, 5, 1.0, 90.0, 0.0),
                                make_msg(cfg, 6, 5, 1.0, 90.0, 2.0)};
  const NormStats st = fit_norm_stats(train, cfg);
  EXPECT_DOUBLE_EQ(st.mean[3], 1.0);
  EXPECT_DOUBLE_EQ(st.stddev[3], 1.0);
}

TEST(FitNormStats, RejectsEmpty) {
  const AirspaceConfig cfg = feat_airspace();
  std::vector<LabeledSample> train(2);  // snapshots with no aircraft
  EXPECT_THROW(fit_norm_stats(train, cfg), DataError);
}

TEST(FitNormStats, MatchesTwoPassOracle) {
  // simulator-derived dataset vs an independent two-pass mean/variance
  AirspaceConfig cfg = feat_airspace();
  SimConfig sim;
  sim.seed = 9;
  sim.duration_s = 3.0 * 3600.0;
  sim.hourly_rate.assign(24, 10.0);
  const auto msgs = generate_traffic(sim, cfg);
  const auto grid = default_t_grid(0.0, sim.duration_s, 120.0, 0.0);
  const auto samples = make_dataset(msgs, grid, 0.0, 8.0, cfg, 0.0, sim.duration_s);

  const NormStats st = fit_norm_stats(samples, cfg);

  std::vector<std::array<double, kNormalizedDim>> rows;
  for (const auto& s : samples)
    for (const auto& m : s.snapshot.aircraft) {
      const StateVector raw = extract_raw(m, s.snapshot.t_s, cfg);
      std::array<double, kNormalizedDim> r{};
      std::copy_n(raw.v.begin(), kNormalizedDim, r.begin());
      rows.push_back(r);
    }
  ASSERT_GE(rows.size(), 2u);
  for (int c = 0; c < kNormalizedDim; ++c) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[static_cast<std::size_t>(c)];
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows)
      var += (r[static_cast<std::size_t>(c)] - mean) * (r[static_cast<std::size_t>(c)] - mean);
    var /= static_cast<double>(rows.size());
    EXPECT_NEAR(st.mean[c], mean, 1e-9 * std::max(1.0, std::abs(mean)));
    EXPECT_NEAR(st.stddev[c], std::max(std::sqrt(var), 1e-6),
                1e-9 * std::max(1.0, st.stddev[c]));
  }
}

TEST(Normalize, MeanMapsToZeroAndUnitsScale) {
  NormStats st;
  st.mean.fill(10.0);
  st.stddev.fill(2.0);
  StateVector v;
  v.v.fill(14.0);
  const StateVector n = normalize(v, st);
  for (int c = 0; c < kNormalizedDim; ++c) EXPECT_DOUBLE_EQ(n.v[c], 2.0);
  // a value equal to its mean normalizes to zero
  v.v[0] = 10.0;
  EXPECT_DOUBLE_EQ(normalize(v, st).v[0], 0.0);
}

TEST(Normalize, PassThroughGroupsBitIdentical) {
  NormStats st;
  st.mean.fill(3.0);
  st.stddev.fill(7.0);
  StateVector v;
  for (int c = 0; c < kStateDim; ++c) v.v[c] = 0.123456789 * (c + 1);
  const StateVector n = normalize(v, st);
  for (int c = kNormalizedDim; c < kStateDim; ++c) EXPECT_EQ(n.v[c], v.v[c]);
}

TEST(Normalize, DoubleApplicationShifts) {
  // applying the same stats twice is not idempotent; pipelines must
  // normalize exactly once
  NormStats st;
  st.mean.fill(1.0);
  st.stddev.fill(2.0);
  StateVector v;
  v.v.fill(5.0);
  const StateVector once = normalize(v, st);
  const StateVector twice = normalize(once, st);
  EXPECT_NE(once.v[0], twice.v[0]);
}

TEST(FeatureGroups, WidthsMatchGroupSizes) {
  FeatureGroups g;
  EXPECT_EQ(g.d_in(), 18);
  g.f_b = false;
  EXPECT_EQ(g.d_in(), 12);
  g = FeatureGroups{};
  g.f_l = false;
  EXPECT_EQ(g.d_in(), 15);
  g = FeatureGroups{};
  g.f_k = false;
  EXPECT_EQ(g.d_in(), 15);
  g = FeatureGroups{};
  g.f_t = false;
  EXPECT_EQ(g.d_in(), 14);
  g = FeatureGroups{};
  g.f_c = false;
  EXPECT_EQ(g.d_in(), 16);
}

TEST(FeatureGroups, SelectionKeepsOrder) {
  StateVector v;
  for (int c = 0; c < kStateDim; ++c) v.v[c] = c;
  FeatureGroups g;
  g.f_k = false;  // drop components 3..5
  std::vector<double> out(static_cast<std::size_t>(g.d_in()));
  g.select(v, out.data());
  const std::vector<double> want = {0, 1, 2, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17};
  EXPECT_EQ(out, want);
}

TEST(Featurize, ShapesAndLabels) {
  const AirspaceConfig cfg = feat_airspace();
  LabeledSample s;
  s.snapshot.t_s = 7200.0;
  s.snapshot.aircraft = {make_msg(cfg, 5, 5, 1.0, 90.0), make_msg(cfg, 40, 0, 8.0, 180.0)};
  s.y_ap = 1;
  s.y_ar = 1;
  NormStats st;
  st.mean.fill(0.0);
  st.stddev.fill(1.0);
  const SampleFeatures f = featurize(s, st, FeatureGroups{}, cfg);
  EXPECT_EQ(f.count, 2);
  EXPECT_EQ(f.x.size(), 2u * 18u);
  EXPECT_DOUBLE_EQ(f.y_ap, 1.0);
  EXPECT_DOUBLE_EQ(f.y_ar, 1.0);
  EXPECT_DOUBLE_EQ(f.t_s, 7200.0);
}
