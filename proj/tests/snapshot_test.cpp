#include "aerosense/snapshot.hpp"

#include <gtest/gtest.h>

#include <random>
#include <unordered_map>

#include "aerosense/simulator.hpp"

using namespace aerosense;

namespace {

AirspaceConfig snap_airspace() {
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

AdsbMessage msg_at(const AirspaceConfig& cfg, const std::string& id, double t, double x_km,
                   double y_km, double z_km) {
  AdsbMessage m;
  m.aircraft_id = id;
  m.t_s = t;
  m.pos = from_enu({x_km, y_km, z_km}, cfg.origin);
  m.v_gs_kmh = 400.0;
  m.v_vs_ms = 0.0;
  m.heading_deg = 90.0;
  m.v_dial_kmh = 400.0;
  m.h_dial_m = z_km * 1000.0;
  return m;
}

void sort_by_time(std::vector<AdsbMessage>& ms) {
  std::stable_sort(ms.begin(), ms.end(),
                   [](const AdsbMessage& a, const AdsbMessage& b) { return a.t_s < b.t_s; });
}

// Brute-force reference: scan all messages, group by id, keep the in-window
// in-scope report with the largest timestamp (later input order wins ties).
std::vector<AdsbMessage> oracle_snapshot(const std::vector<AdsbMessage>& messages, double t,
                                         double delta, const AirspaceConfig& cfg) {
  std::unordered_map<std::string, AdsbMessage> best;
  for (const AdsbMessage& m : messages) {
    if (!(m.t_s >= t - delta && m.t_s <= t)) continue;
    if (!m.valid()) continue;
    if (!in_scope(to_enu(m.pos, cfg.origin), cfg)) continue;
    auto it = best.find(m.aircraft_id);
    if (it == best.end() || m.t_s >= it->second.t_s) best[m.aircraft_id] = m;
  }
  std::vector<AdsbMessage> out;
  for (auto& [id, m] : best) out.push_back(m);
  std::sort(out.begin(), out.end(),
            [](const AdsbMessage& a, const AdsbMessage& b) { return a.aircraft_id < b.aircraft_id; });
  return out;
}

}  // namespace

TEST(BuildSnapshot, RetainsMostRecentInWindow) {
  const AirspaceConfig cfg = snap_airspace();
  const double t = 100.0;
  std::vector<AdsbMessage> ms = {msg_at(cfg, "A1", t - 10.0, 0, 0, 8.0),
                                 msg_at(cfg, "A1", t - 6.0, 1, 0, 8.0),
                                 msg_at(cfg, "A1", t - 2.0, 2, 0, 8.0)};
  const Snapshot s = build_snapshot(ms, t, 8.0, cfg);
  ASSERT_EQ(s.count(), 1u);
  EXPECT_DOUBLE_EQ(s.aircraft[0].t_s, t - 2.0);
}

TEST(BuildSnapshot, OutOfScopeExcluded) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms = {msg_at(cfg, "A1", 98.0, 500.0, 0.0, 8.0)};  // far outside
  const Snapshot s = build_snapshot(ms, 100.0, 8.0, cfg);
  EXPECT_EQ(s.count(), 0u);
}

TEST(BuildSnapshot, EmptyWindow) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms = {msg_at(cfg, "A1", 10.0, 0, 0, 8.0)};
  EXPECT_EQ(build_snapshot(ms, 100.0, 8.0, cfg).count(), 0u);
  EXPECT_EQ(build_snapshot({}, 100.0, 8.0, cfg).count(), 0u);
}

TEST(BuildSnapshot, TieBrokenByInputOrder) {
  const AirspaceConfig cfg = snap_airspace();
  AdsbMessage first = msg_at(cfg, "A1", 99.0, 0, 0, 8.0);
  AdsbMessage second = msg_at(cfg, "A1", 99.0, 10, 10, 8.0);
  const std::vector<AdsbMessage> ms = {first, second};
  const Snapshot s = build_snapshot(ms, 100.0, 8.0, cfg);
  ASSERT_EQ(s.count(), 1u);
  EXPECT_DOUBLE_EQ(s.aircraft[0].pos.lat_deg, second.pos.lat_deg);  // later input wins
}

TEST(BuildSnapshot, InvalidMessagesSkippedBeforeWindowing) {
  const AirspaceConfig cfg = snap_airspace();
  AdsbMessage bad = msg_at(cfg, "A1", 99.0, 0, 0, 8.0);
  bad.v_gs_kmh = -1.0;  // violates the type invariant
  AdsbMessage good = msg_at(cfg, "A1", 95.0, 1, 1, 8.0);
  const std::vector<AdsbMessage> ms = {good, bad};
  const Snapshot s = build_snapshot(ms, 100.0, 8.0, cfg);
  ASSERT_EQ(s.count(), 1u);
  EXPECT_DOUBLE_EQ(s.aircraft[0].t_s, 95.0);
}

TEST(BuildSnapshot, PermutationInvariantForDistinctTimestamps) {
  const AirspaceConfig cfg = snap_airspace();
  std::mt19937_64 rng(5);
  std::vector<AdsbMessage> ms;
  for (int a = 0; a < 8; ++a)
    for (int k = 0; k < 5; ++k)
      ms.push_back(msg_at(cfg, "A" + std::to_string(a), 92.0 + k * 1.37 + a * 0.11,
                          (a - 4) * 10.0, 0.0, 8.0));
  sort_by_time(ms);
  const Snapshot base = build_snapshot(ms, 100.0, 8.0, cfg);

  std::vector<AdsbMessage> shuffled = ms;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  sort_by_time(shuffled);  // the builder consumes time-ordered streams
  const Snapshot again = build_snapshot(shuffled, 100.0, 8.0, cfg);

  ASSERT_EQ(base.count(), again.count());
  for (std::size_t i = 0; i < base.count(); ++i) {
    EXPECT_EQ(base.aircraft[i].aircraft_id, again.aircraft[i].aircraft_id);
    EXPECT_DOUBLE_EQ(base.aircraft[i].t_s, again.aircraft[i].t_s);
  }
}

TEST(BuildSnapshot, MatchesBruteForceOracleOnRandomStreams) {
  const AirspaceConfig cfg = snap_airspace();
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> ut(0.0, 200.0), ux(-300.0, 300.0), uz(0.0, 15.0);
  std::uniform_int_distribution<int> uid(0, 9), un(0, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<AdsbMessage> ms;
    const int n = un(rng);
    for (int i = 0; i < n; ++i)
      ms.push_back(msg_at(cfg, "A" + std::to_string(uid(rng)), ut(rng), ux(rng), ux(rng), uz(rng)));
    sort_by_time(ms);
    const double t = ut(rng);
    const double delta = 1.0 + 10.0 * std::generate_canonical<double, 53>(rng);

    const Snapshot got = build_snapshot(ms, t, delta, cfg);
    const auto want = oracle_snapshot(ms, t, delta, cfg);
    ASSERT_EQ(got.count(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_EQ(got.aircraft[i].aircraft_id, want[i].aircraft_id);
      EXPECT_DOUBLE_EQ(got.aircraft[i].t_s, want[i].t_s);
      EXPECT_DOUBLE_EQ(got.aircraft[i].pos.lat_deg, want[i].pos.lat_deg);
    }
  }
}

TEST(CountLabels, EmptySnapshot) {
  const AirspaceConfig cfg = snap_airspace();
  Snapshot s;
  const auto [ap, ar] = count_labels(s, cfg);
  EXPECT_EQ(ap, 0);
  EXPECT_EQ(ar, 0);
}

TEST(CountLabels, MixedOccupancy) {
  const AirspaceConfig cfg = snap_airspace();
  Snapshot s;
  s.t_s = 100.0;
  // 3 aircraft in AR, 1 in AP, 2 in the buffer only
  s.aircraft = {msg_at(cfg, "R1", 99, 0, 0, 8.0),    msg_at(cfg, "R2", 99, 40, 0, 5.0),
                msg_at(cfg, "R3", 99, -70, 70, 10.0), msg_at(cfg, "P1", 99, 5, 5, 1.0),
                msg_at(cfg, "B1", 99, 120, 0, 8.0),   msg_at(cfg, "B2", 99, 0, -30, 2.0)};
  // independent brute-force check of the constructed scenario
  int want_ap = 0, want_ar = 0;
  for (const auto& m : s.aircraft) {
    const EnuPoint p = to_enu(m.pos, cfg.origin);
    want_ap += contains(cfg.ap, p) ? 1 : 0;
    want_ar += contains(cfg.ar, p) ? 1 : 0;
  }
  ASSERT_EQ(want_ap, 1);
  ASSERT_EQ(want_ar, 3);
  const auto [ap, ar] = count_labels(s, cfg);
  EXPECT_EQ(ap, 1);
  EXPECT_EQ(ar, 3);
}

TEST(CountLabels, BufferOnlyCountsNothing) {
  const AirspaceConfig cfg = snap_airspace();
  Snapshot s;
  s.aircraft = {msg_at(cfg, "B1", 99, 120, 0, 8.0), msg_at(cfg, "B2", 99, -130, 0, 6.0)};
  const auto [ap, ar] = count_labels(s, cfg);
  EXPECT_EQ(ap, 0);
  EXPECT_EQ(ar, 0);
}

TEST(MakeDataset, StationaryAircraftLabels) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms;
  for (double t = 0.0; t <= 1000.0; t += 4.0) ms.push_back(msg_at(cfg, "A1", t, 40, 0, 8.0));
  const std::vector<double> grid = {50.0};
  const auto ds = make_dataset(ms, grid, 900.0, 8.0, cfg, 0.0, 1000.0);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].y_ar, 1);
  EXPECT_EQ(ds[0].y_ap, 0);
  EXPECT_EQ(ds[0].snapshot.count(), 1u);
}

TEST(MakeDataset, ZeroHorizonLabelsEqualInputCounts) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms;
  for (double t = 0.0; t <= 200.0; t += 4.0) {
    ms.push_back(msg_at(cfg, "A1", t, 10, 0, 1.0));  // in AP
    ms.push_back(msg_at(cfg, "A2", t, 40, 0, 8.0));  // in AR
  }
  sort_by_time(ms);
  const std::vector<double> grid = {100.0};
  const auto ds = make_dataset(ms, grid, 0.0, 8.0, cfg, 0.0, 200.0);
  ASSERT_EQ(ds.size(), 1u);
  const auto [ap, ar] = count_labels(ds[0].snapshot, cfg);
  EXPECT_EQ(ds[0].y_ap, ap);
  EXPECT_EQ(ds[0].y_ar, ar);
}

TEST(MakeDataset, OneSamplePerQueryTime) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms;
  for (double t = 0.0; t <= 4000.0; t += 4.0) ms.push_back(msg_at(cfg, "A1", t, 40, 0, 8.0));
  const auto grid = default_t_grid(0.0, 4000.0, 60.0, 900.0);
  const auto ds = make_dataset(ms, grid, 900.0, 8.0, cfg, 0.0, 4000.0);
  EXPECT_EQ(ds.size(), grid.size());
}

TEST(MakeDataset, RejectsQueriesBeyondCoverage) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms = {msg_at(cfg, "A1", 0.0, 40, 0, 8.0)};
  const std::vector<double> grid = {200.0};
  EXPECT_THROW(make_dataset(ms, grid, 900.0, 8.0, cfg, 0.0, 1000.0), DataError);
}

TEST(MakeDataset, RejectsUnsortedStream) {
  const AirspaceConfig cfg = snap_airspace();
  std::vector<AdsbMessage> ms = {msg_at(cfg, "A1", 50.0, 40, 0, 8.0),
                                 msg_at(cfg, "A1", 10.0, 40, 0, 8.0)};
  const std::vector<double> grid = {100.0};
  EXPECT_THROW(make_dataset(ms, grid, 900.0, 8.0, cfg, 0.0, 2000.0), DataError);
}

namespace {
std::vector<LabeledSample> dummy_samples(std::size_t n) {
  std::vector<LabeledSample> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].snapshot.t_s = static_cast<double>(i);
  return out;
}
}  // namespace

TEST(ChronologicalSplit, HundredSamples) {
  const auto v = chronological_split(dummy_samples(100));
  EXPECT_EQ(v.train.size(), 80u);
  EXPECT_EQ(v.val.size(), 10u);
  EXPECT_EQ(v.test.size(), 10u);
}

TEST(ChronologicalSplit, PaperScaleArithmetic) {
  // 224,904 samples: floors give 179,923 / 22,490 and the remainder (22,491)
  // goes to test.
  const auto s = split_sizes(224904);
  EXPECT_EQ(s[0], 179923u);
  EXPECT_EQ(s[1], 22490u);
  EXPECT_EQ(s[2], 22491u);
}

TEST(ChronologicalSplit, TinyRemainder) {
  const auto v = chronological_split(dummy_samples(3));
  EXPECT_EQ(v.train.size(), 2u);
  EXPECT_EQ(v.val.size(), 0u);
  EXPECT_EQ(v.test.size(), 1u);
}

TEST(ChronologicalSplit, FloorArithmeticForRandomSizes) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> un(1, 500000);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = un(rng);
    const auto s = split_sizes(n);
    EXPECT_EQ(s[0], static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n))));
    EXPECT_EQ(s[1], static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(n))));
    EXPECT_EQ(s[0] + s[1] + s[2], n);
  }
}

TEST(ChronologicalSplit, StrictChronology) {
  const auto v = chronological_split(dummy_samples(57));
  ASSERT_FALSE(v.train.empty());
  ASSERT_FALSE(v.val.empty());
  ASSERT_FALSE(v.test.empty());
  EXPECT_LT(v.train.back().snapshot.t_s, v.val.front().snapshot.t_s);
  EXPECT_LT(v.val.back().snapshot.t_s, v.test.front().snapshot.t_s);
}

TEST(ChronologicalSplit, RejectsUnsorted) {
  auto s = dummy_samples(10);
  std::swap(s[2], s[7]);
  EXPECT_THROW(chronological_split(std::move(s)), DataError);
}

TEST(SnapshotProperty, MissingFractionBoundedByDropSquared) {
  // an aircraft continuously in scope, reporting every 4 s with p = 0.3
  // drops: with delta = 8 s a miss needs >= 2 consecutive drops, so the
  // missing fraction stays within p^2 + 0.01.
  const AirspaceConfig cfg = snap_airspace();
  const double p = 0.3;
  std::mt19937_64 rng(2024);
  std::bernoulli_distribution drop(p);
  std::vector<AdsbMessage> ms;
  const double horizon = 400000.0;
  for (double t = 0.0; t <= horizon; t += 4.0)
    if (!drop(rng)) ms.push_back(msg_at(cfg, "A1", t, 40, 0, 8.0));

  std::size_t missing = 0, total = 0;
  for (double t = 100.0; t <= horizon; t += 10.0) {
    ++total;
    if (build_snapshot(ms, t, 8.0, cfg).count() == 0) ++missing;
  }
  const double fraction = static_cast<double>(missing) / static_cast<double>(total);
  EXPECT_LE(fraction, p * p + 0.01);
}
