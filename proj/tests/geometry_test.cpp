#include "aerosense/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace aerosense;

namespace {

Region square_region(double half, double z0, double z1, RegionId id = RegionId::AP) {
  Region r;
  r.id = id;
  r.footprint = {{-half, -half}, {half, -half}, {half, half}, {-half, half}};
  r.z_min_km = z0;
  r.z_max_km = z1;
  r.center = {0.0, 0.0, (z0 + z1) / 2.0};
  return r;
}

// Sampling oracle for the prism boundary surface: coarse pass over every wall
// and both caps, then a dense refinement around the argmin. Pure sampling —
// independent of the implementation's case analysis.
double sampled_boundary_distance(const Region& r, const EnuPoint& p) {
  const std::size_t n = r.footprint.size();
  double best = std::numeric_limits<double>::infinity();
  double best_refine[7] = {0};  // kind(0=wall,1=cap), edge/capz, s, z
  auto consider = [&](double x, double y, double z, int kind, std::size_t idx, double s, double z_or_y) {
    const double d = std::sqrt((p.x_km - x) * (p.x_km - x) + (p.y_km - y) * (p.y_km - y) +
                               (p.z_km - z) * (p.z_km - z));
    if (d < best) {
      best = d;
      best_refine[0] = kind;
      best_refine[1] = static_cast<double>(idx);
      best_refine[2] = s;
      best_refine[3] = z_or_y;
    }
  };

  const int kCoarse = 160;
  for (std::size_t e = 0; e < n; ++e) {
    const auto& a = r.footprint[e];
    const auto& b = r.footprint[(e + 1) % n];
    for (int i = 0; i <= kCoarse; ++i) {
      const double s = static_cast<double>(i) / kCoarse;
      const double x = a[0] + s * (b[0] - a[0]);
      const double y = a[1] + s * (b[1] - a[1]);
      for (int j = 0; j <= kCoarse; ++j) {
        const double z = r.z_min_km + (r.z_max_km - r.z_min_km) * j / kCoarse;
        consider(x, y, z, 0, e, s, z);
      }
    }
  }
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& v : r.footprint) {
    xmin = std::min(xmin, v[0]);
    xmax = std::max(xmax, v[0]);
    ymin = std::min(ymin, v[1]);
    ymax = std::max(ymax, v[1]);
  }
  for (int cap = 0; cap < 2; ++cap) {
    const double z = cap == 0 ? r.z_min_km : r.z_max_km;
    for (int i = 0; i <= kCoarse; ++i)
      for (int j = 0; j <= kCoarse; ++j) {
        const double x = xmin + (xmax - xmin) * i / kCoarse;
        const double y = ymin + (ymax - ymin) * j / kCoarse;
        if (!detail::point_in_convex(r.footprint, x, y)) continue;
        consider(x, y, z, 1, static_cast<std::size_t>(cap), x, y);
      }
  }

  // refinement pass around the coarse argmin
  const int kFine = 400;
  if (best_refine[0] == 0) {
    const std::size_t e = static_cast<std::size_t>(best_refine[1]);
    const auto& a = r.footprint[e];
    const auto& b = r.footprint[(e + 1) % n];
    const double s0 = best_refine[2], z0 = best_refine[3];
    const double ds = 1.5 / kCoarse;
    const double dz = 1.5 * (r.z_max_km - r.z_min_km) / kCoarse;
    for (int i = 0; i <= kFine; ++i)
      for (int j = 0; j <= kFine; ++j) {
        const double s = std::clamp(s0 - ds + 2.0 * ds * i / kFine, 0.0, 1.0);
        const double z = std::clamp(z0 - dz + 2.0 * dz * j / kFine, r.z_min_km, r.z_max_km);
        consider(a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), z, 0, e, s, z);
      }
  } else {
    const double z = best_refine[1] == 0 ? r.z_min_km : r.z_max_km;
    const double x0 = best_refine[2], y0 = best_refine[3];
    const double dx = 1.5 * (xmax - xmin) / kCoarse;
    const double dy = 1.5 * (ymax - ymin) / kCoarse;
    for (int i = 0; i <= kFine; ++i)
      for (int j = 0; j <= kFine; ++j) {
        const double x = x0 - dx + 2.0 * dx * i / kFine;
        const double y = y0 - dy + 2.0 * dy * j / kFine;
        if (!detail::point_in_convex(r.footprint, x, y)) continue;
        consider(x, y, z, 1, 0, x, y);
      }
  }
  return best;
}

AirspaceConfig test_airspace() {
  AirspaceConfig cfg;
  cfg.origin = {36.0, 120.0, 0.0};
  cfg.ap = square_region(10.0, 0.0, 5.0, RegionId::AP);
  cfg.ar = square_region(60.0, 5.0, 12.0, RegionId::AR);
  cfg.ar.center = {0.0, 0.0, 8.0};
  cfg.buffer_km = 100.0;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST(ToEnu, OriginMapsToZero) {
  const GeoPoint origin{36.0, 120.0, 0.0};
  const GeoPoint p{36.0, 120.0, 4200.0};
  const EnuPoint e = to_enu(p, origin);
  EXPECT_DOUBLE_EQ(e.x_km, 0.0);
  EXPECT_DOUBLE_EQ(e.y_km, 0.0);
  EXPECT_DOUBLE_EQ(e.z_km, 4.2);
}

TEST(ToEnu, OneDegreeLatitude) {
  const GeoPoint origin{36.0, 120.0, 0.0};
  const EnuPoint e = to_enu({37.0, 120.0, 0.0}, origin);
  EXPECT_DOUBLE_EQ(e.y_km, 110.574);
  EXPECT_DOUBLE_EQ(e.x_km, 0.0);
}

TEST(ToEnu, LongitudeScaleAtSixtyDegrees) {
  const GeoPoint origin{60.0, 10.0, 0.0};
  const EnuPoint e = to_enu({60.0, 11.0, 0.0}, origin);
  // 111.320 * cos(60 deg) = 55.660, evaluated independently
  EXPECT_NEAR(e.x_km, 55.660, 1e-9);
}

TEST(ToEnu, InverseRecoversWithinTolerance) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dlat(-2.0, 2.0), dlon(-2.0, 2.0), dalt(0.0, 12000.0);
  const GeoPoint origin{36.0, 120.0, 0.0};
  for (int i = 0; i < 200; ++i) {
    const GeoPoint p{36.0 + dlat(rng), 120.0 + dlon(rng), dalt(rng)};
    const GeoPoint q = from_enu(to_enu(p, origin), origin);
    EXPECT_NEAR(q.lat_deg, p.lat_deg, 1e-9);
    EXPECT_NEAR(q.lon_deg, p.lon_deg, 1e-9);
    EXPECT_NEAR(q.alt_m, p.alt_m, 1e-6);
  }
}

TEST(Contains, CenterInside) {
  const Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_TRUE(contains(r, r.center));
}

TEST(Contains, AltitudeBandExclusion) {
  const Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_FALSE(contains(r, {0.0, 0.0, 5.001}));
}

TEST(Contains, PointOnEdgeCountsAsInside) {
  const Region r = square_region(10.0, 0.0, 5.0);
  // exact midpoint of the east edge at band mid-altitude; ray-casting oracle
  // for an axis-aligned square agrees that this boundary point is inside.
  EXPECT_TRUE(contains(r, {10.0, 0.0, 2.5}));
}

TEST(BoundaryDistance, InteriorNearestCap) {
  const Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_NEAR(boundary_distance(r, {0.0, 0.0, 2.5}), 2.5, 1e-12);
  EXPECT_NEAR(sampled_boundary_distance(r, {0.0, 0.0, 2.5}), 2.5, 1e-3);
}

TEST(BoundaryDistance, OnLateralWallIsZero) {
  const Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_DOUBLE_EQ(boundary_distance(r, {10.0, 3.0, 2.0}), 0.0);
}

TEST(BoundaryDistance, OutsideLateral) {
  Region r;
  r.id = RegionId::AP;
  r.footprint = {{0.0, 0.0}, {10.0, 0.0}, {10.0, 10.0}, {0.0, 10.0}};
  r.z_min_km = 0.0;
  r.z_max_km = 5.0;
  r.center = {5.0, 5.0, 2.5};
  EXPECT_NEAR(boundary_distance(r, {15.0, 5.0, 2.5}), 5.0, 1e-12);
  EXPECT_NEAR(sampled_boundary_distance(r, {15.0, 5.0, 2.5}), 5.0, 1e-3);
}

TEST(BoundaryDistance, MatchesSamplingOracleOnRandomPolygons) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    // convex polygon: sorted random angles on a random-radius circle
    const int k = 4 + static_cast<int>(u01(rng) * 4);
    std::vector<double> angles;
    for (int i = 0; i < k; ++i) angles.push_back(2.0 * std::numbers::pi * u01(rng));
    std::sort(angles.begin(), angles.end());
    const double rad = 5.0 + 20.0 * u01(rng);
    Region r;
    r.footprint.clear();
    for (double a : angles) r.footprint.push_back({rad * std::cos(a), rad * std::sin(a)});
    if (std::abs(detail::polygon_area2(r.footprint)) < 1.0) continue;  // degenerate draw
    r.z_min_km = u01(rng) * 2.0;
    r.z_max_km = r.z_min_km + 2.0 + 4.0 * u01(rng);
    r.center = {0.0, 0.0, (r.z_min_km + r.z_max_km) / 2.0};
    if (!detail::point_in_convex(r.footprint, 0.0, 0.0)) continue;

    for (int q = 0; q < 4; ++q) {
      const EnuPoint p{(u01(rng) - 0.5) * 3.0 * rad, (u01(rng) - 0.5) * 3.0 * rad,
                       u01(rng) * (r.z_max_km + 3.0)};
      const double got = boundary_distance(r, p);
      const double want = sampled_boundary_distance(r, p);
      EXPECT_NEAR(got, want, 1e-3) << "trial " << trial << " query " << q;
      EXPECT_LE(got, want + 1e-12);  // sampling can only overestimate
    }
  }
}

TEST(ApproachFactor, TowardCenter) {
  const Region r = square_region(10.0, 0.0, 5.0);
  const EnuPoint p{-20.0, 0.0, 2.0};
  const double a = approach_factor(p, {500.0, 0.0}, r);  // due east, straight at center
  EXPECT_NEAR(a, 1.0, 1e-6);
}

TEST(ApproachFactor, AwayFromCenter) {
  const Region r = square_region(10.0, 0.0, 5.0);
  const double a = approach_factor({-20.0, 0.0, 2.0}, {-500.0, 0.0}, r);
  EXPECT_NEAR(a, -1.0, 1e-6);
}

TEST(ApproachFactor, Perpendicular) {
  const Region r = square_region(10.0, 0.0, 5.0);
  const double a = approach_factor({-20.0, 0.0, 2.0}, {0.0, 300.0}, r);
  EXPECT_NEAR(a, 0.0, 1e-12);
}

TEST(ApproachFactor, ZeroVelocityReturnsZero) {
  const Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_DOUBLE_EQ(approach_factor({-20.0, 0.0, 2.0}, {0.0, 0.0}, r), 0.0);
  // both norms zero: aircraft exactly at the center, no velocity
  EXPECT_DOUBLE_EQ(approach_factor(r.center, {0.0, 0.0}, r), 0.0);
}

TEST(ApproachFactor, InvariantUnderPositiveScaling) {
  const Region r = square_region(10.0, 0.0, 5.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-400.0, 400.0);
  for (int i = 0; i < 50; ++i) {
    const EnuPoint p{u(rng) / 4.0, u(rng) / 4.0, 2.0};
    const std::array<double, 2> v{u(rng), u(rng)};
    const double base = approach_factor(p, v, r);
    for (double k : {0.1, 10.0}) {
      const std::array<double, 2> vk{k * v[0], k * v[1]};
      EXPECT_NEAR(approach_factor(p, vk, r), base, 1e-6);
    }
  }
}

TEST(InScope, ApCenterInScope) {
  const AirspaceConfig cfg = test_airspace();
  EXPECT_TRUE(in_scope(cfg.ap.center, cfg));
}

TEST(InScope, BeyondBufferIsOut) {
  AirspaceConfig cfg = test_airspace();
  // due east of both squares: distance to AR wall = x - 60
  const EnuPoint p{60.0 + cfg.buffer_km + 1.0, 0.0, 8.0};
  EXPECT_GT(boundary_distance(cfg.ar, p), cfg.buffer_km);  // construction check
  EXPECT_GT(boundary_distance(cfg.ap, p), cfg.buffer_km);
  EXPECT_FALSE(in_scope(p, cfg));
}

TEST(InScope, ExactlyAtBufferIsInclusive) {
  const AirspaceConfig cfg = test_airspace();
  const EnuPoint p{60.0 + 100.0, 0.0, 8.0};  // exactly buffer_km east of the AR wall
  EXPECT_DOUBLE_EQ(boundary_distance(cfg.ar, p), 100.0);
  EXPECT_TRUE(in_scope(p, cfg));
}

TEST(InScope, MonotoneInBuffer) {
  AirspaceConfig cfg = test_airspace();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-250.0, 250.0), uz(0.0, 20.0);
  for (int i = 0; i < 300; ++i) {
    const EnuPoint p{u(rng), u(rng), uz(rng)};
    cfg.buffer_km = 50.0;
    const bool small = in_scope(p, cfg);
    cfg.buffer_km = 120.0;
    const bool large = in_scope(p, cfg);
    if (small) {
      EXPECT_TRUE(large);
    }
  }
}

TEST(Region, ValidationRejectsBadFootprints) {
  Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_NO_THROW(r.validate());

  Region two = r;
  two.footprint.resize(2);
  EXPECT_THROW(two.validate(), ConfigError);

  Region cw = r;  // clockwise winding has negative area
  std::reverse(cw.footprint.begin(), cw.footprint.end());
  EXPECT_THROW(cw.validate(), ConfigError);

  Region band = r;
  band.z_max_km = band.z_min_km;
  EXPECT_THROW(band.validate(), ConfigError);

  Region off = r;
  off.center = {50.0, 0.0, 2.5};
  EXPECT_THROW(off.validate(), ConfigError);

  Region nonconvex = r;
  nonconvex.footprint = {{-10, -10}, {10, -10}, {0, 0}, {10, 10}, {-10, 10}};
  EXPECT_THROW(nonconvex.validate(), ConfigError);
}

TEST(BoundaryDistance, InsideImpliesDistanceToNearestWallOrCap) {
  // directly checks the documented inside-case semantics on a known prism
  const Region r = square_region(10.0, 0.0, 5.0);
  EXPECT_NEAR(boundary_distance(r, {8.0, 0.0, 2.5}), 2.0, 1e-12);   // near east wall
  EXPECT_NEAR(boundary_distance(r, {0.0, 0.0, 4.5}), 0.5, 1e-12);   // near top cap
  EXPECT_NEAR(boundary_distance(r, {-9.0, -9.0, 2.5}), 1.0, 1e-12); // near corner walls
}
