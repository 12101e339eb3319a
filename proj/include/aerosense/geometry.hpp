// Terminal-area geometry: the AP/AR regions as convex prisms in a local
// ENU frame, membership tests, boundary distances and approach factors.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aerosense/common.hpp"

namespace aerosense {

// Scale of one degree of latitude / longitude-at-equator, in km.
constexpr double kKmPerDegLat = 110.574;
constexpr double kKmPerDegLon = 111.320;

struct GeoPoint {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
  double alt_m = 0.0;

  bool valid() const {
    return std::isfinite(lat_deg) && std::isfinite(lon_deg) && std::isfinite(alt_m) &&
           lat_deg >= -90.0 && lat_deg <= 90.0 && lon_deg >= -180.0 && lon_deg <= 180.0 &&
           alt_m >= -500.0;
  }
};

struct EnuPoint {
  double x_km = 0.0;  // east
  double y_km = 0.0;  // north
  double z_km = 0.0;  // up

  bool finite() const {
    return std::isfinite(x_km) && std::isfinite(y_km) && std::isfinite(z_km);
  }
};

// Local equirectangular projection about `origin`. Exact inverse below.
inline EnuPoint to_enu(const GeoPoint& p, const GeoPoint& origin) {
  EnuPoint e;
  e.x_km = (p.lon_deg - origin.lon_deg) * kKmPerDegLon * std::cos(deg2rad(origin.lat_deg));
  e.y_km = (p.lat_deg - origin.lat_deg) * kKmPerDegLat;
  e.z_km = p.alt_m / 1000.0;
  return e;
}

inline GeoPoint from_enu(const EnuPoint& e, const GeoPoint& origin) {
  GeoPoint p;
  p.lat_deg = origin.lat_deg + e.y_km / kKmPerDegLat;
  p.lon_deg = origin.lon_deg + e.x_km / (kKmPerDegLon * std::cos(deg2rad(origin.lat_deg)));
  p.alt_m = e.z_km * 1000.0;
  return p;
}

enum class RegionId { AP, AR };

inline const char* region_name(RegionId id) { return id == RegionId::AP ? "AP" : "AR"; }

// A vertical prism: convex CCW polygon footprint (km, ENU) times an
// altitude band [z_min, z_max] (km). `center` is the configured reference
// point used by the approach factor.
struct Region {
  RegionId id = RegionId::AP;
  std::vector<std::array<double, 2>> footprint;  // CCW, >= 3 vertices
  double z_min_km = 0.0;
  double z_max_km = 0.0;
  EnuPoint center;

  void validate() const;
};

namespace detail {

inline double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Twice the signed area; positive for CCW.
inline double polygon_area2(const std::vector<std::array<double, 2>>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += cross2(p[0], p[1], q[0], q[1]);
  }
  return a;
}

inline bool polygon_convex_ccw(const std::vector<std::array<double, 2>>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    const auto& c = poly[(i + 2) % n];
    if (cross2(b[0] - a[0], b[1] - a[1], c[0] - b[0], c[1] - b[1]) < 0.0) return false;
  }
  return true;
}

// Inside-or-on test for a convex CCW polygon (half-plane test per edge).
inline bool point_in_convex(const std::vector<std::array<double, 2>>& poly, double x, double y) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    if (cross2(b[0] - a[0], b[1] - a[1], x - a[0], y - a[1]) < -1e-12) return false;
  }
  return true;
}

inline double point_segment_distance(double px, double py, const std::array<double, 2>& a,
                                     const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = px - a[0], wy = py - a[1];
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
  return std::hypot(dx, dy);
}

inline double polygon_boundary_distance(const std::vector<std::array<double, 2>>& poly, double x,
                                        double y) {
  double d = std::numeric_limits<double>::infinity();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    d = std::min(d, point_segment_distance(x, y, poly[i], poly[(i + 1) % n]));
  }
  return d;
}

}  // namespace detail

inline void Region::validate() const {
  if (footprint.size() < 3) throw ConfigError("region footprint needs >= 3 vertices");
  for (const auto& v : footprint) {
    if (!std::isfinite(v[0]) || !std::isfinite(v[1])) throw ConfigError("non-finite footprint vertex");
  }
  if (detail::polygon_area2(footprint) <= 0.0) throw ConfigError("region footprint must be CCW with positive area");
  if (!detail::polygon_convex_ccw(footprint)) throw ConfigError("region footprint must be convex");
  if (!(z_min_km < z_max_km)) throw ConfigError("region altitude band requires z_min < z_max");
  if (!center.finite()) throw ConfigError("region center must be finite");
  if (!detail::point_in_convex(footprint, center.x_km, center.y_km) || center.z_km < z_min_km ||
      center.z_km > z_max_km) {
    throw ConfigError("region center must lie inside footprint and altitude band");
  }
}

inline bool contains(const Region& r, const EnuPoint& p) {
  if (p.z_km < r.z_min_km || p.z_km > r.z_max_km) return false;
  return detail::point_in_convex(r.footprint, p.x_km, p.y_km);
}

// Unsigned distance from p to the prism's boundary surface: lateral walls
// plus top/bottom caps. Returns 0 exactly on the surface. Inside/outside is
// carried separately by the inclusion indicator.
inline double boundary_distance(const Region& r, const EnuPoint& p) {
  const bool inside_poly = detail::point_in_convex(r.footprint, p.x_km, p.y_km);
  const double d2d = detail::polygon_boundary_distance(r.footprint, p.x_km, p.y_km);
  const double d_lat = inside_poly ? -d2d : d2d;            // negative when laterally inside
  const double d_z = std::max(r.z_min_km - p.z_km, p.z_km - r.z_max_km);  // negative inside band

  if (d_lat <= 0.0 && d_z <= 0.0) return std::min(-d_lat, -d_z);  // inside: nearest wall or cap
  return std::hypot(std::max(d_lat, 0.0), std::max(d_z, 0.0));
}

// Cosine similarity between the horizontal velocity and the displacement to
// the region center; > 0 converging, < 0 diverging. `v` in km/h (east, north).
inline double approach_factor(const EnuPoint& p, const std::array<double, 2>& v_kmh,
                              const Region& r) {
  constexpr double kEps = 1e-8;
  const double rx = r.center.x_km - p.x_km;
  const double ry = r.center.y_km - p.y_km;
  const double dot = v_kmh[0] * rx + v_kmh[1] * ry;
  const double nv = std::hypot(v_kmh[0], v_kmh[1]);
  const double nr = std::hypot(rx, ry);
  return dot / (nv * nr + kEps);
}

struct AirspaceConfig {
  GeoPoint origin;
  Region ap;
  Region ar;
  double buffer_km = 100.0;  // maximum reachable distance within the look-ahead horizon

  void validate() const {
    if (!origin.valid()) throw ConfigError("invalid airspace origin");
    if (std::abs(origin.lat_deg) >= 89.0) throw ConfigError("origin latitude too close to a pole for the local projection");
    if (!(buffer_km > 0.0)) throw ConfigError("buffer_km must be positive");
    Region a = ap;
    a.id = RegionId::AP;
    a.validate();
    Region b = ar;
    b.id = RegionId::AR;
    b.validate();
  }
};

// Scope test for the monitored volume: the controlled prisms plus everything
// within buffer_km of their boundary surfaces (inclusive).
inline bool in_scope(const EnuPoint& p, const AirspaceConfig& cfg) {
  if (contains(cfg.ap, p) || contains(cfg.ar, p)) return true;
  return std::min(boundary_distance(cfg.ap, p), boundary_distance(cfg.ar, p)) <= cfg.buffer_km;
}

// Convenience: a regular CCW polygon footprint of `n` vertices and given radius.
inline std::vector<std::array<double, 2>> regular_polygon(int n, double radius_km,
                                                          double cx_km = 0.0, double cy_km = 0.0) {
  std::vector<std::array<double, 2>> poly;
  poly.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    poly.push_back({cx_km + radius_km * std::cos(a), cy_km + radius_km * std::sin(a)});
  }
  return poly;
}

}  // namespace aerosense
