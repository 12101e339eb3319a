// Deterministic synthetic terminal-area traffic: inhomogeneous Poisson
// spawning, piecewise-linear waypoint tracking with a turn-rate cap, and a
// lossy asynchronous message stream.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aerosense/common.hpp"
#include "aerosense/geometry.hpp"

namespace aerosense {

// One surveillance report. Units are fixed: km/h ground speed, m/s vertical
// speed, heading in degrees clockwise from north, dial altitude in meters.
struct AdsbMessage {
  std::string aircraft_id;
  double t_s = 0.0;
  GeoPoint pos;
  double v_gs_kmh = 0.0;
  double v_vs_ms = 0.0;
  double heading_deg = 0.0;
  double v_dial_kmh = 0.0;
  double h_dial_m = 0.0;

  bool valid() const {
    return std::isfinite(t_s) && t_s >= 0.0 && pos.valid() && std::isfinite(v_gs_kmh) &&
           v_gs_kmh >= 0.0 && std::isfinite(v_vs_ms) && std::isfinite(heading_deg) &&
           heading_deg >= 0.0 && heading_deg < 360.0 && std::isfinite(v_dial_kmh) &&
           std::isfinite(h_dial_m) && !aircraft_id.empty();
  }
};

enum class FlightKind { Arrival, Departure, Overflight };

struct FlightPlan {
  double spawn_t_s = 0.0;
  EnuPoint entry;                   // equals waypoints.front()
  std::vector<EnuPoint> waypoints;  // >= 2, flown in order
  double cruise_speed_kmh = 0.0;    // in [200, 900]
  double descent_rate_ms = 0.0;     // nominal magnitude, informational
  FlightKind kind = FlightKind::Overflight;

  void validate() const {
    if (waypoints.size() < 2) throw ConfigError("flight plan needs >= 2 waypoints");
    if (cruise_speed_kmh < 200.0 || cruise_speed_kmh > 900.0)
      throw ConfigError("cruise speed outside [200, 900] km/h");
  }
};

struct SimConfig {
  std::uint64_t seed = 1;
  double duration_s = 86400.0;
  std::vector<double> hourly_rate;  // 24 entries, flights spawned per hour
  double msg_period_s = 4.0;
  double drop_prob = 0.1;
  std::array<double, 3> kind_mix = {0.45, 0.25, 0.30};  // arrival, departure, overflight

  void validate() const {
    if (!(duration_s > 0.0)) throw ConfigError("simulation duration must be > 0");
    if (hourly_rate.empty()) throw ConfigError("hourly_rate must not be empty");
    if (hourly_rate.size() != 24) throw ConfigError("hourly_rate needs exactly 24 entries");
    for (double r : hourly_rate)
      if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("hourly_rate entries must be nonnegative");
    if (!(msg_period_s > 0.0)) throw ConfigError("msg_period_s must be > 0");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ConfigError("drop_prob must be in [0, 1)");
    double s = kind_mix[0] + kind_mix[1] + kind_mix[2];
    if (kind_mix[0] < 0 || kind_mix[1] < 0 || kind_mix[2] < 0 || std::abs(s - 1.0) > 1e-9)
      throw ConfigError("kind_mix must be 3 probabilities summing to 1");
  }
};

// Instantaneous kinematic state while tracking `target`.
struct FlightState {
  EnuPoint pos;
  double heading_deg = 0.0;
  double v_gs_kmh = 0.0;
  double v_vs_ms = 0.0;
  EnuPoint target;
};

constexpr double kMaxTurnRateDegS = 3.0;

inline double bearing_deg(const EnuPoint& from, const EnuPoint& to) {
  const double dx = to.x_km - from.x_km;
  const double dy = to.y_km - from.y_km;
  if (dx == 0.0 && dy == 0.0) return 0.0;
  return wrap360(rad2deg(std::atan2(dx, dy)));  // clockwise from north
}

inline double dist2d(const EnuPoint& a, const EnuPoint& b) {
  return std::hypot(a.x_km - b.x_km, a.y_km - b.y_km);
}

// One integration step: turn toward the target at <= 3 deg/s, then advance
// along the new heading at constant ground speed; altitude follows v_vs.
inline FlightState kinematic_step(const FlightState& s, double dt_s) {
  FlightState n = s;
  if (dist2d(s.pos, s.target) > 1e-9) {
    const double desired = bearing_deg(s.pos, s.target);
    const double delta = wrap180(desired - s.heading_deg);
    const double turn = std::clamp(delta, -kMaxTurnRateDegS * dt_s, kMaxTurnRateDegS * dt_s);
    n.heading_deg = wrap360(s.heading_deg + turn);
  }
  const double v_km_s = s.v_gs_kmh / 3600.0;
  n.pos.x_km += v_km_s * dt_s * std::sin(deg2rad(n.heading_deg));
  n.pos.y_km += v_km_s * dt_s * std::cos(deg2rad(n.heading_deg));
  n.pos.z_km += s.v_vs_ms / 1000.0 * dt_s;
  return n;
}

namespace detail {

// Per-kind speed profile: fraction of cruise speed flown on segment i.
inline double segment_speed_factor(FlightKind kind, std::size_t segment, std::size_t n_segments) {
  const double frac =
      n_segments > 1 ? static_cast<double>(segment) / static_cast<double>(n_segments - 1) : 1.0;
  switch (kind) {
    case FlightKind::Arrival:
      return 1.0 - 0.62 * frac;  // decelerate toward the runway
    case FlightKind::Departure:
      return 0.45 + 0.55 * frac;  // accelerate on climb-out
    case FlightKind::Overflight:
      return 1.0;
  }
  return 1.0;
}

}  // namespace detail

// Fly one plan and emit its messages (period msg_period_s, first at spawn).
// Message drops come from a counter stream keyed by (seed, flight, index) so
// drop_prob never perturbs the trajectory itself.
inline void simulate_flight(const FlightPlan& plan, const SimConfig& cfg, std::uint64_t flight_index,
                            const GeoPoint& origin, std::vector<AdsbMessage>& out) {
  plan.validate();
  const std::size_t n_segments = plan.waypoints.size() - 1;

  FlightState st;
  st.pos = plan.waypoints[0];
  st.target = plan.waypoints[1];
  st.heading_deg = bearing_deg(st.pos, st.target);

  std::size_t seg = 0;
  auto enter_segment = [&](std::size_t s) {
    seg = s;
    st.target = plan.waypoints[s + 1];
    const double factor = detail::segment_speed_factor(plan.kind, s, n_segments);
    st.v_gs_kmh = std::clamp(plan.cruise_speed_kmh * factor, 180.0, 900.0);
    const double d = dist2d(st.pos, st.target);
    const double t_est = d / (st.v_gs_kmh / 3600.0);
    st.v_vs_ms = t_est > 0.0 ? (st.target.z_km - st.pos.z_km) * 1000.0 / t_est : 0.0;
  };
  enter_segment(0);

  const std::uint64_t drop_key = hash_combine(cfg.seed, 0xd509f0b5u) ^ splitmix64(flight_index);
  const std::string id = "F" + std::to_string(100000 + flight_index);

  double t = plan.spawn_t_s;
  std::uint64_t msg_idx = 0;
  double alive_until = std::numeric_limits<double>::infinity();
  // capture radius for intermediate waypoints; the final one ends the flight
  // exactly when the remaining along-track time runs out.
  const double capture_km = std::max(1.5, st.v_gs_kmh / 3600.0 * cfg.msg_period_s * 0.75);

  while (t <= std::min(cfg.duration_s, alive_until + 1e-9)) {
    if (counter_uniform(drop_key, msg_idx) >= cfg.drop_prob) {
      AdsbMessage m;
      m.aircraft_id = id;
      m.t_s = t;
      m.pos = from_enu(st.pos, origin);
      m.v_gs_kmh = st.v_gs_kmh;
      m.v_vs_ms = st.v_vs_ms;
      m.heading_deg = wrap360(st.heading_deg);
      m.v_dial_kmh = st.v_gs_kmh;                          // current segment target
      m.h_dial_m = plan.waypoints[seg + 1].z_km * 1000.0;  // next waypoint altitude
      out.push_back(std::move(m));
    }
    ++msg_idx;
    if (!std::isinf(alive_until)) break;  // that was the final report

    // advance one period, handling waypoint hand-offs inside the step
    double dt = cfg.msg_period_s;
    while (dt > 0.0) {
      const double v_km_s = st.v_gs_kmh / 3600.0;
      const double remaining = dist2d(st.pos, st.target);
      const bool last = (seg + 1 == plan.waypoints.size() - 1);
      const double t_to_wp =
          v_km_s > 0.0 ? remaining / v_km_s : std::numeric_limits<double>::infinity();
      if (last && t_to_wp <= dt + 1e-9) {
        alive_until = t + (cfg.msg_period_s - dt) + t_to_wp;
        st = kinematic_step(st, t_to_wp);
        break;
      }
      if (!last && (remaining <= capture_km || t_to_wp <= dt)) {
        st.pos.z_km = st.target.z_km;  // segments interpolate altitude linearly
        enter_segment(seg + 1);
        continue;
      }
      st = kinematic_step(st, dt);
      dt = 0.0;
    }
    t = plan.spawn_t_s + static_cast<double>(msg_idx) * cfg.msg_period_s;
  }
}

namespace detail {

// Random flight plans shaped by the airspace: arrivals spiral in and land,
// departures climb out, overflights transit at altitude.
inline FlightPlan make_plan(FlightKind kind, double spawn_t, std::mt19937_64& rng,
                            const AirspaceConfig& air) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double r_out = 0.0;
  for (const auto& v : air.ar.footprint) r_out = std::max(r_out, std::hypot(v[0], v[1]));
  const double ring = r_out + air.buffer_km * 1.3;

  auto on_ring = [&](double bearing_rad, double radius, double alt_km) {
    return EnuPoint{radius * std::sin(bearing_rad), radius * std::cos(bearing_rad), alt_km};
  };

  FlightPlan p;
  p.spawn_t_s = spawn_t;
  p.kind = kind;
  const double beta = 2.0 * std::numbers::pi * u01(rng);
  const double cx = air.ap.center.x_km, cy = air.ap.center.y_km;

  // cruise speeds capped at 400 km/h so that crossing the 100 km buffer takes
  // at least the 15-minute horizon: traffic that will occupy a region is
  // already observable when the query snapshot is taken
  switch (kind) {
    case FlightKind::Arrival: {
      p.cruise_speed_kmh = 350.0 + 50.0 * u01(rng);
      p.descent_rate_ms = 8.0 + 4.0 * u01(rng);
      const double alt0 = 9.0 + 2.5 * u01(rng);
      const EnuPoint e0 = on_ring(beta, ring * (0.9 + 0.2 * u01(rng)), alt0);
      const double mid_b = beta + (u01(rng) - 0.5) * 0.6;
      const EnuPoint e1 = on_ring(mid_b, r_out * 0.55, 5.0 + 1.5 * u01(rng));
      const double fix_b = beta + (u01(rng) - 0.5) * 1.0;
      const EnuPoint e2 = on_ring(fix_b, 32.0 + 8.0 * u01(rng), 2.2 + 0.5 * u01(rng));
      const EnuPoint e3{cx + (u01(rng) - 0.5) * 4.0, cy + (u01(rng) - 0.5) * 4.0, 0.03};
      p.waypoints = {e0, e1, e2, e3};
      break;
    }
    case FlightKind::Departure: {
      p.cruise_speed_kmh = 350.0 + 50.0 * u01(rng);
      p.descent_rate_ms = 10.0 + 5.0 * u01(rng);
      const EnuPoint e0{cx + (u01(rng) - 0.5) * 3.0, cy + (u01(rng) - 0.5) * 3.0, 0.02};
      const EnuPoint e1 = on_ring(beta, 24.0 + 8.0 * u01(rng), 2.4 + 0.6 * u01(rng));
      const double out_b = beta + (u01(rng) - 0.5) * 0.5;
      const EnuPoint e2 = on_ring(out_b, r_out * 0.9, 6.5 + 1.5 * u01(rng));
      const EnuPoint e3 = on_ring(out_b + (u01(rng) - 0.5) * 0.3, ring * 1.05, 9.0 + 2.0 * u01(rng));
      p.waypoints = {e0, e1, e2, e3};
      break;
    }
    case FlightKind::Overflight: {
      p.cruise_speed_kmh = 340.0 + 60.0 * u01(rng);
      p.descent_rate_ms = 0.0;
      const double alt = 9.5 + 2.3 * u01(rng);
      const double offset = 100.0 * u01(rng);  // closest-approach distance to center
      const double exit_b = beta + std::numbers::pi + (u01(rng) - 0.5) * 0.7;
      const EnuPoint e0 = on_ring(beta, ring * (0.95 + 0.15 * u01(rng)), alt);
      const double mid_b = beta + std::numbers::pi / 2.0;
      const EnuPoint e1{offset * std::sin(mid_b), offset * std::cos(mid_b), alt};
      const EnuPoint e2 = on_ring(exit_b, ring * (0.95 + 0.15 * u01(rng)), alt);
      p.waypoints = {e0, e1, e2};
      break;
    }
  }
  p.entry = p.waypoints.front();
  return p;
}

}  // namespace detail

// Spawn plans via an hourly inhomogeneous Poisson process, fly each one, and
// return the merged time-ordered stream. Deterministic for a given seed.
inline std::vector<AdsbMessage> generate_traffic(const SimConfig& cfg, const AirspaceConfig& air) {
  cfg.validate();
  air.validate();

  std::mt19937_64 master(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<AdsbMessage> out;

  const int n_hours = static_cast<int>(std::ceil(cfg.duration_s / 3600.0));
  std::uint64_t flight_index = 0;
  for (int h = 0; h < n_hours; ++h) {
    const double rate = cfg.hourly_rate[static_cast<std::size_t>(h % 24)];
    int n_spawn = 0;
    if (rate > 0.0) {
      std::poisson_distribution<int> pois(rate);
      n_spawn = pois(master);
    }
    for (int k = 0; k < n_spawn; ++k) {
      const double spawn_t = (static_cast<double>(h) + u01(master)) * 3600.0;
      const double pick = u01(master);
      FlightKind kind = FlightKind::Overflight;
      if (pick < cfg.kind_mix[0]) kind = FlightKind::Arrival;
      else if (pick < cfg.kind_mix[0] + cfg.kind_mix[1]) kind = FlightKind::Departure;

      std::mt19937_64 flight_rng(hash_combine(cfg.seed, 0xf117u) ^ splitmix64(flight_index));
      const FlightPlan plan = detail::make_plan(kind, spawn_t, flight_rng, air);
      if (spawn_t <= cfg.duration_s) simulate_flight(plan, cfg, flight_index, air.origin, out);
      ++flight_index;
    }
  }

  std::stable_sort(out.begin(), out.end(), [](const AdsbMessage& a, const AdsbMessage& b) {
    if (a.t_s != b.t_s) return a.t_s < b.t_s;
    return a.aircraft_id < b.aircraft_id;
  });
  return out;
}

}  // namespace aerosense
