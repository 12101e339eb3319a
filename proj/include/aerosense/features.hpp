// Situation-aware per-aircraft state vectors: location, kinematics, control
// intent, boundary interaction, and cyclical time-of-day context, with
// selective Z-score normalization over the first eight components.
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "aerosense/common.hpp"
#include "aerosense/geometry.hpp"
#include "aerosense/snapshot.hpp"

namespace aerosense {

// Component layout of the 18-dim state vector.
//   0-2   f_l  lat, lon, alt
//   3-5   f_k  v_gs, v_vs, heading
//   6-7   f_c  v_dial, h_dial
//   8-13  f_b  d_AP, d_AR, alpha_AP, alpha_AR, I_AP, I_AR
//   14-17 f_t  sin h, cos h, sin m, cos m
constexpr int kStateDim = 18;
constexpr int kNormalizedDim = 8;  // f_l + f_k + f_c are Z-scored, f_b / f_t are not

struct StateVector {
  std::array<double, kStateDim> v{};
};

struct NormStats {
  std::array<double, kNormalizedDim> mean{};
  std::array<double, kNormalizedDim> stddev{};  // floored at 1e-6
};

// Raw (unnormalized) state for one in-scope report at snapshot time t.
// Temporal context comes from the snapshot time, not the report timestamp.
inline StateVector extract_raw(const AdsbMessage& msg, double t_s, const AirspaceConfig& airspace) {
  StateVector s;
  s.v[0] = msg.pos.lat_deg;
  s.v[1] = msg.pos.lon_deg;
  s.v[2] = msg.pos.alt_m;
  s.v[3] = msg.v_gs_kmh;
  s.v[4] = msg.v_vs_ms;
  s.v[5] = msg.heading_deg;
  s.v[6] = msg.v_dial_kmh;
  s.v[7] = msg.h_dial_m;

  const EnuPoint p = to_enu(msg.pos, airspace.origin);
  const double th = deg2rad(msg.heading_deg);
  const std::array<double, 2> vel = {msg.v_gs_kmh * std::sin(th), msg.v_gs_kmh * std::cos(th)};
  s.v[8] = boundary_distance(airspace.ap, p);
  s.v[9] = boundary_distance(airspace.ar, p);
  s.v[10] = approach_factor(p, vel, airspace.ap);
  s.v[11] = approach_factor(p, vel, airspace.ar);
  s.v[12] = contains(airspace.ap, p) ? 1.0 : 0.0;
  s.v[13] = contains(airspace.ar, p) ? 1.0 : 0.0;

  // fractional hour-of-day / minute-of-hour keep the embedding continuous
  const double day_s = std::fmod(std::fmod(t_s, 86400.0) + 86400.0, 86400.0);
  const double hour = day_s / 3600.0;
  const double minute = std::fmod(day_s, 3600.0) / 60.0;
  s.v[14] = std::sin(2.0 * std::numbers::pi * hour / 24.0);
  s.v[15] = std::cos(2.0 * std::numbers::pi * hour / 24.0);
  s.v[16] = std::sin(2.0 * std::numbers::pi * minute / 60.0);
  s.v[17] = std::cos(2.0 * std::numbers::pi * minute / 60.0);
  return s;
}

// Population mean/std of the normalized components over every aircraft state
// in the training split.
inline NormStats fit_norm_stats(std::span<const LabeledSample> train_samples,
                                const AirspaceConfig& airspace) {
  NormStats st;
  std::array<double, kNormalizedDim> sum{}, sumsq{};
  long long n = 0;
  for (const LabeledSample& s : train_samples) {
    for (const AdsbMessage& m : s.snapshot.aircraft) {
      const StateVector raw = extract_raw(m, s.snapshot.t_s, airspace);
      for (int c = 0; c < kNormalizedDim; ++c) {
        sum[c] += raw.v[c];
        sumsq[c] += raw.v[c] * raw.v[c];
      }
      ++n;
    }
  }
  if (n == 0) throw DataError("cannot fit normalization stats on empty training data");
  for (int c = 0; c < kNormalizedDim; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sumsq[c] / static_cast<double>(n) - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::max(std::sqrt(var), 1e-6);
  }
  return st;
}

// Z-score components 0-7; pass f_b and f_t through untouched.
inline StateVector normalize(const StateVector& raw, const NormStats& stats) {
  StateVector out = raw;
  for (int c = 0; c < kNormalizedDim; ++c) out.v[c] = (raw.v[c] - stats.mean[c]) / stats.stddev[c];
  return out;
}

// Ablation switches: which feature groups feed the model.
struct FeatureGroups {
  bool f_l = true;
  bool f_k = true;
  bool f_c = true;
  bool f_b = true;
  bool f_t = true;

  int d_in() const {
    return (f_l ? 3 : 0) + (f_k ? 3 : 0) + (f_c ? 2 : 0) + (f_b ? 6 : 0) + (f_t ? 4 : 0);
  }

  void select(const StateVector& s, double* out) const {
    int k = 0;
    auto copy = [&](int from, int n, bool on) {
      if (!on) return;
      for (int i = 0; i < n; ++i) out[k++] = s.v[from + i];
    };
    copy(0, 3, f_l);
    copy(3, 3, f_k);
    copy(6, 2, f_c);
    copy(8, 6, f_b);
    copy(14, 4, f_t);
  }
};

// Model-ready features for one labeled sample: normalized, group-selected,
// row-major (count x d_in).
struct SampleFeatures {
  double t_s = 0.0;
  int count = 0;
  std::vector<double> x;
  double y_ap = 0.0;
  double y_ar = 0.0;
};

inline SampleFeatures featurize(const LabeledSample& sample, const NormStats& stats,
                                const FeatureGroups& groups, const AirspaceConfig& airspace) {
  SampleFeatures f;
  f.t_s = sample.snapshot.t_s;
  f.count = static_cast<int>(sample.snapshot.count());
  f.y_ap = static_cast<double>(sample.y_ap);
  f.y_ar = static_cast<double>(sample.y_ar);
  const int d = groups.d_in();
  f.x.resize(static_cast<std::size_t>(f.count) * static_cast<std::size_t>(d));
  for (int i = 0; i < f.count; ++i) {
    const StateVector sv =
        normalize(extract_raw(sample.snapshot.aircraft[static_cast<std::size_t>(i)],
                              sample.snapshot.t_s, airspace),
                  stats);
    groups.select(sv, f.x.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d));
  }
  return f;
}

inline std::vector<SampleFeatures> featurize_all(std::span<const LabeledSample> samples,
                                                 const NormStats& stats,
                                                 const FeatureGroups& groups,
                                                 const AirspaceConfig& airspace) {
  std::vector<SampleFeatures> out;
  out.reserve(samples.size());
  for (const LabeledSample& s : samples) out.push_back(featurize(s, stats, groups, airspace));
  return out;
}

}  // namespace aerosense
