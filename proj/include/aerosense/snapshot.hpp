// Snapshot construction from asynchronous message streams: windowed
// downsampling, flow-label counting, dataset assembly and the chronological
// split.
#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aerosense/common.hpp"
#include "aerosense/geometry.hpp"
#include "aerosense/simulator.hpp"

namespace aerosense {

// Missing-value-free airspace state at time t: at most one report per
// aircraft, each observed within [t - delta, t] and located in scope.
struct Snapshot {
  double t_s = 0.0;
  std::vector<AdsbMessage> aircraft;  // ordered by aircraft_id

  std::size_t count() const { return aircraft.size(); }
};

struct LabeledSample {
  Snapshot snapshot;
  int y_ap = 0;
  int y_ar = 0;
  double horizon_s = 900.0;
};

// For each aircraft with at least one valid in-scope report in [t - delta, t],
// retain the most recent one (ties: the later report in input order wins).
// `messages` must be ordered by t_s.
inline Snapshot build_snapshot(std::span<const AdsbMessage> messages, double t, double delta,
                               const AirspaceConfig& airspace) {
  if (!(delta > 0.0)) throw ConfigError("snapshot window delta must be > 0");
  Snapshot snap;
  snap.t_s = t;

  const auto lo = std::lower_bound(messages.begin(), messages.end(), t - delta,
                                   [](const AdsbMessage& m, double v) { return m.t_s < v; });
  const auto hi = std::upper_bound(messages.begin(), messages.end(), t,
                                   [](double v, const AdsbMessage& m) { return v < m.t_s; });

  std::map<std::string, const AdsbMessage*> latest;
  for (auto it = lo; it != hi; ++it) {
    if (!it->valid()) continue;  // validity filter precedes windowing
    if (!in_scope(to_enu(it->pos, airspace.origin), airspace)) continue;
    auto [entry, inserted] = latest.try_emplace(it->aircraft_id, &*it);
    if (!inserted && it->t_s >= entry->second->t_s) entry->second = &*it;
  }

  snap.aircraft.reserve(latest.size());
  for (const auto& [id, msg] : latest) snap.aircraft.push_back(*msg);
  return snap;
}

// Flow labels: per-region indicator sums over the snapshot (AP, AR).
inline std::pair<int, int> count_labels(const Snapshot& snapshot_future,
                                        const AirspaceConfig& airspace) {
  int y_ap = 0, y_ar = 0;
  for (const AdsbMessage& m : snapshot_future.aircraft) {
    const EnuPoint p = to_enu(m.pos, airspace.origin);
    if (contains(airspace.ap, p)) ++y_ap;
    if (contains(airspace.ar, p)) ++y_ar;
  }
  return {y_ap, y_ar};
}

// One labeled sample per query time: snapshot at t, labels from t + horizon.
// Coverage is the interval of stream validity; query times whose label window
// leaves it are rejected.
inline std::vector<LabeledSample> make_dataset(std::span<const AdsbMessage> messages,
                                               std::span<const double> t_grid, double horizon_s,
                                               double delta_s, const AirspaceConfig& airspace,
                                               double coverage_begin_s, double coverage_end_s) {
  if (!std::is_sorted(messages.begin(), messages.end(),
                      [](const AdsbMessage& a, const AdsbMessage& b) { return a.t_s < b.t_s; })) {
    throw DataError("message stream must be time-ordered");
  }
  for (double t : t_grid) {
    if (t < coverage_begin_s || t + horizon_s > coverage_end_s) {
      throw DataError("t_grid entry " + std::to_string(t) + " exceeds stream coverage");
    }
  }
  std::vector<LabeledSample> out;
  out.reserve(t_grid.size());
  for (double t : t_grid) {
    LabeledSample s;
    s.snapshot = build_snapshot(messages, t, delta_s, airspace);
    s.horizon_s = horizon_s;
    const Snapshot future = build_snapshot(messages, t + horizon_s, delta_s, airspace);
    std::tie(s.y_ap, s.y_ar) = count_labels(future, airspace);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<double> default_t_grid(double begin_s, double end_s, double cadence_s,
                                          double horizon_s) {
  if (!(cadence_s > 0.0)) throw ConfigError("t-grid cadence must be > 0");
  std::vector<double> grid;
  for (double t = begin_s; t + horizon_s <= end_s + 1e-9; t += cadence_s) grid.push_back(t);
  return grid;
}

struct SplitView {
  std::vector<LabeledSample> train, val, test;
};

// Chronological split: first floor(r0*N) train, next floor(r1*N) val, the
// remainder test. No shuffling.
inline SplitView chronological_split(std::vector<LabeledSample> samples,
                                     std::array<double, 3> ratios = {0.8, 0.1, 0.1}) {
  if (!(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0) ||
      std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].snapshot.t_s < samples[i - 1].snapshot.t_s)
      throw DataError("samples must be sorted by time before splitting");
  }
  const std::size_t n = samples.size();
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n)));

  SplitView v;
  v.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_train));
  v.val.assign(samples.begin() + static_cast<std::ptrdiff_t>(n_train),
               samples.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  v.test.assign(samples.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), samples.end());
  return v;
}

// Split sizes alone, for callers that only need the arithmetic.
inline std::array<std::size_t, 3> split_sizes(std::size_t n,
                                              std::array<double, 3> ratios = {0.8, 0.1, 0.1}) {
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n)));
  return {n_train, n_val, n - n_train - n_val};
}

}  // namespace aerosense
