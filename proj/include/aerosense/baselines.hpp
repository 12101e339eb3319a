// Reference predictors: persistence (future counts = current counts) and a
// trend/remainder linear look-back model over a 15-minute flow grid.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "aerosense/common.hpp"
#include "aerosense/snapshot.hpp"
#include "aerosense/training.hpp"

namespace aerosense {

// Persistence: predict the label-time counts with the counts observed in the
// input snapshot itself.
inline std::vector<Prediction> baseline_persistence(std::span<const LabeledSample> samples,
                                                    const AirspaceConfig& airspace) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    const auto [ap, ar] = count_labels(s.snapshot, airspace);
    out.push_back({static_cast<double>(ap), static_cast<double>(ar)});
  }
  return out;
}

// Regional flow counts on a regular grid (one value per step).
struct FlowSeries {
  double t0_s = 0.0;
  double step_s = 900.0;
  std::vector<double> ap;
  std::vector<double> ar;

  std::size_t size() const { return ap.size(); }
};

namespace detail {

// Moving average with edge-replication padding, applied to one window.
inline std::vector<double> moving_average(std::span<const double> w, int window) {
  const int n = static_cast<int>(w.size());
  const int half = window / 2;
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = -half; k <= half; ++k) {
      const int j = std::clamp(i + k, 0, n - 1);
      acc += w[static_cast<std::size_t>(j)];
    }
    out[static_cast<std::size_t>(i)] = acc / static_cast<double>(window);
  }
  return out;
}

}  // namespace detail

// One-step-ahead linear predictor over an L-step look-back window. Each
// window is decomposed into trend (moving average, window 25, edge
// replication) and remainder; two per-component linear maps with a shared
// intercept are fit jointly by least squares and their outputs summed.
class LinearLookback {
 public:
  explicit LinearLookback(int lookback = 96, int ma_window = 25)
      : lookback_(lookback), ma_window_(ma_window) {}

  int lookback() const { return lookback_; }

  // Fit on series indices [lookback, train_end): window = the previous
  // `lookback` values, target = the value at the index.
  void fit(std::span<const double> series, std::size_t train_end) {
    if (train_end > series.size()) throw DataError("linear look-back: train_end beyond series");
    const int L = lookback_;
    if (static_cast<long long>(train_end) - L < 1)
      throw DataError("linear look-back: insufficient training history");
    const std::size_t rows = train_end - static_cast<std::size_t>(L);
    const int cols = 2 * L + 1;
    Eigen::MatrixXd a(rows, cols);
    Eigen::VectorXd y(rows);
    std::vector<double> feat(static_cast<std::size_t>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t target = r + static_cast<std::size_t>(L);
      window_features(series.subspan(target - static_cast<std::size_t>(L),
                                     static_cast<std::size_t>(L)),
                      feat);
      for (int cidx = 0; cidx < cols; ++cidx) a(static_cast<Eigen::Index>(r), cidx) = feat[static_cast<std::size_t>(cidx)];
      y(static_cast<Eigen::Index>(r)) = series[target];
    }
    weights_ = a.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
    fitted_ = true;
  }

  // Predict the value at `index` from its look-back window; requires
  // index >= lookback.
  double predict_at(std::span<const double> series, std::size_t index) const {
    if (!fitted_) throw DataError("linear look-back: predict before fit");
    if (index < static_cast<std::size_t>(lookback_) || index >= series.size())
      throw DataError("linear look-back: insufficient history at index");
    std::vector<double> feat(static_cast<std::size_t>(2 * lookback_ + 1));
    window_features(series.subspan(index - static_cast<std::size_t>(lookback_),
                                   static_cast<std::size_t>(lookback_)),
                    feat);
    double acc = 0.0;
    for (int c = 0; c < 2 * lookback_ + 1; ++c)
      acc += weights_(c) * feat[static_cast<std::size_t>(c)];
    return acc;
  }

 private:
  void window_features(std::span<const double> w, std::vector<double>& feat) const {
    const std::vector<double> trend = detail::moving_average(w, ma_window_);
    const int L = lookback_;
    for (int i = 0; i < L; ++i) {
      feat[static_cast<std::size_t>(i)] = trend[static_cast<std::size_t>(i)];
      feat[static_cast<std::size_t>(L + i)] = w[static_cast<std::size_t>(i)] - trend[static_cast<std::size_t>(i)];
    }
    feat[static_cast<std::size_t>(2 * L)] = 1.0;
  }

  int lookback_;
  int ma_window_;
  Eigen::VectorXd weights_;
  bool fitted_ = false;
};

struct LookbackEval {
  std::vector<std::size_t> indices;  // series indices that had enough history
  std::vector<double> predictions;
  std::size_t skipped = 0;           // indices without sufficient history
};

// Fit on the training prefix and predict over [eval_begin, series.size()).
inline LookbackEval baseline_linear_lookback(std::span<const double> series,
                                             std::size_t train_end, std::size_t eval_begin,
                                             int lookback = 96) {
  LinearLookback model(lookback);
  model.fit(series, train_end);
  LookbackEval out;
  for (std::size_t i = eval_begin; i < series.size(); ++i) {
    if (i < static_cast<std::size_t>(lookback)) {
      ++out.skipped;
      continue;
    }
    out.indices.push_back(i);
    out.predictions.push_back(model.predict_at(series, i));
  }
  return out;
}

// Aggregate labeled samples into a per-region flow grid: for each grid time,
// the counts of the snapshot observed exactly there (cadences that divide the
// grid step give exact hits).
inline FlowSeries flow_series_from_samples(std::span<const LabeledSample> samples,
                                           const AirspaceConfig& airspace, double step_s = 900.0) {
  FlowSeries fs;
  fs.step_s = step_s;
  if (samples.empty()) return fs;
  fs.t0_s = samples.front().snapshot.t_s;
  for (const LabeledSample& s : samples) {
    const double offset = s.snapshot.t_s - fs.t0_s;
    const double steps = offset / step_s;
    if (std::abs(steps - std::round(steps)) > 1e-6) continue;  // off-grid sample
    const auto idx = static_cast<std::size_t>(std::llround(steps));
    if (idx != fs.ap.size()) continue;  // grid gap; keep the contiguous prefix
    const auto [ap, ar] = count_labels(s.snapshot, airspace);
    fs.ap.push_back(static_cast<double>(ap));
    fs.ar.push_back(static_cast<double>(ar));
  }
  return fs;
}

}  // namespace aerosense
