// Optimization loop (Adam, plateau scheduler, early stopping), metric
// computation and the dayparting evaluation.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aerosense/common.hpp"
#include "aerosense/features.hpp"
#include "aerosense/model.hpp"
#include "aerosense/tensor.hpp"

namespace aerosense {

struct TrainConfig {
  double lr = 3e-4;
  int batch_size = 64;
  int max_epochs = 100;
  int early_stop_patience = 10;
  int plateau_patience = 5;
  double plateau_factor = 0.5;
  double huber_delta = 1.0;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double min_improvement = 1e-8;  // threshold for "the validation loss improved"

  void validate() const {
    if (!(lr > 0) || batch_size < 1 || max_epochs < 1 || early_stop_patience < 1 ||
        plateau_patience < 1 || !(plateau_factor > 0) || !(huber_delta > 0))
      throw ConfigError("invalid training configuration");
  }
};

// Standard Adam with bias correction; one shared step counter.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long long step = 0;

  static AdamState for_params(std::span<Tensor> params) {
    AdamState s;
    for (const Tensor& p : params) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

inline void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg,
                      double lr) {
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const auto& g = p.grad();
    auto& w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

// lr <- lr * factor after `patience` consecutive epochs without improvement;
// the stall counter resets on improvement and after each decay.
struct PlateauScheduler {
  double lr;
  int patience;
  double factor;
  double min_improvement;
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;

  PlateauScheduler(double lr0, int patience_, double factor_, double min_improvement_ = 1e-8)
      : lr(lr0), patience(patience_), factor(factor_), min_improvement(min_improvement_) {}

  double update(double val_loss) {
    if (best - val_loss >= min_improvement) {
      best = val_loss;
      stall = 0;
    } else if (++stall >= patience) {
      lr *= factor;
      stall = 0;
    }
    return lr;
  }
};

struct EarlyStopper {
  int patience;
  double min_improvement;
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;

  EarlyStopper(int patience_, double min_improvement_ = 1e-8)
      : patience(patience_), min_improvement(min_improvement_) {}

  // returns true when training should stop
  bool update(double val_loss) {
    if (best - val_loss >= min_improvement) {
      best = val_loss;
      stall = 0;
      return false;
    }
    return ++stall >= patience;
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// Mean per-sample loss (sum of the two regions' Huber terms) over a set.
inline double dataset_loss(ModelParams& mp, std::span<const SampleFeatures> samples,
                           int batch_size, double delta) {
  double total = 0.0;
  for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(samples.size() - at, static_cast<std::size_t>(batch_size));
    PaddedBatch pb = pad_batch(samples.subspan(at, n), mp.cfg.n_max, mp.cfg.d_in);
    ForwardOutput fo = forward(nullptr, mp, pb, /*train=*/false);
    Tensor l = huber_loss(nullptr, fo.pred, pb, delta);
    total += l.scalar() * static_cast<double>(n);
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

// Full training protocol: shuffled batches within the chronological training
// split, per-epoch validation, plateau scheduling, early stopping, and
// best-validation checkpointing. Deterministic for a fixed seed.
inline TrainResult train(ModelParams& mp, std::span<const SampleFeatures> train_samples,
                         std::span<const SampleFeatures> val_samples, const TrainConfig& cfg) {
  cfg.validate();
  if (train_samples.empty()) throw DataError("empty training split");

  std::vector<Tensor> params = mp.trainable();
  AdamState adam = AdamState::for_params(params);
  PlateauScheduler sched(cfg.lr, cfg.plateau_patience, cfg.plateau_factor, cfg.min_improvement);
  EarlyStopper stopper(cfg.early_stop_patience, cfg.min_improvement);

  TrainResult result;
  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(hash_combine(cfg.seed, 0xe70c5u + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double train_loss_sum = 0.0;
    std::int64_t batch_index = 0;
    std::vector<SampleFeatures> batch;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - at, static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      batch.reserve(n);
      for (std::size_t i = 0; i < n; ++i) batch.push_back(train_samples[order[at + i]]);

      PaddedBatch pb = pad_batch(batch, mp.cfg.n_max, mp.cfg.d_in);
      Tape tape;
      DropoutKey dk{cfg.seed, epoch, batch_index, 0};
      ForwardOutput fo = forward(&tape, mp, pb, /*train=*/true, dk);
      Tensor loss = huber_loss(&tape, fo.pred, pb, cfg.huber_delta);
      const double lval = loss.scalar();
      if (!std::isfinite(lval)) {
        throw NumericError("NONFINITE: training loss became " + std::to_string(lval) +
                           " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      train_loss_sum += lval * static_cast<double>(n);
      for (Tensor& p : params) p.zero_grad();
      tape.backward(loss);
      adam_step(params, adam, cfg, lr);
      ++batch_index;
    }

    const double train_loss = train_loss_sum / static_cast<double>(train_samples.size());
    const double val_loss = dataset_loss(mp, val_samples, cfg.batch_size, cfg.huber_delta);
    if (!std::isfinite(val_loss)) throw NumericError("NONFINITE: validation loss diverged");

    result.log.push_back({epoch, train_loss, val_loss, lr});
    if (result.best_val - val_loss >= cfg.min_improvement || result.best_epoch < 0) {
      result.best_val = val_loss;
      result.best_epoch = epoch;
      result.best = mp.clone();
    }
    lr = sched.update(val_loss);
    if (stopper.update(val_loss)) {
      result.early_stopped = true;
      break;
    }
  }
  if (result.best_epoch < 0) result.best = mp.clone();
  return result;
}

// ---------------------------------------------------------------------------
// Metrics

struct RegionMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

struct EvalResult {
  RegionMetrics ap, ar;
  std::size_t n = 0;
};

// Batched eval-mode predictions, one (AP, AR) pair per sample.
inline std::vector<Prediction> predict_all(ModelParams& mp,
                                           std::span<const SampleFeatures> samples,
                                           int batch_size = 256) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(samples.size() - at, static_cast<std::size_t>(batch_size));
    PaddedBatch pb = pad_batch(samples.subspan(at, n), mp.cfg.n_max, mp.cfg.d_in);
    ForwardOutput fo = forward(nullptr, mp, pb, /*train=*/false);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back({fo.pred.values()[i * 2], fo.pred.values()[i * 2 + 1]});
  }
  return out;
}

namespace detail {

inline RegionMetrics region_metrics(std::span<const double> y, std::span<const double> yhat) {
  RegionMetrics m;
  const std::size_t n = y.size();
  if (n == 0) return m;
  double abs_sum = 0.0, sq_sum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - yhat[i];
    abs_sum += std::abs(r);
    sq_sum += r * r;
    mean += y[i];
  }
  mean /= static_cast<double>(n);
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss_tot += (y[i] - mean) * (y[i] - mean);
  m.mae = abs_sum / static_cast<double>(n);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(n));
  // SS_tot = 0 means constant labels: perfect fit scores 1, anything else 0.
  m.r2 = ss_tot > 0.0 ? 1.0 - sq_sum / ss_tot : (sq_sum == 0.0 ? 1.0 : 0.0);
  return m;
}

}  // namespace detail

inline EvalResult evaluate(std::span<const SampleFeatures> samples,
                           std::span<const Prediction> preds) {
  if (samples.size() != preds.size()) throw DataError("evaluate size mismatch");
  std::vector<double> y_ap(samples.size()), y_ar(samples.size()), p_ap(samples.size()),
      p_ar(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    y_ap[i] = samples[i].y_ap;
    y_ar[i] = samples[i].y_ar;
    p_ap[i] = preds[i].y_ap_hat;
    p_ar[i] = preds[i].y_ar_hat;
  }
  EvalResult r;
  r.n = samples.size();
  r.ap = detail::region_metrics(y_ap, p_ap);
  r.ar = detail::region_metrics(y_ar, p_ar);
  return r;
}

// Twelve 2-hour bins over the day; per-bin per-region MAE with sample counts.
struct DaypartBin {
  int bin = 0;  // [2*bin, 2*bin + 2) hours
  std::size_t count = 0;
  double mae_ap = 0.0;  // meaningful only when count > 0
  double mae_ar = 0.0;
};

struct DaypartReport {
  std::array<DaypartBin, 12> bins{};
};

inline DaypartReport daypart_eval(std::span<const SampleFeatures> samples,
                                  std::span<const Prediction> preds) {
  if (samples.size() != preds.size()) throw DataError("daypart size mismatch");
  DaypartReport rep;
  for (int b = 0; b < 12; ++b) rep.bins[static_cast<std::size_t>(b)].bin = b;
  std::array<double, 12> sum_ap{}, sum_ar{};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double day_s = std::fmod(std::fmod(samples[i].t_s, 86400.0) + 86400.0, 86400.0);
    const int bin = std::min(11, static_cast<int>(day_s / 7200.0));
    auto& B = rep.bins[static_cast<std::size_t>(bin)];
    B.count += 1;
    sum_ap[static_cast<std::size_t>(bin)] += std::abs(samples[i].y_ap - preds[i].y_ap_hat);
    sum_ar[static_cast<std::size_t>(bin)] += std::abs(samples[i].y_ar - preds[i].y_ar_hat);
  }
  for (int b = 0; b < 12; ++b) {
    auto& B = rep.bins[static_cast<std::size_t>(b)];
    if (B.count > 0) {
      B.mae_ap = sum_ap[static_cast<std::size_t>(b)] / static_cast<double>(B.count);
      B.mae_ar = sum_ar[static_cast<std::size_t>(b)] / static_cast<double>(B.count);
    }
  }
  return rep;
}

}  // namespace aerosense
