// File formats: newline-delimited message and sample records, the run
// configuration document, the versioned model parameter container (weights +
// batch-norm running stats + normalization stats + hyperparameters), metric
// CSVs and the attention export.
#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "aerosense/baselines.hpp"
#include "aerosense/common.hpp"
#include "aerosense/features.hpp"
#include "aerosense/geometry.hpp"
#include "aerosense/model.hpp"
#include "aerosense/simulator.hpp"
#include "aerosense/snapshot.hpp"
#include "aerosense/training.hpp"

namespace aerosense {

using json = nlohmann::ordered_json;

constexpr int kModelFormatVersion = 1;

// ---------------------------------------------------------------------------
// Message and sample records (one JSON object per line)

inline json message_to_json(const AdsbMessage& m) {
  return json{{"aircraft_id", m.aircraft_id}, {"t_s", m.t_s},
              {"lat_deg", m.pos.lat_deg},     {"lon_deg", m.pos.lon_deg},
              {"alt_m", m.pos.alt_m},         {"v_gs_kmh", m.v_gs_kmh},
              {"v_vs_ms", m.v_vs_ms},         {"heading_deg", m.heading_deg},
              {"v_dial_kmh", m.v_dial_kmh},   {"h_dial_m", m.h_dial_m}};
}

inline AdsbMessage message_from_json(const json& j) {
  AdsbMessage m;
  m.aircraft_id = j.at("aircraft_id").get<std::string>();
  m.t_s = j.at("t_s").get<double>();
  m.pos.lat_deg = j.at("lat_deg").get<double>();
  m.pos.lon_deg = j.at("lon_deg").get<double>();
  m.pos.alt_m = j.at("alt_m").get<double>();
  m.v_gs_kmh = j.at("v_gs_kmh").get<double>();
  m.v_vs_ms = j.at("v_vs_ms").get<double>();
  m.heading_deg = j.at("heading_deg").get<double>();
  m.v_dial_kmh = j.at("v_dial_kmh").get<double>();
  m.h_dial_m = j.at("h_dial_m").get<double>();
  return m;
}

inline void write_messages(std::ostream& os, std::span<const AdsbMessage> messages) {
  for (const AdsbMessage& m : messages) os << message_to_json(m).dump() << '\n';
}

inline std::vector<AdsbMessage> read_messages(std::istream& is) {
  std::vector<AdsbMessage> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(message_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("bad message record at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline json sample_to_json(const LabeledSample& s) {
  json aircraft = json::array();
  for (const AdsbMessage& m : s.snapshot.aircraft) aircraft.push_back(message_to_json(m));
  return json{{"t_s", s.snapshot.t_s},
              {"horizon_s", s.horizon_s},
              {"y_ap", s.y_ap},
              {"y_ar", s.y_ar},
              {"aircraft", std::move(aircraft)}};
}

inline LabeledSample sample_from_json(const json& j) {
  LabeledSample s;
  s.snapshot.t_s = j.at("t_s").get<double>();
  s.horizon_s = j.at("horizon_s").get<double>();
  s.y_ap = j.at("y_ap").get<int>();
  s.y_ar = j.at("y_ar").get<int>();
  for (const json& a : j.at("aircraft")) s.snapshot.aircraft.push_back(message_from_json(a));
  return s;
}

inline void write_samples(std::ostream& os, std::span<const LabeledSample> samples) {
  for (const LabeledSample& s : samples) os << sample_to_json(s).dump() << '\n';
}

inline std::vector<LabeledSample> read_samples(std::istream& is) {
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("bad sample record at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration

struct DatasetParams {
  double delta_s = 8.0;
  double horizon_s = 900.0;
  double cadence_s = 60.0;
  std::array<double, 3> split = {0.8, 0.1, 0.1};

  void validate() const {
    if (!(delta_s > 0) || !(horizon_s >= 0) || !(cadence_s > 0))
      throw ConfigError("invalid dataset parameters");
  }
};

struct RunConfig {
  AirspaceConfig airspace;
  SimConfig sim;
  DatasetParams dataset;
  ModelConfig model;
  FeatureGroups features;
  TrainConfig training;
};

namespace detail {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

inline Region region_from_json(const json& j, RegionId id) {
  Region r;
  r.id = id;
  for (const json& v : j.at("footprint_km"))
    r.footprint.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
  r.z_min_km = j.at("alt_band_km").at(0).get<double>();
  r.z_max_km = j.at("alt_band_km").at(1).get<double>();
  r.center = {j.at("center_km").at(0).get<double>(), j.at("center_km").at(1).get<double>(),
              j.at("center_km").at(2).get<double>()};
  return r;
}

inline json region_to_json(const Region& r) {
  json fp = json::array();
  for (const auto& v : r.footprint) fp.push_back({v[0], v[1]});
  return json{{"footprint_km", std::move(fp)},
              {"alt_band_km", {r.z_min_km, r.z_max_km}},
              {"center_km", {r.center.x_km, r.center.y_km, r.center.z_km}}};
}

inline AirspaceConfig airspace_from_json(const json& j) {
  AirspaceConfig a;
  const json& o = j.at("origin");
  a.origin = {o.at("lat_deg").get<double>(), o.at("lon_deg").get<double>(),
              get_or(o, "alt_m", 0.0)};
  a.ap = region_from_json(j.at("ap"), RegionId::AP);
  a.ar = region_from_json(j.at("ar"), RegionId::AR);
  a.buffer_km = get_or(j, "buffer_km", 100.0);
  a.validate();
  return a;
}

inline json airspace_to_json(const AirspaceConfig& a) {
  return json{{"origin",
               {{"lat_deg", a.origin.lat_deg}, {"lon_deg", a.origin.lon_deg}, {"alt_m", a.origin.alt_m}}},
              {"buffer_km", a.buffer_km},
              {"ap", region_to_json(a.ap)},
              {"ar", region_to_json(a.ar)}};
}

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "sum") return Pooling::Sum;
  if (s == "mean") return Pooling::Mean;
  if (s == "max") return Pooling::Max;
  throw ConfigError("unknown pooling '" + s + "' (expected sum|mean|max)");
}

inline std::string pooling_to_string(Pooling p) {
  switch (p) {
    case Pooling::Sum: return "sum";
    case Pooling::Mean: return "mean";
    case Pooling::Max: return "max";
  }
  return "sum";
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.d_in = get_or(j, "d_in", m.d_in);
  m.n_max = get_or(j, "n_max", m.n_max);
  m.d_model = get_or(j, "d_model", m.d_model);
  m.heads = get_or(j, "heads", m.heads);
  m.encoder_dims = get_or(j, "encoder_dims", m.encoder_dims);
  m.head_hidden = get_or(j, "head_hidden", m.head_hidden);
  m.dropout_p = get_or(j, "dropout_p", m.dropout_p);
  m.attention_blocks = get_or(j, "attention_blocks", m.attention_blocks);
  m.pooling = pooling_from_string(get_or<std::string>(j, "pooling", "sum"));
  m.masked_attention = get_or(j, "masked_attention", m.masked_attention);
  m.decoupled_heads = get_or(j, "decoupled_heads", m.decoupled_heads);
  m.bn_momentum = get_or(j, "bn_momentum", m.bn_momentum);
  m.init_seed = get_or(j, "init_seed", m.init_seed);
  return m;
}

inline json model_to_json(const ModelConfig& m) {
  return json{{"d_in", m.d_in},
              {"n_max", m.n_max},
              {"d_model", m.d_model},
              {"heads", m.heads},
              {"encoder_dims", m.encoder_dims},
              {"head_hidden", m.head_hidden},
              {"dropout_p", m.dropout_p},
              {"attention_blocks", m.attention_blocks},
              {"pooling", pooling_to_string(m.pooling)},
              {"masked_attention", m.masked_attention},
              {"decoupled_heads", m.decoupled_heads},
              {"bn_momentum", m.bn_momentum},
              {"init_seed", m.init_seed}};
}

inline FeatureGroups features_from_json(const json& j) {
  FeatureGroups f;
  f.f_l = get_or(j, "f_l", true);
  f.f_k = get_or(j, "f_k", true);
  f.f_c = get_or(j, "f_c", true);
  f.f_b = get_or(j, "f_b", true);
  f.f_t = get_or(j, "f_t", true);
  return f;
}

inline json features_to_json(const FeatureGroups& f) {
  return json{{"f_l", f.f_l}, {"f_k", f.f_k}, {"f_c", f.f_c}, {"f_b", f.f_b}, {"f_t", f.f_t}};
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.airspace = detail::airspace_from_json(j.at("airspace"));

    if (j.contains("simulation")) {
      const json& s = j.at("simulation");
      c.sim.seed = detail::get_or<std::uint64_t>(s, "seed", 1);
      c.sim.duration_s = detail::get_or(s, "duration_s", 86400.0);
      c.sim.hourly_rate = s.at("hourly_rate").get<std::vector<double>>();
      c.sim.msg_period_s = detail::get_or(s, "msg_period_s", 4.0);
      c.sim.drop_prob = detail::get_or(s, "drop_prob", 0.1);
      if (s.contains("kind_mix")) {
        const auto mix = s.at("kind_mix").get<std::vector<double>>();
        if (mix.size() != 3) throw ConfigError("kind_mix needs 3 entries");
        c.sim.kind_mix = {mix[0], mix[1], mix[2]};
      }
      c.sim.validate();
    }

    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      c.dataset.delta_s = detail::get_or(d, "delta_s", 8.0);
      c.dataset.horizon_s = detail::get_or(d, "horizon_s", 900.0);
      c.dataset.cadence_s = detail::get_or(d, "cadence_s", 60.0);
      if (d.contains("split")) {
        const auto sp = d.at("split").get<std::vector<double>>();
        if (sp.size() != 3) throw ConfigError("split needs 3 ratios");
        c.dataset.split = {sp[0], sp[1], sp[2]};
      }
      c.dataset.validate();
    }

    if (j.contains("features")) c.features = detail::features_from_json(j.at("features"));
    if (j.contains("model")) c.model = detail::model_from_json(j.at("model"));
    c.model.d_in = c.features.d_in();
    c.model.validate();

    if (j.contains("training")) {
      const json& t = j.at("training");
      c.training.lr = detail::get_or(t, "lr", 3e-4);
      c.training.batch_size = detail::get_or(t, "batch_size", 64);
      c.training.max_epochs = detail::get_or(t, "max_epochs", 100);
      c.training.early_stop_patience = detail::get_or(t, "early_stop_patience", 10);
      c.training.plateau_patience = detail::get_or(t, "plateau_patience", 5);
      c.training.plateau_factor = detail::get_or(t, "plateau_factor", 0.5);
      c.training.huber_delta = detail::get_or(t, "huber_delta", 1.0);
      c.training.seed = detail::get_or<std::uint64_t>(t, "seed", 1);
      c.training.adam_beta1 = detail::get_or(t, "adam_beta1", 0.9);
      c.training.adam_beta2 = detail::get_or(t, "adam_beta2", 0.999);
      c.training.adam_eps = detail::get_or(t, "adam_eps", 1e-8);
      c.training.validate();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run configuration: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Model parameter container

struct ModelBundle {
  ModelParams params;
  NormStats norm;
  FeatureGroups groups;
  AirspaceConfig airspace;
  DatasetParams dataset;
};

namespace detail {

inline json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.values()}};
}

// Checked before any json node is built so the error never unwinds through
// half-constructed initializer lists.
inline void ensure_finite_params(const ModelParams& p) {
  auto check = [](const Tensor& t) {
    if (!t.defined()) return;
    for (double v : t.values())
      if (!std::isfinite(v))
        throw NumericError("NONFINITE: refusing to serialize non-finite weights");
  };
  for (const EncoderLayer& l : p.encoder) {
    check(l.w);
    check(l.b);
    check(l.bn_gain);
    check(l.bn_bias);
    for (double v : l.bn.running_mean)
      if (!std::isfinite(v)) throw NumericError("NONFINITE: batch-norm running mean");
    for (double v : l.bn.running_var)
      if (!std::isfinite(v)) throw NumericError("NONFINITE: batch-norm running variance");
  }
  for (const AttentionBlock& b : p.blocks) {
    for (const Tensor& t : b.wq) check(t);
    for (const Tensor& t : b.wk) check(t);
    for (const Tensor& t : b.wv) check(t);
    check(b.wo);
    check(b.ln_gain);
    check(b.ln_bias);
  }
  for (const DecoderHead* h : {&p.head_ap, &p.head_ar, &p.head_shared}) {
    check(h->w1);
    check(h->b1);
    check(h->w2);
    check(h->b2);
  }
}

inline Tensor tensor_from_json(const json& j, bool requires_grad = true) {
  return Tensor::from(j.at("shape").get<std::vector<int>>(),
                      j.at("data").get<std::vector<double>>(), requires_grad);
}

inline json head_to_json(const DecoderHead& h) {
  return json{{"w1", tensor_to_json(h.w1)},
              {"b1", tensor_to_json(h.b1)},
              {"w2", tensor_to_json(h.w2)},
              {"b2", tensor_to_json(h.b2)}};
}

inline DecoderHead head_from_json(const json& j) {
  DecoderHead h;
  h.w1 = tensor_from_json(j.at("w1"));
  h.b1 = tensor_from_json(j.at("b1"));
  h.w2 = tensor_from_json(j.at("w2"));
  h.b2 = tensor_from_json(j.at("b2"));
  return h;
}

}  // namespace detail

inline json model_bundle_to_json(const ModelBundle& b) {
  detail::ensure_finite_params(b.params);
  json enc = json::array();
  for (const EncoderLayer& l : b.params.encoder) {
    enc.push_back(json{{"w", detail::tensor_to_json(l.w)},
                       {"b", detail::tensor_to_json(l.b)},
                       {"bn_gain", detail::tensor_to_json(l.bn_gain)},
                       {"bn_bias", detail::tensor_to_json(l.bn_bias)},
                       {"bn_running_mean", l.bn.running_mean},
                       {"bn_running_var", l.bn.running_var}});
  }
  json blocks = json::array();
  for (const AttentionBlock& blk : b.params.blocks) {
    json wq = json::array(), wk = json::array(), wv = json::array();
    for (const Tensor& t : blk.wq) wq.push_back(detail::tensor_to_json(t));
    for (const Tensor& t : blk.wk) wk.push_back(detail::tensor_to_json(t));
    for (const Tensor& t : blk.wv) wv.push_back(detail::tensor_to_json(t));
    blocks.push_back(json{{"wq", std::move(wq)},
                          {"wk", std::move(wk)},
                          {"wv", std::move(wv)},
                          {"wo", detail::tensor_to_json(blk.wo)},
                          {"ln_gain", detail::tensor_to_json(blk.ln_gain)},
                          {"ln_bias", detail::tensor_to_json(blk.ln_bias)}});
  }
  json params{{"encoder", std::move(enc)}, {"blocks", std::move(blocks)}};
  if (b.params.cfg.decoupled_heads) {
    params["head_ap"] = detail::head_to_json(b.params.head_ap);
    params["head_ar"] = detail::head_to_json(b.params.head_ar);
  } else {
    params["head_shared"] = detail::head_to_json(b.params.head_shared);
  }

  return json{{"format_version", kModelFormatVersion},
              {"model", detail::model_to_json(b.params.cfg)},
              {"features", detail::features_to_json(b.groups)},
              {"norm_stats",
               {{"mean", std::vector<double>(b.norm.mean.begin(), b.norm.mean.end())},
                {"stddev", std::vector<double>(b.norm.stddev.begin(), b.norm.stddev.end())}}},
              {"airspace", detail::airspace_to_json(b.airspace)},
              {"dataset",
               {{"delta_s", b.dataset.delta_s},
                {"horizon_s", b.dataset.horizon_s},
                {"cadence_s", b.dataset.cadence_s}}},
              {"params", std::move(params)}};
}

inline ModelBundle model_bundle_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kModelFormatVersion)
    throw DataError("unsupported model format version");
  ModelBundle b;
  b.params.cfg = detail::model_from_json(j.at("model"));
  b.params.cfg.validate();
  b.groups = detail::features_from_json(j.at("features"));
  const auto mean = j.at("norm_stats").at("mean").get<std::vector<double>>();
  const auto sd = j.at("norm_stats").at("stddev").get<std::vector<double>>();
  if (mean.size() != kNormalizedDim || sd.size() != kNormalizedDim)
    throw DataError("norm_stats has wrong width");
  std::copy(mean.begin(), mean.end(), b.norm.mean.begin());
  std::copy(sd.begin(), sd.end(), b.norm.stddev.begin());
  b.airspace = detail::airspace_from_json(j.at("airspace"));
  const json& d = j.at("dataset");
  b.dataset.delta_s = d.at("delta_s").get<double>();
  b.dataset.horizon_s = d.at("horizon_s").get<double>();
  b.dataset.cadence_s = d.at("cadence_s").get<double>();

  const json& p = j.at("params");
  for (const json& l : p.at("encoder")) {
    EncoderLayer e;
    e.w = detail::tensor_from_json(l.at("w"));
    e.b = detail::tensor_from_json(l.at("b"));
    e.bn_gain = detail::tensor_from_json(l.at("bn_gain"));
    e.bn_bias = detail::tensor_from_json(l.at("bn_bias"));
    e.bn.running_mean = l.at("bn_running_mean").get<std::vector<double>>();
    e.bn.running_var = l.at("bn_running_var").get<std::vector<double>>();
    b.params.encoder.push_back(std::move(e));
  }
  for (const json& blk : p.at("blocks")) {
    AttentionBlock a;
    for (const json& t : blk.at("wq")) a.wq.push_back(detail::tensor_from_json(t));
    for (const json& t : blk.at("wk")) a.wk.push_back(detail::tensor_from_json(t));
    for (const json& t : blk.at("wv")) a.wv.push_back(detail::tensor_from_json(t));
    a.wo = detail::tensor_from_json(blk.at("wo"));
    a.ln_gain = detail::tensor_from_json(blk.at("ln_gain"));
    a.ln_bias = detail::tensor_from_json(blk.at("ln_bias"));
    b.params.blocks.push_back(std::move(a));
  }
  if (b.params.cfg.decoupled_heads) {
    b.params.head_ap = detail::head_from_json(p.at("head_ap"));
    b.params.head_ar = detail::head_from_json(p.at("head_ar"));
  } else {
    b.params.head_shared = detail::head_from_json(p.at("head_shared"));
  }
  return b;
}

inline void save_model(const std::string& path, const ModelBundle& b) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << model_bundle_to_json(b).dump(1) << '\n';
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open model file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("model file parse error: " + std::string(e.what()));
  }
  try {
    return model_bundle_from_json(j);
  } catch (const json::exception& e) {
    throw DataError("model file structure error: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Reports

inline void write_metrics_csv(std::ostream& os,
                              const std::vector<std::pair<std::string, EvalResult>>& rows) {
  os << "predictor,region,mae,rmse,r2,n\n";
  os << std::setprecision(10);
  for (const auto& [name, r] : rows) {
    os << name << ",AP," << r.ap.mae << ',' << r.ap.rmse << ',' << r.ap.r2 << ',' << r.n << '\n';
    os << name << ",AR," << r.ar.mae << ',' << r.ar.rmse << ',' << r.ar.r2 << ',' << r.n << '\n';
  }
}

inline void write_daypart_csv(std::ostream& os, const DaypartReport& rep) {
  os << "bin_start_hour,bin_end_hour,count,mae_ap,mae_ar\n";
  os << std::setprecision(10);
  for (const DaypartBin& b : rep.bins) {
    os << 2 * b.bin << ',' << 2 * b.bin + 2 << ',' << b.count << ',';
    if (b.count > 0)
      os << b.mae_ap << ',' << b.mae_ar << '\n';
    else
      os << ",\n";  // empty bin: MAE undefined, reported absent
  }
}

// Attention export for one snapshot: per-head valid-block matrices, per-head
// influence (column sums of attention received) and aircraft positions.
inline json export_attention_json(ModelBundle& bundle, const LabeledSample& sample) {
  SampleFeatures f = featurize(sample, bundle.norm, bundle.groups, bundle.airspace);
  PaddedBatch pb = pad_batch(std::span<const SampleFeatures>(&f, 1), bundle.params.cfg.n_max,
                             bundle.params.cfg.d_in);
  ForwardOutput fo = forward(nullptr, bundle.params, pb, /*train=*/false);

  const int n = f.count;
  json heads = json::array();
  json influence = json::array();
  for (const Tensor& attn : fo.attention) {
    const int ne = attn.dim(1);
    json mat = json::array();
    std::vector<double> col_sum(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      json row = json::array();
      for (int j = 0; j < n; ++j) {
        const double a = attn.values()[static_cast<std::size_t>(i) * ne + j];
        row.push_back(a);
        col_sum[static_cast<std::size_t>(j)] += a;
      }
      mat.push_back(std::move(row));
    }
    heads.push_back(std::move(mat));
    influence.push_back(col_sum);
  }

  json aircraft = json::array();
  for (const AdsbMessage& m : sample.snapshot.aircraft) {
    const EnuPoint p = to_enu(m.pos, bundle.airspace.origin);
    aircraft.push_back(json{{"aircraft_id", m.aircraft_id},
                            {"lat_deg", m.pos.lat_deg},
                            {"lon_deg", m.pos.lon_deg},
                            {"alt_m", m.pos.alt_m},
                            {"x_km", p.x_km},
                            {"y_km", p.y_km}});
  }

  return json{{"t_s", sample.snapshot.t_s},
              {"n_aircraft", n},
              {"heads", bundle.params.cfg.heads},
              {"blocks", bundle.params.cfg.attention_blocks},
              {"prediction", {{"y_ap_hat", fo.pred.values()[0]}, {"y_ar_hat", fo.pred.values()[1]}}},
              {"attention", std::move(heads)},
              {"influence", std::move(influence)},
              {"aircraft", std::move(aircraft)}};
}

}  // namespace aerosense
