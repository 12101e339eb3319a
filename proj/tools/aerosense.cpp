// Command-line entry points for the state-to-flow prediction toolkit:
// traffic simulation, dataset construction, training, evaluation, single
// snapshot inference and attention export.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "aerosense/baselines.hpp"
#include "aerosense/io.hpp"

namespace {

using namespace aerosense;

bool verbose() {
  const char* env = std::getenv("AEROSENSE_LOG");
  return env == nullptr || std::string(env) != "quiet";
}

void log_line(const std::string& msg) {
  if (verbose()) std::cerr << "[aerosense] " << msg << '\n';
}

std::vector<AdsbMessage> read_message_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open message file " + path);
  return read_messages(f);
}

std::vector<LabeledSample> read_sample_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open sample file " + path);
  return read_samples(f);
}

// Lenient single-snapshot record: labels and horizon are optional.
LabeledSample read_snapshot_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open snapshot file " + path);
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) break;
  if (line.empty()) throw DataError("snapshot file " + path + " is empty");
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("snapshot parse error: " + std::string(e.what()));
  }
  LabeledSample s;
  try {
    s.snapshot.t_s = j.at("t_s").get<double>();
    s.horizon_s = j.value("horizon_s", 0.0);
    s.y_ap = j.value("y_ap", 0);
    s.y_ar = j.value("y_ar", 0);
    for (const json& a : j.at("aircraft")) s.snapshot.aircraft.push_back(message_from_json(a));
  } catch (const json::exception& e) {
    throw DataError("snapshot record error: " + std::string(e.what()));
  }
  return s;
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& out_path) {
  RunConfig cfg = load_run_config(config_path);
  if (seed) cfg.sim.seed = *seed;
  log_line("simulating " + std::to_string(cfg.sim.duration_s) + " s of traffic, seed " +
           std::to_string(cfg.sim.seed));
  const auto messages = generate_traffic(cfg.sim, cfg.airspace);
  if (out_path == "-") {
    write_messages(std::cout, messages);
  } else {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot open " + out_path + " for writing");
    write_messages(out, messages);
    log_line("wrote " + std::to_string(messages.size()) + " messages to " + out_path);
  }
  return 0;
}

int cmd_build_dataset(const std::string& config_path, const std::string& messages_path,
                      const std::string& out_dir) {
  const RunConfig cfg = load_run_config(config_path);
  const auto messages = read_message_file(messages_path);
  const auto grid = default_t_grid(0.0, cfg.sim.duration_s, cfg.dataset.cadence_s,
                                   cfg.dataset.horizon_s);
  log_line("building " + std::to_string(grid.size()) + " snapshots");
  auto samples = make_dataset(messages, grid, cfg.dataset.horizon_s, cfg.dataset.delta_s,
                              cfg.airspace, 0.0, cfg.sim.duration_s);
  SplitView split = chronological_split(std::move(samples), cfg.dataset.split);
  const NormStats norm = fit_norm_stats(split.train, cfg.airspace);

  std::filesystem::create_directories(out_dir);
  auto dump = [&](const std::string& name, const std::vector<LabeledSample>& part) {
    const std::string path = out_dir + "/" + name;
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path + " for writing");
    write_samples(f, part);
    log_line(name + ": " + std::to_string(part.size()) + " samples");
  };
  dump("train.ndjson", split.train);
  dump("val.ndjson", split.val);
  dump("test.ndjson", split.test);

  std::ofstream nf(out_dir + "/norm_stats.json");
  nf << json{{"mean", std::vector<double>(norm.mean.begin(), norm.mean.end())},
             {"stddev", std::vector<double>(norm.stddev.begin(), norm.stddev.end())}}
            .dump(1)
     << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& train_path, const std::string& val_path,
              const std::string& model_out, const std::string& log_out) {
  RunConfig cfg = load_run_config(config_path);
  if (seed) cfg.training.seed = *seed;
  const auto train_samples = read_sample_file(train_path);
  const auto val_samples = read_sample_file(val_path);
  log_line("train " + std::to_string(train_samples.size()) + " / val " +
           std::to_string(val_samples.size()) + " samples");

  // normalization stats always come from the training split
  const NormStats norm = fit_norm_stats(train_samples, cfg.airspace);
  const auto train_feats = featurize_all(train_samples, norm, cfg.features, cfg.airspace);
  const auto val_feats = featurize_all(val_samples, norm, cfg.features, cfg.airspace);

  cfg.model.d_in = cfg.features.d_in();
  ModelParams params = ModelParams::init(cfg.model);
  TrainResult result = train(params, train_feats, val_feats, cfg.training);
  log_line("best epoch " + std::to_string(result.best_epoch) + ", val loss " +
           std::to_string(result.best_val) +
           (result.early_stopped ? " (early stop)" : ""));

  ModelBundle bundle{std::move(result.best), norm, cfg.features, cfg.airspace, cfg.dataset};
  save_model(model_out, bundle);
  log_line("saved model to " + model_out);

  if (!log_out.empty()) {
    std::ofstream lf(log_out);
    if (!lf) throw DataError("cannot open " + log_out + " for writing");
    lf << "epoch,train_loss,val_loss,lr\n" << std::setprecision(17);
    for (const EpochLog& e : result.log)
      lf << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
  }
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& test_path,
                 const std::string& out_dir, const std::string& linear_train,
                 const std::string& linear_val) {
  ModelBundle bundle = load_model(model_path);
  const auto test_samples = read_sample_file(test_path);
  const auto feats = featurize_all(test_samples, bundle.norm, bundle.groups, bundle.airspace);

  const auto preds = predict_all(bundle.params, feats);
  const EvalResult model_metrics = evaluate(feats, preds);
  const auto persist = baseline_persistence(test_samples, bundle.airspace);
  const EvalResult persist_metrics = evaluate(feats, persist);

  std::vector<std::pair<std::string, EvalResult>> rows = {{"model", model_metrics},
                                                          {"persistence", persist_metrics}};

  if (!linear_train.empty()) {
    auto history = read_sample_file(linear_train);
    if (!linear_val.empty()) {
      const auto val = read_sample_file(linear_val);
      history.insert(history.end(), val.begin(), val.end());
    }
    const std::size_t train_len = history.size();
    history.insert(history.end(), test_samples.begin(), test_samples.end());
    std::stable_sort(history.begin(), history.end(), [](const auto& a, const auto& b) {
      return a.snapshot.t_s < b.snapshot.t_s;
    });
    const FlowSeries series = flow_series_from_samples(history, bundle.airspace, 900.0);
    // grid index of the first test-time sample
    const double test_t0 = test_samples.front().snapshot.t_s;
    const auto eval_begin = static_cast<std::size_t>(
        std::max(0.0, std::ceil((test_t0 - series.t0_s) / series.step_s - 1e-9)));
    (void)train_len;
    if (series.size() > eval_begin + 1) {
      EvalResult lin;
      std::size_t covered = 0;
      for (int region = 0; region < 2; ++region) {
        const auto& s = region == 0 ? series.ap : series.ar;
        const LookbackEval ev = baseline_linear_lookback(s, eval_begin, eval_begin, 96);
        std::vector<SampleFeatures> ys;
        std::vector<Prediction> ps;
        for (std::size_t i = 0; i < ev.indices.size(); ++i) {
          SampleFeatures f;
          f.y_ap = series.ap[ev.indices[i]];
          f.y_ar = series.ar[ev.indices[i]];
          ys.push_back(std::move(f));
          Prediction pr;
          (region == 0 ? pr.y_ap_hat : pr.y_ar_hat) = ev.predictions[i];
          ps.push_back(pr);
        }
        const EvalResult r = evaluate(ys, ps);
        (region == 0 ? lin.ap : lin.ar) = region == 0 ? r.ap : r.ar;
        covered = ev.indices.size();
        if (ev.skipped > 0)
          log_line("linear look-back skipped " + std::to_string(ev.skipped) +
                   " grid points without history");
      }
      lin.n = covered;
      rows.emplace_back("linear_lookback_15min_grid", lin);
    } else {
      log_line("linear look-back: not enough contiguous 15-minute grid coverage, skipped");
    }
  }

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream mf(out_dir + "/metrics.csv");
    if (!mf) throw DataError("cannot open metrics.csv for writing");
    write_metrics_csv(mf, rows);
  }
  {
    std::ofstream df(out_dir + "/daypart.csv");
    if (!df) throw DataError("cannot open daypart.csv for writing");
    write_daypart_csv(df, daypart_eval(feats, preds));
  }
  log_line("model    AP mae " + std::to_string(model_metrics.ap.mae) + "  AR mae " +
           std::to_string(model_metrics.ar.mae));
  log_line("persist  AP mae " + std::to_string(persist_metrics.ap.mae) + "  AR mae " +
           std::to_string(persist_metrics.ar.mae));
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& snapshot_path) {
  ModelBundle bundle = load_model(model_path);
  const LabeledSample s = read_snapshot_file(snapshot_path);
  const SampleFeatures f = featurize(s, bundle.norm, bundle.groups, bundle.airspace);
  const Prediction p = predict_one(bundle.params, f);
  std::cout << json{{"t_s", s.snapshot.t_s},
                    {"n_aircraft", f.count},
                    {"y_ap_hat", p.y_ap_hat},
                    {"y_ar_hat", p.y_ar_hat}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_export_attention(const std::string& model_path, const std::string& snapshot_path,
                         const std::string& out_path) {
  ModelBundle bundle = load_model(model_path);
  const LabeledSample s = read_snapshot_file(snapshot_path);
  const json j = export_attention_json(bundle, s);
  std::ofstream f(out_path);
  if (!f) throw DataError("cannot open " + out_path + " for writing");
  f << j.dump(1) << '\n';
  log_line("wrote attention export for " + std::to_string(j.at("n_aircraft").get<int>()) +
           " aircraft to " + out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aerosense: state-to-flow terminal-airspace traffic prediction"};
  app.require_subcommand(1);

  std::string config_path, out_path, messages_path, out_dir, train_path, val_path, test_path;
  std::string model_path, snapshot_path, log_path, linear_train, linear_val;
  std::optional<std::uint64_t> seed;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic message stream");
  sim->add_option("--config", config_path, "run configuration")->required();
  sim->add_option("--seed", seed, "override the simulation seed");
  sim->add_option("out,--out", out_path, "output message file (ndjson), - for stdout")->required();

  auto* build = app.add_subcommand("build-dataset", "snapshots, labels and chronological splits");
  build->add_option("--config", config_path, "run configuration")->required();
  build->add_option("messages", messages_path, "input message file")->required();
  build->add_option("out_dir,--out", out_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train the model");
  tr->add_option("--config", config_path, "run configuration")->required();
  tr->add_option("--seed", seed, "override the training seed");
  tr->add_option("--log", log_path, "training log CSV path");
  tr->add_option("train", train_path, "training split (ndjson)")->required();
  tr->add_option("val", val_path, "validation split (ndjson)")->required();
  tr->add_option("model_out,--out", out_path, "output model file")->required();

  auto* ev = app.add_subcommand("evaluate", "metrics and dayparting report on a test split");
  ev->add_option("--linear-train", linear_train,
                 "training split for the linear look-back baseline");
  ev->add_option("--linear-val", linear_val, "validation split appended to the look-back history");
  ev->add_option("model", model_path, "model file")->required();
  ev->add_option("test", test_path, "test split (ndjson)")->required();
  ev->add_option("out_dir,--out", out_dir, "report directory")->required();

  auto* pr = app.add_subcommand("predict", "single-snapshot inference");
  pr->add_option("model", model_path, "model file")->required();
  pr->add_option("snapshot", snapshot_path, "snapshot record (json)")->required();

  auto* ex = app.add_subcommand("export-attention", "attention matrices and influence scores");
  ex->add_option("model", model_path, "model file")->required();
  ex->add_option("snapshot", snapshot_path, "snapshot record (json)")->required();
  ex->add_option("out,--out", out_path, "output json path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are configuration errors
  }

  try {
    if (sim->parsed()) return cmd_simulate(config_path, seed, out_path);
    if (build->parsed()) return cmd_build_dataset(config_path, messages_path, out_dir);
    if (tr->parsed()) return cmd_train(config_path, seed, train_path, val_path, out_path, log_path);
    if (ev->parsed()) return cmd_evaluate(model_path, test_path, out_dir, linear_train, linear_val);
    if (pr->parsed()) return cmd_predict(model_path, snapshot_path);
    if (ex->parsed()) return cmd_export_attention(model_path, snapshot_path, out_path);
  } catch (const aerosense::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const aerosense::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const aerosense::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
