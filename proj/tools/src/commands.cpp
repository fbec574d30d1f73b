#include "dnet_cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "detectornet/checkpoint.hpp"
#include "detectornet/error.hpp"
#include "detectornet/gradcheck.hpp"
#include "dnet_cli/config.hpp"

#ifndef DNET_VERSION
#define DNET_VERSION "unknown"
#endif

namespace dnet::cli {
namespace {

namespace fs = std::filesystem;

/// Failure after arguments were accepted (bad data, numerics). Exit status 1.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot read '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".dnet.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw RunError("output directory '" + dir.string() + "' is in use by another dnet run (" + path_.string() +
                     " exists)");
    }
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

struct Options {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::vector<std::string> ablate;
  std::string checkpoint;
  std::string baseline;
  std::string predictions;
  bool untrained = false;
};

RunSettings resolve(const Options& o) {
  RunSettings s;
  for (const auto& c : o.configs) s.load_file(c);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    s.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) s.set("seed", std::to_string(*o.seed));
  if (!o.output.empty()) s.set("output.dir", o.output);
  if (s.get("output.dir").empty()) {
    const char* env = std::getenv("DNET_OUTPUT_DIR");
    s.set("output.dir", env && *env ? env : "dnet-out");
  }
  return s;
}

fs::path input_file(const RunSettings& s, const std::string& key) {
  const std::string& v = s.get(key);
  if (v.empty()) throw UsageError("config key '" + key + "' is required");
  if (!fs::is_regular_file(v)) throw UsageError("config key '" + key + "': file '" + v + "' not found");
  return v;
}

struct LoadedData {
  std::shared_ptr<const DetectorSeries> series;
  DetectorGraph graph;
};

LoadedData load_data(const RunSettings& s) {
  const fs::path series_path = input_file(s, "data.series");
  const fs::path adj_path = input_file(s, "data.adjacency");
  LoadedData d;
  d.series = std::make_shared<DetectorSeries>(load_series_csv(series_path));
  std::optional<double> sigma;
  if (s.get("data.sigma") != "auto") sigma = s.number("data.sigma");
  d.graph = DetectorGraph::from_adjacency(
      load_adjacency_csv(adj_path, d.series->node_ids, sigma, s.number("data.threshold")));
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw RunError("cannot write '" + path.string() + "'");
}

int cmd_synth(const RunSettings& s, std::ostream& out) {
  const SynthOptions opts = s.synth_options();
  const fs::path dir = s.get("output.dir");
  OutputLock lock(dir);
  const SyntheticDataset d = synthesize_dataset(opts);
  write_series_csv(dir / "series.csv", d.series);
  write_edges_csv(dir / "adjacency.csv", d.edges);
  out << "wrote " << (dir / "series.csv").string() << " (" << d.series.steps() << " steps x " << d.series.nodes()
      << " nodes)\n";
  out << "wrote " << (dir / "adjacency.csv").string() << " (" << d.edges.size() << " edges)\n";
  return 0;
}

int cmd_train(RunSettings& s, const Options& o, std::ostream& out) {
  if (!o.ablate.empty()) {
    std::string flags = s.get("model.ablate");
    for (const auto& f : o.ablate) flags += (flags.empty() ? "" : ",") + f;
    s.set("model.ablate", flags);
  }
  const LoadedData d = load_data(s);
  ModelConfig model = s.model_config(d.series->nodes());
  const TrainRunConfig run = s.train_config();
  try {
    model.validate();
    run.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const DataSplits splits = make_windows(d.series, s.window_options());

  const fs::path dir = s.get("output.dir");
  OutputLock lock(dir);
  const fs::path manifest_path = dir / "manifest.json";
  const fs::path checkpoint_path = dir / "checkpoint.dnet";
  const fs::path trace_path = dir / "loss_trace.csv";
  nlohmann::json manifest{
      {"tool", "dnet"},
      {"version", DNET_VERSION},
      {"command", "train"},
      {"seed", s.seed()},
      {"ablation", model.ablation.enabled_flags()},
      {"config", s.to_json()},
      {"inputs",
       {{"data.series", {{"path", s.get("data.series")}, {"sha256", sha256_file(s.get("data.series"))}}},
        {"data.adjacency", {{"path", s.get("data.adjacency")}, {"sha256", sha256_file(s.get("data.adjacency"))}}}}},
      {"windows", {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}},
      {"outputs",
       {{"manifest", manifest_path.string()}, {"checkpoint", checkpoint_path.string()}, {"loss_trace", trace_path.string()}}},
      {"parameters", parameter_count(model)},
  };
  write_text(manifest_path, manifest.dump(2) + "\n");

  const TrainResult result = train(model, d.graph, splits, run, [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " lr " << e.lr << " train_loss " << e.train_loss;
    if (e.val_mae) out << " val_mae " << *e.val_mae;
    out << " (" << std::fixed << std::setprecision(2) << e.seconds << "s)" << std::defaultfloat
        << std::setprecision(6) << '\n';
  });
  save_checkpoint(checkpoint_path, result.best);
  write_text(trace_path, result.loss_trace_csv());
  out << "best epoch " << result.best_epoch << " score " << result.best_score
      << (result.early_stopped ? " (early stop)" : "") << '\n';
  out << "wrote " << checkpoint_path.string() << '\n';
  return 0;
}

struct Restored {
  LoadedData data;
  DataSplits splits;
  std::unique_ptr<DetectorNet> model;
};

Restored restore(const RunSettings& s, const Options& o) {
  Restored r;
  r.data = load_data(s);
  if (o.untrained) {
    ModelConfig c = s.model_config(r.data.series->nodes());
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    r.splits = make_windows(r.data.series, s.window_options());
    r.model = std::make_unique<DetectorNet>(c, r.data.graph);
    return r;
  }
  const fs::path path = o.checkpoint.empty() ? fs::path(s.get("output.dir")) / "checkpoint.dnet" : fs::path(o.checkpoint);
  if (!fs::is_regular_file(path)) throw UsageError("checkpoint '" + path.string() + "' not found");
  const Checkpoint ck = load_checkpoint(path);
  if (ck.config.nodes != r.data.series->nodes()) {
    throw UsageError("checkpoint has " + std::to_string(ck.config.nodes) + " nodes, series has " +
                     std::to_string(r.data.series->nodes()));
  }
  WindowOptions w = s.window_options();
  w.input_len = ck.config.input_len;
  w.output_len = ck.config.output_len;
  w.input_dim = ck.config.input_dim;
  r.splits = make_windows(r.data.series, w, ck.norm);
  r.model = std::make_unique<DetectorNet>(ck.config, r.data.graph);
  restore_parameters(*r.model, ck);
  return r;
}

int cmd_eval(const RunSettings& s, const Options& o, std::ostream& out) {
  if (!o.baseline.empty() && o.baseline != "ha") throw UsageError("--baseline supports only 'ha'");
  const Restored r = restore(s, o);
  std::vector<std::size_t> horizons = s.horizons();
  const std::size_t q = r.model->config().output_len;
  for (std::size_t h : horizons) {
    if (h > q) throw UsageError("config key 'eval.horizons': horizon " + std::to_string(h) + " exceeds Q = " + std::to_string(q));
  }
  if (r.splits.test.empty()) throw RunError("test split is empty");
  const fs::path dir = s.get("output.dir");
  OutputLock lock(dir);
  const Evaluation model_eval = evaluate_model(*r.model, r.splits.test, horizons, s.count("train.batch_size"));
  std::string lines = model_eval.report.to_json_lines("detectornet");
  if (o.baseline == "ha") lines += evaluate_historical_average(r.splits.test, horizons).report.to_json_lines("ha");
  write_text(dir / "metrics.jsonl", lines);
  out << lines;
  return 0;
}

int cmd_predict(const RunSettings& s, const Options& o, std::ostream& out) {
  const Restored r = restore(s, o);
  if (r.splits.test.empty()) throw RunError("test split is empty");
  const fs::path dir = s.get("output.dir");
  OutputLock lock(dir);
  const fs::path path = o.predictions.empty() ? dir / "predictions.csv" : fs::path(o.predictions);
  const Tensor pred = predict(*r.model, r.splits.test, s.count("train.batch_size"));
  const SampleBatch all = r.splits.test.all();
  const std::size_t n = r.model->config().nodes, p = r.model->config().input_len, q = r.model->config().output_len;
  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "timestamp,node,horizon,prediction,truth\n";
  const auto& series = *r.data.series;
  for (std::size_t w = 0; w < all.size(); ++w) {
    for (std::size_t node = 0; node < n; ++node) {
      for (std::size_t h = 0; h < q; ++h) {
        const std::size_t idx = (w * n + node) * q + h;
        csv << format_timestamp(series.timestamps[all.offsets[w] + p + h]) << ',' << series.node_ids[node] << ','
            << h + 1 << ',' << pred.values()[idx] << ',' << all.targets.values()[idx] << '\n';
      }
    }
  }
  write_text(path, csv.str());
  out << "wrote " << path.string() << " (" << all.size() << " windows)\n";
  return 0;
}

int cmd_gradcheck(const RunSettings& s, std::ostream& out) {
  const GradCheckReport r = gradient_check_model(tiny_gradcheck_config(), s.seed());
  out << r.to_text();
  out << "seconds " << r.seconds << '\n';
  const auto failed = r.failures(1e-3);
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    throw RunError("gradient check failed (relative error > 1e-3) for: " + names);
  }
  return 0;
}

std::string keys_footer() {
  std::ostringstream f;
  f << "Config keys (flat 'key = value' lines, '#' comments; defaults shown):\n";
  std::size_t width = 0;
  for (const auto& k : config_keys()) width = std::max(width, std::string(k.key).size() + std::string(k.default_value).size() + 3);
  for (const auto& k : config_keys()) {
    std::string left = std::string(k.key) + " = " + k.default_value;
    f << "  " << left << std::string(width - left.size() + 2, ' ') << k.help << '\n';
  }
  f << "\nEnvironment: DNET_OUTPUT_DIR sets the default output directory.";
  return f.str();
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("-c,--config", o.configs, "config file (key = value) or manifest.json; repeatable");
  sub->add_option("--set", o.sets, "override one key, e.g. --set train.epochs=5; repeatable");
  sub->add_option("--seed", o.seed, "override the 'seed' key");
  sub->add_option("-o,--output", o.output, "override 'output.dir'");
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DetectorNet spatio-temporal traffic forecasting toolkit", "dnet"};
  app.require_subcommand(1);
  app.footer(keys_footer());
  app.set_version_flag("--version", DNET_VERSION);
  Options o;

  auto* synth = app.add_subcommand("synth", "write a synthetic ring-road series.csv and adjacency.csv");
  auto* trn = app.add_subcommand("train", "train a model; writes checkpoint.dnet, loss_trace.csv, manifest.json");
  auto* eval = app.add_subcommand("eval", "write test-split metrics.jsonl at eval.horizons");
  auto* pred = app.add_subcommand("predict", "write per-node, per-horizon test predictions as CSV");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter on a tiny model");
  for (auto* sub : {synth, trn, eval, pred, grad}) add_common(sub, o);
  trn->add_option("--ablate", o.ablate, "disable a component (without_mta|without_gta|without_da|without_sa); repeatable");
  for (auto* sub : {eval, pred}) {
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file (default: <output.dir>/checkpoint.dnet)");
    sub->add_flag("--untrained", o.untrained, "use a freshly initialized model built from the config instead");
  }
  eval->add_option("--baseline", o.baseline, "also report a baseline on the same split (ha)");
  pred->add_option("--predictions", o.predictions, "output CSV (default: <output.dir>/predictions.csv)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << DNET_VERSION << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dnet: " << e.what() << '\n';
    return 2;
  }

  try {
    RunSettings s = resolve(o);
    if (synth->parsed()) return cmd_synth(s, out);
    if (trn->parsed()) return cmd_train(s, o, out);
    if (eval->parsed()) return cmd_eval(s, o, out);
    if (pred->parsed()) return cmd_predict(s, o, out);
    return cmd_gradcheck(s, out);
  } catch (const UsageError& e) {
    err << "dnet: usage: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "dnet: usage: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "dnet: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dnet::cli
