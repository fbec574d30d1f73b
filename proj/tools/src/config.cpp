#include "dnet_cli/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "detectornet/error.hpp"

namespace dnet::cli {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys{
      {"seed", "42", "model init, shuffle and dropout seed"},
      {"output.dir", "", "artifact directory (default: $DNET_OUTPUT_DIR, else ./dnet-out)"},
      {"data.series", "", "series CSV: timestamp,<id1>,<id2>,..."},
      {"data.adjacency", "", "edge CSV: from,to,distance"},
      {"data.sigma", "auto", "Gaussian kernel width (auto = std of distances)"},
      {"data.threshold", "0.1", "kernel weights below this are dropped"},
      {"data.train_fraction", "0.7", "chronological train share of windows"},
      {"data.val_fraction", "0.1", "chronological validation share of windows"},
      {"model.input_len", "12", "input steps P"},
      {"model.output_len", "12", "forecast steps Q"},
      {"model.input_dim", "2", "1 = value, 2 = value + time of day"},
      {"model.hidden", "32", "channels C"},
      {"model.layers", "2", "stacked temporal/spatial layers L"},
      {"model.diffusion_steps", "2", "diffusion order K"},
      {"model.embed_dim", "10", "node embedding size of the adaptive adjacency"},
      {"model.ffn_factor", "2", "FFN hidden width as a multiple of C"},
      {"model.predictor_hidden", "64", "predictor hidden width"},
      {"model.dropout", "0.3", "dropout rate in training"},
      {"model.learnable_fusion", "false", "train the branch weights beta/gamma"},
      {"model.beta", "1", "global attention branch weight"},
      {"model.gamma", "1", "multi-view branch weight"},
      {"model.ablate", "", "comma list of without_mta,without_gta,without_da,without_sa"},
      {"train.batch_size", "64", "windows per step"},
      {"train.lr", "0.001", "initial Adam learning rate"},
      {"train.lr_decay", "0.5", "learning rate factor per decay period"},
      {"train.lr_decay_every", "100", "decay period in epochs"},
      {"train.weight_decay", "1e-05", "L2 coefficient"},
      {"train.epochs", "100", "maximum epochs"},
      {"train.patience", "20", "epochs without validation improvement before stopping"},
      {"train.max_windows", "0", "cap on training windows (0 = all)"},
      {"eval.horizons", "3,6,12", "reported 1-based horizons"},
      {"synth.nodes", "8", "ring detectors"},
      {"synth.steps", "4032", "time steps"},
      {"synth.interval", "300", "seconds between steps"},
      {"synth.noise", "1", "driver and observation noise scale"},
      {"synth.coupling", "0.8", "weight of the upstream lagged driver"},
      {"synth.lag", "3", "upstream lag in steps"},
      {"synth.seed", "7", "synthetic data seed"},
  };
  return keys;
}

RunSettings::RunSettings() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunSettings::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunSettings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

void RunSettings::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path.string() + "'");
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(path.string() + ": " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) throw UsageError(path.string() + ": no \"config\" object");
    for (const auto& [k, v] : j["config"].items()) set(k, v.get<std::string>());
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      set(key, trim(std::string_view(body).substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string RunSettings::text() const {
  std::ostringstream out;
  for (const auto& k : config_keys()) out << k.key << " = " << values_.at(k.key) << '\n';
  return out.str();
}

nlohmann::json RunSettings::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

double RunSettings::number(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw UsageError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::size_t RunSettings::count(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw UsageError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool RunSettings::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::uint64_t RunSettings::seed() const {
  const std::string& v = get("seed");
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw UsageError("config key 'seed' expects an integer");
  return out;
}

ModelConfig RunSettings::model_config(std::size_t nodes) const {
  ModelConfig c;
  c.nodes = nodes;
  c.input_len = count("model.input_len");
  c.output_len = count("model.output_len");
  c.input_dim = count("model.input_dim");
  c.hidden = count("model.hidden");
  c.layers = count("model.layers");
  c.diffusion_steps = count("model.diffusion_steps");
  c.embed_dim = count("model.embed_dim");
  c.ffn_factor = count("model.ffn_factor");
  c.predictor_hidden = count("model.predictor_hidden");
  c.dropout = number("model.dropout");
  c.learnable_fusion = flag("model.learnable_fusion");
  c.beta = number("model.beta");
  c.gamma = number("model.gamma");
  c.seed = seed();
  std::stringstream flags(get("model.ablate"));
  std::string f;
  while (std::getline(flags, f, ',')) {
    f = trim(f);
    if (f.empty()) continue;
    try {
      c.ablation.enable(f);
    } catch (const ConfigError& e) {
      throw UsageError("config key 'model.ablate': " + std::string(e.what()));
    }
  }
  return c;
}

TrainRunConfig RunSettings::train_config() const {
  TrainRunConfig r;
  r.batch_size = count("train.batch_size");
  r.lr = number("train.lr");
  r.lr_decay = number("train.lr_decay");
  r.lr_decay_every = count("train.lr_decay_every");
  r.weight_decay = number("train.weight_decay");
  r.max_epochs = count("train.epochs");
  r.patience = count("train.patience");
  r.max_train_windows = count("train.max_windows");
  r.seed = seed();
  return r;
}

WindowOptions RunSettings::window_options() const {
  WindowOptions o;
  o.input_len = count("model.input_len");
  o.output_len = count("model.output_len");
  o.input_dim = count("model.input_dim");
  o.train_fraction = number("data.train_fraction");
  o.val_fraction = number("data.val_fraction");
  return o;
}

SynthOptions RunSettings::synth_options() const {
  SynthOptions o;
  o.nodes = count("synth.nodes");
  o.steps = count("synth.steps");
  o.interval_seconds = static_cast<std::int64_t>(count("synth.interval"));
  if (o.interval_seconds == 0 || 86400 % o.interval_seconds != 0) {
    throw UsageError("config key 'synth.interval' must divide 86400");
  }
  o.samples_per_day = static_cast<std::size_t>(86400 / o.interval_seconds);
  o.noise = number("synth.noise");
  o.coupling = number("synth.coupling");
  o.lag = count("synth.lag");
  const std::string& s = get("synth.seed");
  std::uint64_t seed = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (ec != std::errc() || end != s.data() + s.size()) throw UsageError("config key 'synth.seed' expects an integer");
  o.seed = seed;
  if (o.nodes < 2) throw UsageError("config key 'synth.nodes' must be at least 2");
  return o;
}

std::vector<std::size_t> RunSettings::horizons() const {
  std::vector<std::size_t> out;
  std::stringstream list(get("eval.horizons"));
  std::string h;
  while (std::getline(list, h, ',')) {
    h = trim(h);
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(h.data(), h.data() + h.size(), v);
    if (h.empty() || ec != std::errc() || end != h.data() + h.size() || v == 0) {
      throw UsageError("config key 'eval.horizons' expects a comma list of positive integers");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace dnet::cli
