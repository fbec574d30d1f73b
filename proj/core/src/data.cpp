#include "detectornet/data.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "detectornet/error.hpp"

namespace dnet {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  return out;
}

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

double time_of_day(std::int64_t ts) {
  constexpr std::int64_t day = 86400;
  return static_cast<double>(((ts % day) + day) % day) / static_cast<double>(day);
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
  text = trim(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const std::string buf(text);
  int consumed = 0;
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed) != 7 ||
      static_cast<std::size_t>(consumed) != buf.size() || (sep != 'T' && sep != ' ')) {
    throw FormatError("invalid timestamp '" + buf + "' (expected YYYY-MM-DDTHH:MM:SS)");
  }
  using namespace std::chrono;
  const year_month_day date{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!date.ok() || h > 23 || mi > 59 || s > 59 || h < 0 || mi < 0 || s < 0) {
    throw FormatError("invalid timestamp '" + buf + "'");
  }
  const auto days = sys_days{date}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t seconds) {
  using namespace std::chrono;
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  const year_month_day date{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
  return buf;
}

DetectorSeries load_series_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  DetectorSeries series;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  ++line_no;
  {
    const auto header = split_csv(trim(line));
    if (header.size() < 2) throw FormatError(location(path, line_no) + ": header needs a timestamp and at least one node id");
    for (std::size_t i = 1; i < header.size(); ++i) {
      const auto id = trim(header[i]);
      if (id.empty()) throw FormatError(location(path, line_no) + ": empty node id in column " + std::to_string(i + 1));
      series.node_ids.emplace_back(id);
    }
  }
  const std::size_t n = series.node_ids.size();
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = trim(line);
    if (row.empty()) continue;
    const auto cells = split_csv(row);
    if (cells.size() != n + 1) {
      throw FormatError(location(path, line_no) + ": expected " + std::to_string(n + 1) + " fields, got " +
                        std::to_string(cells.size()));
    }
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(cells[0]);
    } catch (const FormatError& e) {
      throw FormatError(location(path, line_no) + ": " + e.what());
    }
    if (!series.timestamps.empty()) {
      const std::int64_t step = ts - series.timestamps.back();
      if (step <= 0) throw FormatError(location(path, line_no) + ": timestamp is not increasing");
      if (series.timestamps.size() == 1) {
        series.interval_seconds = step;
      } else if (step != series.interval_seconds) {
        throw FormatError(location(path, line_no) + ": timestamp gap of " + std::to_string(step) + "s, expected " +
                          std::to_string(series.interval_seconds) + "s");
      }
    }
    series.timestamps.push_back(ts);
    for (std::size_t i = 1; i <= n; ++i) {
      const auto v = parse_double(cells[i]);
      if (!v) {
        throw FormatError(location(path, line_no) + ": cannot parse value '" + std::string(trim(cells[i])) +
                          "' in column " + std::to_string(i + 1));
      }
      series.values.push_back(*v);
    }
  }
  if (series.timestamps.empty()) throw FormatError(path.string() + ": no data rows");
  return series;
}

void write_series_csv(const std::filesystem::path& path, const DetectorSeries& series) {
  auto out = open_output(path);
  out << "timestamp";
  for (const auto& id : series.node_ids) out << ',' << id;
  out << '\n';
  const std::size_t n = series.nodes();
  for (std::size_t t = 0; t < series.steps(); ++t) {
    out << format_timestamp(series.timestamps[t]);
    for (std::size_t i = 0; i < n; ++i) out << ',' << format_double(series.values[t * n + i]);
    out << '\n';
  }
}

std::vector<Edge> load_edges_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  ++line_no;
  const auto header = split_csv(trim(line));
  if (header.size() != 3 || trim(header[0]) != "from" || trim(header[1]) != "to" || trim(header[2]) != "distance") {
    throw FormatError(location(path, line_no) + ": header must be 'from,to,distance'");
  }
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = trim(line);
    if (row.empty()) continue;
    const auto cells = split_csv(row);
    if (cells.size() != 3) {
      throw FormatError(location(path, line_no) + ": expected 3 fields, got " + std::to_string(cells.size()));
    }
    const auto d = parse_double(cells[2]);
    if (!d || *d < 0.0) throw FormatError(location(path, line_no) + ": invalid distance '" + std::string(cells[2]) + "'");
    edges.push_back(Edge{std::string(trim(cells[0])), std::string(trim(cells[1])), *d});
  }
  return edges;
}

void write_edges_csv(const std::filesystem::path& path, const std::vector<Edge>& edges) {
  auto out = open_output(path);
  out << "from,to,distance\n";
  for (const auto& e : edges) out << e.from << ',' << e.to << ',' << format_double(e.distance) << '\n';
}

Tensor gaussian_kernel_adjacency(const std::vector<Edge>& edges, const std::vector<std::string>& node_ids,
                                 std::optional<double> sigma, double threshold) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < node_ids.size(); ++i) index.emplace(node_ids[i], i);
  const std::size_t n = node_ids.size();
  if (n == 0) throw ValidationError("adjacency needs at least one node");

  double s = 0.0;
  if (sigma) {
    s = *sigma;
    if (!(s >= 0.0)) throw ValidationError("sigma must be non-negative");
  } else if (!edges.empty()) {
    double m = 0.0;
    for (const auto& e : edges) m += e.distance;
    m /= static_cast<double>(edges.size());
    double var = 0.0;
    for (const auto& e : edges) var += (e.distance - m) * (e.distance - m);
    s = std::sqrt(var / static_cast<double>(edges.size()));
  }

  Tensor adj(Shape{n, n});
  auto a = adj.mutable_values();
  for (const auto& e : edges) {
    const auto from = index.find(e.from);
    const auto to = index.find(e.to);
    if (from == index.end()) throw FormatError("unknown node id '" + e.from + "' in adjacency");
    if (to == index.end()) throw FormatError("unknown node id '" + e.to + "' in adjacency");
    double w = 0.0;
    if (s > 0.0) {
      w = std::exp(-(e.distance * e.distance) / (s * s));
    } else {
      w = e.distance == 0.0 ? 1.0 : 0.0;
    }
    a[from->second * n + to->second] = w >= threshold ? w : 0.0;
  }
  return adj;
}

Tensor load_adjacency_csv(const std::filesystem::path& path, const std::vector<std::string>& node_ids,
                          std::optional<double> sigma, double threshold) {
  const auto edges = load_edges_csv(path);
  try {
    return gaussian_kernel_adjacency(edges, node_ids, sigma, threshold);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Windowing -----------------------------------------------------------------

Tensor SampleBatch::normalized_targets() const {
  Tensor out(targets.shape());
  auto o = out.mutable_values();
  const auto t = targets.values();
  for (std::size_t i = 0; i < t.size(); ++i) o[i] = norm.apply(t[i]);
  return out;
}

WindowSet::WindowSet(std::shared_ptr<const DetectorSeries> series, std::vector<std::size_t> offsets,
                     WindowOptions options, Normalization norm)
    : series_(std::move(series)), offsets_(std::move(offsets)), options_(options), norm_(norm) {}

SampleBatch WindowSet::batch(std::size_t begin, std::size_t count) const {
  if (begin + count > offsets_.size()) {
    throw DimensionError("window range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") exceeds " + std::to_string(offsets_.size()) + " windows");
  }
  std::vector<std::size_t> positions(count);
  for (std::size_t i = 0; i < count; ++i) positions[i] = begin + i;
  return gather(positions);
}

SampleBatch WindowSet::gather(const std::vector<std::size_t>& positions) const {
  if (positions.empty()) throw DataError("cannot materialize an empty batch");
  const std::size_t b = positions.size();
  const std::size_t n = series_->nodes();
  const std::size_t p = options_.input_len;
  const std::size_t q = options_.output_len;
  const std::size_t d = options_.input_dim;
  SampleBatch out;
  out.norm = norm_;
  out.inputs = Tensor(Shape{b, n, p, d});
  out.raw_inputs = Tensor(Shape{b, n, p});
  out.targets = Tensor(Shape{b, n, q, 1});
  out.mask = Tensor(Shape{b, n, q, 1});
  auto in = out.inputs.mutable_values();
  auto raw = out.raw_inputs.mutable_values();
  auto tg = out.targets.mutable_values();
  auto mk = out.mask.mutable_values();
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t off = offsets_.at(positions[s]);
    out.offsets.push_back(off);
    for (std::size_t node = 0; node < n; ++node) {
      for (std::size_t step = 0; step < p; ++step) {
        const double v = series_->at(off + step, node);
        const std::size_t base = ((s * n + node) * p + step) * d;
        in[base] = norm_.apply(v);
        if (d == 2) in[base + 1] = time_of_day(series_->timestamps[off + step]);
        raw[(s * n + node) * p + step] = v;
      }
      for (std::size_t h = 0; h < q; ++h) {
        const double v = series_->at(off + p + h, node);
        const std::size_t idx = (s * n + node) * q + h;
        tg[idx] = v;
        mk[idx] = v != 0.0 ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

WindowSet WindowSet::head(std::size_t count) const {
  count = std::min(count, offsets_.size());
  return WindowSet(series_, std::vector<std::size_t>(offsets_.begin(), offsets_.begin() + static_cast<std::ptrdiff_t>(count)),
                   options_, norm_);
}

DataSplits make_windows(std::shared_ptr<const DetectorSeries> series, const WindowOptions& options,
                        std::optional<Normalization> norm_override) {
  if (!series) throw DataError("no series");
  if (options.input_len == 0 || options.output_len == 0) throw ConfigError("window lengths must be positive");
  if (options.input_dim != 1 && options.input_dim != 2) {
    throw ConfigError("input_dim must be 1 (value) or 2 (value + time of day), got " + std::to_string(options.input_dim));
  }
  if (options.train_fraction <= 0.0 || options.val_fraction < 0.0 ||
      options.train_fraction + options.val_fraction > 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
  }
  const std::size_t t = series->steps();
  const std::size_t span = options.input_len + options.output_len;
  if (t < span) {
    throw DataError("series has " + std::to_string(t) + " steps, need at least P + Q = " + std::to_string(span));
  }
  const std::size_t count = t - span + 1;
  std::size_t n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * options.train_fraction));
  std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(count) * options.val_fraction));
  n_train = std::min(n_train, count);
  n_val = std::min(n_val, count - n_train);
  if (n_train == 0) throw DataError("split leaves no training windows");

  Normalization norm;
  if (norm_override) {
    norm = *norm_override;
  } else {
    // Rows touched by training inputs: [0, n_train - 1 + P).
    const std::size_t rows = n_train - 1 + options.input_len;
    const std::size_t n = series->nodes();
    double m = 0.0;
    for (std::size_t i = 0; i < rows * n; ++i) m += series->values[i];
    m /= static_cast<double>(rows * n);
    double var = 0.0;
    for (std::size_t i = 0; i < rows * n; ++i) var += (series->values[i] - m) * (series->values[i] - m);
    const double sd = std::sqrt(var / static_cast<double>(rows * n));
    norm = Normalization{m, sd > 1e-12 ? sd : 1.0};
  }

  auto range = [](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v;
    for (std::size_t i = begin; i < end; ++i) v.push_back(i);
    return v;
  };
  DataSplits splits;
  splits.norm = norm;
  splits.train = WindowSet(series, range(0, n_train), options, norm);
  splits.val = WindowSet(series, range(n_train, n_train + n_val), options, norm);
  splits.test = WindowSet(series, range(n_train + n_val, count), options, norm);
  return splits;
}

Tensor historical_average(const SampleBatch& batch, std::size_t output_len) {
  const auto& shape = batch.raw_inputs.shape();
  const std::size_t b = shape.at(0), n = shape.at(1), p = shape.at(2);
  Tensor out(Shape{b, n, output_len, 1});
  auto o = out.mutable_values();
  const auto raw = batch.raw_inputs.values();
  for (std::size_t s = 0; s < b * n; ++s) {
    double total = 0.0;
    for (std::size_t step = 0; step < p; ++step) total += raw[s * p + step];
    const double avg = total / static_cast<double>(p);
    for (std::size_t h = 0; h < output_len; ++h) o[s * output_len + h] = avg;
  }
  return out;
}

}  // namespace dnet
