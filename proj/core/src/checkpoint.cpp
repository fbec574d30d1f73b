#include "detectornet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "detectornet/error.hpp"

namespace dnet {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'N', 'E', 'T'};
constexpr std::uint64_t kMaxRank = 16;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void little_endian(T value) {
    std::uint8_t buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<std::uint8_t>(value >> (8 * i));
    bytes(buf, sizeof(T));
  }
  void f64(double v) { little_endian(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > data_.size() - pos_) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T little_endian(const char* what) {
    const auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(little_endian<std::uint64_t>(what)); }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

Checkpoint Checkpoint::capture(const DetectorNet& model, const Normalization& norm) {
  Checkpoint c;
  c.config = model.config();
  c.norm = norm;
  for (const auto& [name, t] : model.params()) c.params.emplace_back(name, t.detach());
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& cp) {
  Writer w;
  w.bytes(kMagic, 4);
  w.little_endian<std::uint32_t>(Checkpoint::kVersion);
  const nlohmann::json header{
      {"model", cp.config.to_json()},
      {"normalization", {{"mean", cp.norm.mean}, {"std", cp.norm.std}}},
      {"metadata", cp.metadata},
  };
  const std::string text = header.dump();
  w.little_endian<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  w.little_endian<std::uint64_t>(cp.params.size());
  for (const auto& [name, t] : cp.params) {
    w.little_endian<std::uint64_t>(name.size());
    w.bytes(name.data(), name.size());
    w.little_endian<std::uint64_t>(t.rank());
    for (auto d : t.shape()) w.little_endian<std::uint64_t>(d);
    for (double v : t.values()) w.f64(v);
  }
  const std::uint64_t hash = fnv1a64(w.buffer());
  w.little_endian<std::uint64_t>(hash);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.little_endian<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");
  }
  const auto json_len = r.little_endian<std::uint64_t>("config length");
  if (json_len > r.remaining()) throw FormatError("checkpoint config block length exceeds file size");
  const auto json_bytes = r.take(json_len, "config block");

  Checkpoint cp;
  try {
    const auto header = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    cp.config = ModelConfig::from_json(header.at("model"));
    cp.norm.mean = header.at("normalization").at("mean").get<double>();
    cp.norm.std = header.at("normalization").at("std").get<double>();
    cp.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid checkpoint config block: ") + e.what());
  }

  const auto count = r.little_endian<std::uint64_t>("parameter count");
  for (std::uint64_t p = 0; p < count; ++p) {
    const auto name_len = r.little_endian<std::uint64_t>("name length");
    if (name_len > r.remaining()) throw FormatError("parameter name length exceeds file size");
    const auto name_bytes = r.take(name_len, "parameter name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.little_endian<std::uint64_t>("rank");
    if (rank > kMaxRank) throw FormatError("parameter '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const auto d = r.little_endian<std::uint64_t>("dimension");
      if (d == 0 || d > r.remaining() / 8 || elements > r.remaining() / 8 / d) {
        throw FormatError("parameter '" + name + "' declares a shape larger than the file");
      }
      elements *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (elements * 8 > r.remaining()) throw FormatError("parameter '" + name + "' payload truncated");
    std::vector<double> values(static_cast<std::size_t>(elements));
    for (auto& v : values) v = r.f64("payload");
    cp.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const std::size_t hashed = r.position();
  const auto stored = r.little_endian<std::uint64_t>("integrity hash");
  if (r.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  if (fnv1a64(bytes.first(hashed)) != stored) throw FormatError("checkpoint integrity hash mismatch");
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void restore_parameters(DetectorNet& model, const Checkpoint& checkpoint) {
  if (!model.config().same_architecture(checkpoint.config)) {
    throw ConfigError("checkpoint architecture " + checkpoint.config.to_json().dump() +
                      " does not match model " + model.config().to_json().dump());
  }
  model.load_parameters(checkpoint.params);
}

}  // namespace dnet
