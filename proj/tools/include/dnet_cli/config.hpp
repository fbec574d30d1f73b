#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectornet/data.hpp"
#include "detectornet/model.hpp"
#include "detectornet/synth.hpp"
#include "detectornet/training.hpp"

namespace dnet::cli {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every accepted config key, in help-text order.
const std::vector<KeySpec>& config_keys();

/// Bad key, value or option combination. Reported with exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` settings with every default materialized.
class RunSettings {
 public:
  RunSettings();

  /// Reads a `key = value` file (`#` starts a comment) or the "config" block
  /// of a manifest.json. Later calls override earlier values.
  void load_file(const std::filesystem::path& path);
  /// Throws UsageError naming the key when it is unknown.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  std::string text() const;
  nlohmann::json to_json() const;

  ModelConfig model_config(std::size_t nodes) const;
  TrainRunConfig train_config() const;
  WindowOptions window_options() const;
  SynthOptions synth_options() const;
  std::vector<std::size_t> horizons() const;
  std::uint64_t seed() const;

  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dnet::cli
