#pragma once

// Run settings: a fixed table of (section, key) entries with typed defaults,
// overlaid by a sectioned key = value file and then by command-line flags.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "refsketch/style_pretrain.hpp"
#include "refsketch/training.hpp"

namespace refsketch {

enum class SettingType { Int, Float, Bool, Text, Path };

struct SettingSpec {
  std::string section;
  std::string key;
  SettingType type;
  std::string default_value;
  std::string help;
};

/// Every recognised setting, grouped by section.
const std::vector<SettingSpec>& setting_specs();
std::vector<SettingSpec> section_specs(const std::string& section);
/// "out_dir" -> "--out-dir".
std::string flag_name(const std::string& key);

class Settings {
 public:
  /// All defaults.
  Settings();

  /// Reads `[section]` headers and `key = value` lines; values may be quoted.
  /// Unknown sections or keys raise InvalidConfig.
  void merge_file(const std::filesystem::path& path);
  /// Type-checks and canonicalises the value. Unknown keys raise InvalidConfig.
  void set(const std::string& section, const std::string& key, const std::string& value);

  const std::string& get(const std::string& section, const std::string& key) const;
  int64_t get_int(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  std::filesystem::path get_path(const std::string& section, const std::string& key) const;

  /// Sorted `[section]` / `key = value` text, followed by the fixed loss and
  /// schedule constants. Equal settings give byte-identical dumps.
  std::string dump() const;

  PretrainConfig pretrain_config() const;
  TrainConfig train_config() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace refsketch
