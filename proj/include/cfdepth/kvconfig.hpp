#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace cfdepth {

/// Line-oriented `key = value` store with dotted keys. Lines starting with
/// '#' are comments. Keys are kept sorted so printing is canonical.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string_view source = "<config>");

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void erase(const std::string& key) { entries_.erase(key); }

  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }
  std::string str() const;

  /// Keys present here but absent from `known`.
  std::set<std::string> unknown_keys(const std::set<std::string>& known) const;

 private:
  std::map<std::string, std::string> entries_;
};

// Typed value parsing; each throws ConfigError naming the key.
bool parse_bool(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::string format_double(double value);

}  // namespace cfdepth
