#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mpsf {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string doc;
};

// Flat key=value configuration with module-prefixed keys. Every key has a
// registered default; unknown keys are rejected at load/set time.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<ConfigKey>& registry();

  // '#' comments and blank lines are ignored; each other line is key=value.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Keys under one or more module prefixes ("train.", "sample.", ...).
  static std::vector<ConfigKey> keys_with_prefixes(const std::vector<std::string>& prefixes);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mpsf
