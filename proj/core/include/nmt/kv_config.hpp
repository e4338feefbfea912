#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nmt {

// Plain "key = value" configuration files.
//
//   # comment until end of line
//   d_model = 512
//   pair.en.src = data/train.en
//
// Keys are case-sensitive, whitespace around keys and values is trimmed, and
// a key may appear only once. Values are parsed on access.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig load(const std::filesystem::path &path);
  static KeyValueConfig parse(const std::string &text,
                              const std::string &origin = "<string>");

  bool has(const std::string &key) const;
  void set(const std::string &key, const std::string &value);

  std::string get_string(const std::string &key) const;
  std::string get_string(const std::string &key,
                         const std::string &fallback) const;
  long long get_int(const std::string &key) const;
  long long get_int(const std::string &key, long long fallback) const;
  double get_double(const std::string &key) const;
  double get_double(const std::string &key, double fallback) const;
  bool get_bool(const std::string &key) const;
  bool get_bool(const std::string &key, bool fallback) const;

  // Keys starting with `prefix`, in sorted order.
  std::vector<std::string> keys_with_prefix(const std::string &prefix) const;

  // Throws ConfigError naming the first key not in `known` and not matching
  // any of `known_prefixes`.
  void reject_unknown(const std::set<std::string> &known,
                      const std::vector<std::string> &known_prefixes = {}) const;

  const std::map<std::string, std::string> &entries() const { return entries_; }
  const std::string &origin() const { return origin_; }

 private:
  std::string raw(const std::string &key) const;

  std::map<std::string, std::string> entries_;
  std::string origin_;
};

}  // namespace nmt
