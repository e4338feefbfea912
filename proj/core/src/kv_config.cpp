#include "nmt/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nmt/errors.hpp"

namespace nmt {
namespace {

std::string trim(const std::string &s) {
  const char *ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

KeyValueConfig KeyValueConfig::parse(const std::string &text,
                                     const std::string &origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!cfg.entries_.emplace(key, value).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
  }
  return cfg;
}

bool KeyValueConfig::has(const std::string &key) const {
  return entries_.count(key) != 0;
}

void KeyValueConfig::set(const std::string &key, const std::string &value) {
  entries_[key] = value;
}

std::string KeyValueConfig::raw(const std::string &key) const {
  auto it = entries_.find(key);
  if (it == entries_.end())
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string &key) const {
  return raw(key);
}

std::string KeyValueConfig::get_string(const std::string &key,
                                       const std::string &fallback) const {
  return has(key) ? raw(key) : fallback;
}

long long KeyValueConfig::get_int(const std::string &key) const {
  std::string v = raw(key);
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(origin_ + ": key '" + key + "' expects an integer, got '" +
                      v + "'");
  return out;
}

long long KeyValueConfig::get_int(const std::string &key,
                                  long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string &key) const {
  std::string v = raw(key);
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception &) {
    throw ConfigError(origin_ + ": key '" + key + "' expects a number, got '" +
                      v + "'");
  }
}

double KeyValueConfig::get_double(const std::string &key,
                                  double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string &key) const {
  std::string v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(origin_ + ": key '" + key + "' expects a boolean, got '" +
                    v + "'");
}

bool KeyValueConfig::get_bool(const std::string &key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<std::string> KeyValueConfig::keys_with_prefix(
    const std::string &prefix) const {
  std::vector<std::string> out;
  for (auto it = entries_.lower_bound(prefix);
       it != entries_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it)
    out.push_back(it->first);
  return out;
}

void KeyValueConfig::reject_unknown(
    const std::set<std::string> &known,
    const std::vector<std::string> &known_prefixes) const {
  for (const auto &[key, value] : entries_) {
    if (known.count(key)) continue;
    bool ok = false;
    for (const auto &p : known_prefixes)
      if (key.compare(0, p.size(), p) == 0) ok = true;
    if (!ok) throw ConfigError(origin_ + ": unknown key '" + key + "'");
  }
}

}  // namespace nmt
