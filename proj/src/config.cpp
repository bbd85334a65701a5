#include "momnet/config.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace momnet {

KeyValues KeyValues::parse(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    kv.items_[key] = value;
  }
  return kv;
}

KeyValues KeyValues::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse(in);
}

bool KeyValues::has(const std::string& key) const {
  return items_.count(key) != 0;
}

std::string KeyValues::get(const std::string& key,
                           const std::string& fallback) const {
  const auto it = items_.find(key);
  return it == items_.end() ? fallback : it->second;
}

double KeyValues::get_real(const std::string& key, double fallback) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a real number");
  }
}

int KeyValues::get_int(const std::string& key, int fallback) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer");
  }
}

std::uint64_t KeyValues::get_u64(const std::string& key,
                                 std::uint64_t fallback) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an unsigned integer");
  }
}

bool KeyValues::get_flag(const std::string& key, bool fallback) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return fallback;
  if (it->second == "1" || it->second == "true") return true;
  if (it->second == "0" || it->second == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false");
}

void KeyValues::set(const std::string& key, const std::string& value) {
  items_[key] = value;
}

void KeyValues::allow_only(const std::vector<std::string>& keys) const {
  for (const auto& [key, value] : items_)
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("unknown config key '" + key + "'");
}

void KeyValues::write(std::ostream& out) const {
  for (const auto& [key, value] : items_) out << key << " = " << value << '\n';
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::map<std::string, std::string>& args) {
  nlohmann::json j;
  j["tool"] = "momnet";
  j["manifest_version"] = 1;
  j["command"] = command;
  j["args"] = args;
  const auto now = std::chrono::system_clock::now();
  j["created_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
          .count();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << j.dump(2) << '\n';
}

std::pair<std::string, std::map<std::string, std::string>> read_manifest(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path);
  nlohmann::json j;
  in >> j;
  std::map<std::string, std::string> args;
  for (const auto& [key, value] : j.at("args").items())
    args[key] = value.get<std::string>();
  return {j.at("command").get<std::string>(), args};
}

}  // namespace momnet
