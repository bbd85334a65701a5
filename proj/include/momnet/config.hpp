// Flat key=value config files (diff-friendly, '#' comments) and the run
// manifest that makes every CLI command replayable.
#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace momnet {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class KeyValues {
 public:
  static KeyValues parse(std::istream& in);
  static KeyValues parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_real(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_flag(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);

  // Rejects any key outside the allow list, naming the offender.
  void allow_only(const std::vector<std::string>& keys) const;

  const std::map<std::string, std::string>& items() const { return items_; }
  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::string> items_;
};

// Manifest: the command name plus every resolved argument, written as JSON
// next to a command's outputs. Replaying the manifest reproduces the
// outputs byte for byte.
void write_manifest(const std::string& path, const std::string& command,
                    const std::map<std::string, std::string>& args);
std::pair<std::string, std::map<std::string, std::string>> read_manifest(
    const std::string& path);

}  // namespace momnet
