#include "doh/config.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace doh {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap parse_config(std::istream& is, const std::string& name) {
  ConfigMap out;
  std::string line, section;
  int lineNo = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(name + ":" + std::to_string(lineNo) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineNo;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail("empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) fail("duplicate key '" + full + "'");
    out[full] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  return parse_config(f, path);
}

double config_get(const ConfigMap& cfg, const std::string& key, double def) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) return def;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw std::runtime_error("config key '" + key + "': not a number: " + it->second);
  return v;
}

int config_get(const ConfigMap& cfg, const std::string& key, int def) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) return def;
  char* end = nullptr;
  const long v = std::strtol(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw std::runtime_error("config key '" + key + "': not an integer: " + it->second);
  return static_cast<int>(v);
}

std::string config_get(const ConfigMap& cfg, const std::string& key,
                       const std::string& def) {
  const auto it = cfg.find(key);
  return it == cfg.end() ? def : it->second;
}

}  // namespace doh
