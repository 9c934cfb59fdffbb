#pragma once

#include <istream>
#include <map>
#include <string>

namespace doh {

/// Flat view of an INI-style file: "[section]" headers, "key = value" lines,
/// '#' comments. Keys are returned as "section.key" ("key" outside sections).
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(std::istream& is, const std::string& name);
ConfigMap load_config(const std::string& path);

/// Typed lookups; the default is returned when the key is absent, a malformed
/// value throws.
double config_get(const ConfigMap& cfg, const std::string& key, double def);
int config_get(const ConfigMap& cfg, const std::string& key, int def);
std::string config_get(const ConfigMap& cfg, const std::string& key, const std::string& def);

}  // namespace doh
