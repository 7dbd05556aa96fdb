#pragma once

// Line-oriented configuration: "[section]" headers and "key = value" lines,
// '#' comments. Keys are addressed as "section.key". An environment
// variable ENGINE_<SECTION>_<KEY> (upper case) overrides the file value.

#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/binary_io.hpp"
#include "occ4d/error.hpp"
#include "occ4d/optimize.hpp"

namespace occ4d::config {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string env_name(const std::string& key) {
  std::string out = "ENGINE_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

class Config {
 public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          fail(ErrorKind::validation, "config line " + std::to_string(line_no) + ": unterminated section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        fail(ErrorKind::validation, "config line " + std::to_string(line_no) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) fail(ErrorKind::validation, "config line " + std::to_string(line_no) + ": empty key");
      c.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) { return parse(io::read_text_file(path)); }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::optional<std::string> raw(const std::string& key) const {
    if (const char* env = std::getenv(env_name(key).c_str())) return std::string(env);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
  }

  double get(const std::string& key, double fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used == v->size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::validation, "config: '" + key + "' = '" + *v + "' is not a number");
  }

  long get_int(const std::string& key, long fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const long d = std::stol(*v, &used);
      if (used == v->size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::validation, "config: '" + key + "' = '" + *v + "' is not an integer");
  }

  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    std::vector<double> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        fail(ErrorKind::validation, "config: '" + key + "' has a non-numeric entry '" + item + "'");
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Fit settings from the [fit], [loss] and [scene] sections.
inline optimize::FitConfig fit_config(const Config& c, optimize::FitConfig base = {}) {
  base.seed = static_cast<std::uint64_t>(c.get_int("fit.seed", static_cast<long>(base.seed)));
  base.gaussians = static_cast<std::size_t>(c.get_int("fit.gaussians", static_cast<long>(base.gaussians)));
  base.steps = static_cast<int>(c.get_int("fit.steps", base.steps));
  base.lr = c.get("fit.lr", base.lr);
  base.min_lr = c.get("fit.min_lr", base.min_lr);
  base.variant = optimize::parse_variant(c.get("fit.variant", optimize::variant_name(base.variant)));
  base.cutoff = c.get("fit.cutoff", base.cutoff);
  base.init_scale = c.get("fit.init_scale", base.init_scale);
  base.log_every = static_cast<int>(c.get_int("fit.log_every", base.log_every));
  base.target_loss = c.get("fit.target_loss", base.target_loss);
  base.checkpoint_every = static_cast<int>(c.get_int("fit.checkpoint_every", base.checkpoint_every));
  base.weights.lambda_ce = c.get("loss.lambda_ce", base.weights.lambda_ce);
  base.weights.lambda_lov = c.get("loss.lambda_lov", base.weights.lambda_lov);
  base.weights.lambda_plan = c.get("loss.lambda_plan", base.weights.lambda_plan);
  base.weights.class_weights = c.get_list("loss.class_weights", base.weights.class_weights);
  std::vector<double> dyn(base.dynamic_classes.begin(), base.dynamic_classes.end());
  dyn = c.get_list("scene.dynamic_classes", dyn);
  base.dynamic_classes.assign(dyn.begin(), dyn.end());
  if (base.gaussians < 1) fail(ErrorKind::validation, "config: fit.gaussians must be >= 1");
  if (base.steps < 0) fail(ErrorKind::validation, "config: fit.steps must be >= 0");
  if (!(base.lr > 0.0)) fail(ErrorKind::validation, "config: fit.lr must be positive");
  if (!(base.cutoff > 0.0)) fail(ErrorKind::validation, "config: fit.cutoff must be positive");
  return base;
}

}  // namespace occ4d::config
