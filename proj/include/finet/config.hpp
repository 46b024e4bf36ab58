#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>

#include "finet/container.hpp"
#include "finet/shapenet.hpp"

namespace finet {

// Training hyperparameters, loadable from a plain-text key=value file.
// Defaults are the desk-scale settings.
struct TrainConfig {
  int image_size = 64;
  int latent_dim = 8;
  double lambda_kl = 0.1;
  int levels = 4;
  int base_channels = 32;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch = 16;
  int steps = 2000;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline int config_int(const std::string& value, const std::string& key) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(value, &used);
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "': '" + value + "' is not an integer");
  }
  if (used != value.size()) throw ContractError("config key '" + key + "': '" + value + "' is not an integer");
  if (v <= 0) throw ContractError("config key '" + key + "' must be positive, got " + value);
  return v;
}

inline double config_double(const std::string& value, const std::string& key) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "': '" + value + "' is not a number");
  }
  if (used != value.size()) throw ContractError("config key '" + key + "': '" + value + "' is not a number");
  return v;
}

}  // namespace detail

// Parses key=value lines. '#' starts a comment; blank lines are
// ignored. Any key outside the documented set is an error, so typos
// cannot silently fall back to defaults.
inline TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line +
                          "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    if (key == "image_size") {
      cfg.image_size = detail::config_int(value, key);
    } else if (key == "latent_dim") {
      cfg.latent_dim = detail::config_int(value, key);
    } else if (key == "lambda_kl") {
      cfg.lambda_kl = detail::config_double(value, key);
      if (cfg.lambda_kl < 0) throw ContractError("config key 'lambda_kl' must be non-negative");
    } else if (key == "levels") {
      cfg.levels = detail::config_int(value, key);
    } else if (key == "base_channels") {
      cfg.base_channels = detail::config_int(value, key);
    } else if (key == "lr") {
      cfg.lr = detail::config_double(value, key);
      if (cfg.lr <= 0) throw ContractError("config key 'lr' must be positive");
    } else if (key == "betas") {
      const auto comma = value.find(',');
      if (comma == std::string::npos) {
        throw ContractError("config key 'betas' expects two comma-separated values, got '" + value + "'");
      }
      cfg.beta1 = detail::config_double(detail::trim(value.substr(0, comma)), key);
      cfg.beta2 = detail::config_double(detail::trim(value.substr(comma + 1)), key);
      if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1) {
        throw ContractError("config key 'betas' values must lie in [0, 1)");
      }
    } else if (key == "batch") {
      cfg.batch = detail::config_int(value, key);
    } else if (key == "steps") {
      cfg.steps = detail::config_int(value, key);
    } else {
      throw ContractError("unknown config key '" + key + "' (line " + std::to_string(lineno) + ")");
    }
  }
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  return parse_config(in);
}

template <typename T>
StageConfig<T> stage_config(const TrainConfig& cfg, bool standard_prior = false) {
  StageConfig<T> sc;
  sc.image_size = cfg.image_size;
  sc.latent_dim = cfg.latent_dim;
  sc.levels = cfg.levels;
  sc.base_channels = cfg.base_channels;
  sc.lambda_kl = static_cast<T>(cfg.lambda_kl);
  sc.standard_prior = standard_prior;
  return sc;
}

}  // namespace finet
