#pragma once

#include "genie/field.hpp"
#include "genie/hashgrid.hpp"
#include "genie/render.hpp"
#include "genie/splash.hpp"
#include "genie/trainer.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>

namespace genie {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Declarative run configuration. The file is JSON whose nested objects
/// mirror the config structs field for field; unknown keys are rejected and
/// missing keys keep their defaults.
struct RunConfig {
  HashGridConfig hashgrid;
  FieldArch field;
  RenderConfig render;
  TrainConfig train;
  /// Seed for grid and network initialization.
  std::uint64_t initSeed = 7;
};

nlohmann::json to_json(const HashGridConfig& c);
nlohmann::json to_json(const FieldArch& c);
nlohmann::json to_json(const SplashConfig& c);
nlohmann::json to_json(const RenderConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Overlay `j` onto `c`; throws ConfigError naming the offending key path.
void apply_json(const nlohmann::json& j, HashGridConfig& c, const std::string& path = "hashgrid");
void apply_json(const nlohmann::json& j, FieldArch& c, const std::string& path = "field");
void apply_json(const nlohmann::json& j, SplashConfig& c, const std::string& path = "splash");
void apply_json(const nlohmann::json& j, RenderConfig& c, const std::string& path = "render");
void apply_json(const nlohmann::json& j, TrainConfig& c, const std::string& path = "train");
void apply_json(const nlohmann::json& j, RunConfig& c, const std::string& path = "");

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);

std::string to_string(FeatureMode mode);
std::string to_string(RadiusMode mode);
std::string to_string(ConfidenceMode mode);
FeatureMode parse_feature_mode(const std::string& s);
RadiusMode parse_radius_mode(const std::string& s);
ConfidenceMode parse_confidence_mode(const std::string& s);

}  // namespace genie
