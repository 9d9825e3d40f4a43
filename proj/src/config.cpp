#include "genie/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace genie {

using nlohmann::json;

namespace {

json vec3Json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Reads keys out of one JSON object and rejects whatever is left over.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const auto it = j_.find(key);
    seen_.insert(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, Vec3>) {
        if (!it->is_array() || it->size() != 3) throw ConfigError("expected a 3-array");
        out = Vec3((*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>());
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected a boolean");
        out = it->get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
        out = it->get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
        out = it->get<T>();
      } else {
        out = it->get<T>();
      }
    } catch (const ConfigError& e) {
      throw ConfigError(join(path_, key) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(join(path_, key) + ": " + e.what());
    }
  }

  template <class T, class Parse>
  void getEnum(const std::string& key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) {
      try {
        out = parse(s);
      } catch (const std::exception& e) {
        throw ConfigError(join(path_, key) + ": " + e.what());
      }
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string childPath(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join(path_, key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_string(FeatureMode mode) { return mode == FeatureMode::Live ? "live" : "baked"; }

std::string to_string(RadiusMode mode) {
  return mode == RadiusMode::StdDev ? "stddev" : "raw_eigenvalue";
}

std::string to_string(ConfidenceMode mode) {
  return mode == ConfidenceMode::Additive ? "additive" : "multiplicative";
}

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "live") return FeatureMode::Live;
  if (s == "baked") return FeatureMode::Baked;
  throw ConfigError("unknown feature mode '" + s + "' (expected live|baked)");
}

RadiusMode parse_radius_mode(const std::string& s) {
  if (s == "stddev") return RadiusMode::StdDev;
  if (s == "raw_eigenvalue") return RadiusMode::RawEigenvalue;
  throw ConfigError("unknown radius mode '" + s + "' (expected stddev|raw_eigenvalue)");
}

ConfidenceMode parse_confidence_mode(const std::string& s) {
  if (s == "additive") return ConfidenceMode::Additive;
  if (s == "multiplicative") return ConfidenceMode::Multiplicative;
  throw ConfigError("unknown confidence mode '" + s + "' (expected additive|multiplicative)");
}

json to_json(const HashGridConfig& c) {
  return {{"levels", c.levels},
          {"baseResolution", c.baseResolution},
          {"perLevelScale", c.perLevelScale},
          {"tableSize", c.tableSize},
          {"featuresPerLevel", c.featuresPerLevel},
          {"boundsMin", vec3Json(c.boundsMin)},
          {"boundsMax", vec3Json(c.boundsMax)}};
}

json to_json(const FieldArch& c) {
  return {{"inputDim", c.inputDim}, {"hidden", c.hidden}, {"dirFrequencies", c.dirFrequencies}};
}

json to_json(const SplashConfig& c) {
  return {{"k", c.k},
          {"q", c.q},
          {"mode", to_string(c.mode)},
          {"radiusMode", to_string(c.radiusMode)}};
}

json to_json(const RenderConfig& c) {
  return {{"samples", c.samples},
          {"stratified", c.stratified},
          {"background", vec3Json(c.background)},
          {"seed", c.seed},
          {"threads", c.threads},
          {"clipToSpheres", c.clipToSpheres},
          {"splash", to_json(c.splash)}};
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"raysPerBatch", c.raysPerBatch},
          {"lr",
           {{"theta", c.lr.theta},
            {"grid", c.lr.grid},
            {"mean", c.lr.mean},
            {"logScale", c.lr.logScale}}},
          {"densify",
           {{"enabled", c.densify.enabled},
            {"intervalSteps", c.densify.intervalSteps},
            {"startStep", c.densify.startStep},
            {"endStep", c.densify.endStep},
            {"maxNewPerCycle", c.densify.maxNewPerCycle},
            {"tauAlpha", c.densify.tauAlpha},
            {"tauS", c.densify.tauS}}},
          {"prune",
           {{"enabled", c.prune.enabled},
            {"intervalSteps", c.prune.intervalSteps},
            {"lambdaD", c.prune.lambdaD},
            {"lambdaG", c.prune.lambdaG},
            {"tau", c.prune.tau},
            {"mode", to_string(c.prune.mode)}}},
          {"rebuildIndexEverySteps", c.rebuildIndexEverySteps},
          {"seed", c.seed},
          {"learnableMeans", c.learnableMeans},
          {"learnableScales", c.learnableScales},
          {"initLogScale", c.initLogScale},
          {"threads", c.threads},
          {"logInterval", c.logInterval},
          {"checkpointInterval", c.checkpointInterval}};
}

json to_json(const RunConfig& c) {
  return {{"hashgrid", to_json(c.hashgrid)},
          {"field", to_json(c.field)},
          {"render", to_json(c.render)},
          {"train", to_json(c.train)},
          {"initSeed", c.initSeed}};
}

void apply_json(const json& j, HashGridConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("levels", c.levels);
  r.get("baseResolution", c.baseResolution);
  r.get("perLevelScale", c.perLevelScale);
  r.get("tableSize", c.tableSize);
  r.get("featuresPerLevel", c.featuresPerLevel);
  r.get("boundsMin", c.boundsMin);
  r.get("boundsMax", c.boundsMax);
  r.finish();
}

void apply_json(const json& j, FieldArch& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("inputDim", c.inputDim);
  r.get("hidden", c.hidden);
  r.get("dirFrequencies", c.dirFrequencies);
  r.finish();
}

void apply_json(const json& j, SplashConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("k", c.k);
  r.get("q", c.q);
  r.getEnum("mode", c.mode, parse_feature_mode);
  r.getEnum("radiusMode", c.radiusMode, parse_radius_mode);
  r.finish();
}

void apply_json(const json& j, RenderConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("samples", c.samples);
  r.get("stratified", c.stratified);
  r.get("background", c.background);
  r.get("seed", c.seed);
  r.get("threads", c.threads);
  r.get("clipToSpheres", c.clipToSpheres);
  if (const json* s = r.child("splash")) apply_json(*s, c.splash, r.childPath("splash"));
  r.finish();
}

void apply_json(const json& j, TrainConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("steps", c.steps);
  r.get("raysPerBatch", c.raysPerBatch);
  if (const json* lr = r.child("lr")) {
    ObjectReader l(*lr, r.childPath("lr"));
    l.get("theta", c.lr.theta);
    l.get("grid", c.lr.grid);
    l.get("mean", c.lr.mean);
    l.get("logScale", c.lr.logScale);
    l.finish();
  }
  if (const json* d = r.child("densify")) {
    ObjectReader dr(*d, r.childPath("densify"));
    dr.get("enabled", c.densify.enabled);
    dr.get("intervalSteps", c.densify.intervalSteps);
    dr.get("startStep", c.densify.startStep);
    dr.get("endStep", c.densify.endStep);
    dr.get("maxNewPerCycle", c.densify.maxNewPerCycle);
    dr.get("tauAlpha", c.densify.tauAlpha);
    dr.get("tauS", c.densify.tauS);
    dr.finish();
  }
  if (const json* p = r.child("prune")) {
    ObjectReader pr(*p, r.childPath("prune"));
    pr.get("enabled", c.prune.enabled);
    pr.get("intervalSteps", c.prune.intervalSteps);
    pr.get("lambdaD", c.prune.lambdaD);
    pr.get("lambdaG", c.prune.lambdaG);
    pr.get("tau", c.prune.tau);
    pr.getEnum("mode", c.prune.mode, parse_confidence_mode);
    pr.finish();
  }
  r.get("rebuildIndexEverySteps", c.rebuildIndexEverySteps);
  r.get("seed", c.seed);
  r.get("learnableMeans", c.learnableMeans);
  r.get("learnableScales", c.learnableScales);
  r.get("initLogScale", c.initLogScale);
  r.get("threads", c.threads);
  r.get("logInterval", c.logInterval);
  r.get("checkpointInterval", c.checkpointInterval);
  r.finish();
}

void apply_json(const json& j, RunConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  if (const json* s = r.child("hashgrid")) apply_json(*s, c.hashgrid, r.childPath("hashgrid"));
  if (const json* s = r.child("field")) apply_json(*s, c.field, r.childPath("field"));
  if (const json* s = r.child("render")) apply_json(*s, c.render, r.childPath("render"));
  if (const json* s = r.child("train")) apply_json(*s, c.train, r.childPath("train"));
  r.get("initSeed", c.initSeed);
  r.finish();
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  apply_json(j, c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace genie
