#include "genie/edit_script.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <filesystem>
#include <set>

namespace genie {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vec3 vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw EditError(what + ": expected a 3-array");
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw EditError(what + ": expected numbers");
    v[a] = j[a].get<double>();
  }
  if (!v.allFinite()) throw EditError(what + ": non-finite value");
  return v;
}

double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw EditError(what + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw EditError(what + ": non-finite value");
  return v;
}

const json& need(const json& params, const char* key, const std::string& op) {
  if (!params.is_object() || !params.contains(key)) {
    throw EditError(op + ": missing params." + key);
  }
  return params[key];
}

std::string resolvePath(const std::string& p, const EditContext& ctx) {
  fs::path path(p);
  if (path.is_relative() && !ctx.baseDir.empty()) path = fs::path(ctx.baseDir) / path;
  return path.string();
}

void ensureMesh(const json& params, EditContext& ctx, const std::string& op) {
  if (params.is_object() && params.contains("mesh")) {
    if (!params["mesh"].is_string()) throw EditError(op + ": params.mesh must be a path");
    const std::string path = resolvePath(params["mesh"].get<std::string>(), ctx);
    if (!ctx.mesh || ctx.meshPath != path) {
      ctx.mesh = load_mesh_sequence(path);
      ctx.meshPath = path;
      ctx.binding.reset();
    }
  }
  if (!ctx.mesh) throw EditError(op + ": no mesh loaded (pass params.mesh)");
}

}  // namespace

Selection parse_selection(const json& j, const GaussianSet& set) {
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "all")) return Selection::all(set);
  if (!j.is_object() || j.size() != 1) {
    throw EditError("selection must be \"all\" or an object with one of indices/sphere/box");
  }
  if (j.contains("indices")) {
    const json& idx = j["indices"];
    if (!idx.is_array()) throw EditError("selection.indices must be an array");
    std::vector<std::uint32_t> out;
    out.reserve(idx.size());
    for (const json& v : idx) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw EditError("selection.indices must hold non-negative integers");
      }
      const auto i = v.get<std::int64_t>();
      if (i > static_cast<std::int64_t>(UINT32_MAX)) {
        throw EditError("selection index " + std::to_string(i) + " out of range");
      }
      out.push_back(static_cast<std::uint32_t>(i));
    }
    return Selection::of(std::move(out), set);
  }
  if (j.contains("sphere")) {
    const json& s = j["sphere"];
    if (!s.is_object() || !s.contains("center") || !s.contains("radius")) {
      throw EditError("selection.sphere needs center and radius");
    }
    const double r = number(s["radius"], "selection.sphere.radius");
    if (r < 0) throw EditError("selection.sphere.radius must be non-negative");
    return Selection::sphere(set, vec3(s["center"], "selection.sphere.center"), r);
  }
  if (j.contains("box")) {
    const json& b = j["box"];
    if (!b.is_object() || !b.contains("min") || !b.contains("max")) {
      throw EditError("selection.box needs min and max");
    }
    return Selection::box(set, vec3(b["min"], "selection.box.min"),
                          vec3(b["max"], "selection.box.max"));
  }
  throw EditError("selection must be \"all\" or an object with one of indices/sphere/box");
}

EditOutcome apply_edit_command(GaussianSet& set, const json& command, EditContext& ctx) {
  if (!command.is_object() || !command.contains("op") || !command["op"].is_string()) {
    throw EditError("edit command needs a string \"op\"");
  }
  static const std::set<std::string> allowed{"op", "selection", "params", "snapshot", "version"};
  for (const auto& [key, _] : command.items()) {
    if (!allowed.count(key)) throw EditError("unknown edit key '" + key + "'");
  }
  const std::string op = command["op"].get<std::string>();
  const json params = command.value("params", json::object());
  if (!params.is_object()) throw EditError(op + ": params must be an object");
  const json selJson = command.value("selection", json());

  EditOutcome outcome;
  auto transformWith = [&](const Mat4& m) {
    apply_transform(set, parse_selection(selJson, set), m);
    outcome.mutated = true;
  };

  if (op == "translate") {
    transformWith(translation(vec3(need(params, "offset", op), "translate.offset")));
  } else if (op == "rotate") {
    const Vec3 axis = vec3(need(params, "axis", op), "rotate.axis");
    double angle;
    if (params.contains("angleDeg")) {
      angle = number(params["angleDeg"], "rotate.angleDeg") * M_PI / 180.0;
    } else {
      angle = number(need(params, "angle", op), "rotate.angle");
    }
    const Vec3 center =
        params.contains("center") ? vec3(params["center"], "rotate.center") : Vec3::Zero();
    transformWith(rotation_about(axis, angle, center));
  } else if (op == "scale") {
    Vec3 factors;
    if (params.contains("factors")) {
      factors = vec3(params["factors"], "scale.factors");
    } else {
      factors = Vec3::Constant(number(need(params, "factor", op), "scale.factor"));
    }
    const Vec3 center =
        params.contains("center") ? vec3(params["center"], "scale.center") : Vec3::Zero();
    transformWith(scaling_about(factors, center));
  } else if (op == "transform") {
    const json& m = need(params, "matrix", op);
    if (!m.is_array() || m.size() != 4) throw EditError("transform.matrix must have 4 rows");
    Mat4 t;
    for (int r = 0; r < 4; ++r) {
      if (!m[r].is_array() || m[r].size() != 4) throw EditError("transform.matrix rows need 4 entries");
      for (int c = 0; c < 4; ++c) t(r, c) = number(m[r][c], "transform.matrix");
    }
    transformWith(t);
  } else if (op == "bind") {
    ensureMesh(params, ctx, op);
    ctx.binding = bind_to_mesh(set, *ctx.mesh);
  } else if (op == "deform_frame") {
    const json& f = need(params, "frame", op);
    if (!f.is_number_integer() || f.get<std::int64_t>() < 0) {
      throw EditError("deform_frame.frame must be a non-negative integer");
    }
    ensureMesh(params, ctx, op);
    for (const Gaussian& g : set.gaussians()) {
      if (!g.baked) throw EditError("edits require baked features; bake the scene first");
    }
    const auto frame = static_cast<std::size_t>(f.get<std::int64_t>());
    if (frame >= ctx.mesh->frames.size()) {
      throw EditError("deform frame " + std::to_string(frame) + " beyond sequence length " +
                      std::to_string(ctx.mesh->frames.size()));
    }
    if (!ctx.binding || ctx.binding->entries.size() != set.size()) {
      ctx.binding = bind_to_mesh(set, *ctx.mesh);
    }
    DeformReport report = deform_from_mesh(set, *ctx.binding, *ctx.mesh, frame);
    outcome.mutated = true;
    outcome.warnings = std::move(report.warnings);
  } else if (op == "export_soup") {
    const json& out = need(params, "out", op);
    if (!out.is_string()) throw EditError("export_soup.out must be a path");
    const double q = params.contains("q") ? number(params["q"], "export_soup.q") : ctx.q;
    write_obj(resolvePath(out.get<std::string>(), ctx), export_triangle_soup(set, q));
  } else {
    throw EditError("unknown edit op '" + op + "'");
  }
  return outcome;
}

std::vector<json> parse_edit_script(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw EditError(std::string("malformed edit script: ") + e.what());
  }
  if (j.is_object()) {
    if (j.contains("version") && j["version"] != 1) {
      throw EditError("unsupported edit script version " + j["version"].dump());
    }
    if (!j.contains("edits")) throw EditError("edit script object needs an \"edits\" array");
    j = j["edits"];
  }
  if (!j.is_array()) throw EditError("edit script must be an array of commands");
  return std::vector<json>(j.begin(), j.end());
}

}  // namespace genie
