#pragma once

#include "genie/edit.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace genie {

/// Declarative edit commands shared by `genie edit` scripts and the service.
///
///   {"op": "translate", "selection": ..., "params": {"offset": [x, y, z]}}
///   {"op": "rotate",    "selection": ..., "params": {"axis": [..], "angleDeg": a, "center": [..]}}
///   {"op": "scale",     "selection": ..., "params": {"factors": [..] | "factor": s, "center": [..]}}
///   {"op": "transform", "selection": ..., "params": {"matrix": [[4 rows]]}}
///   {"op": "bind",          "params": {"mesh": path}}
///   {"op": "deform_frame",  "params": {"mesh": path (optional once bound), "frame": n}}
///   {"op": "export_soup",   "params": {"out": path, "q": q}}
///
/// A selection is "all" (the default), {"indices": [...]},
/// {"sphere": {"center": [..], "radius": r}} or {"box": {"min": [..], "max": [..]}}.
/// Relative mesh paths resolve against EditContext::baseDir.

/// State carried between commands of one script or service session.
struct EditContext {
  std::string baseDir;
  /// Default q for export_soup.
  double q = 2.0;
  std::optional<TriMesh> mesh;
  std::string meshPath;
  std::optional<MeshBinding> binding;
};

struct EditOutcome {
  /// Whether the Gaussian set was mutated (and its epoch bumped).
  bool mutated = false;
  std::vector<std::string> warnings;
};

Selection parse_selection(const nlohmann::json& j, const GaussianSet& set);

/// Applies one command; throws EditError with a descriptive message.
EditOutcome apply_edit_command(GaussianSet& set, const nlohmann::json& command,
                               EditContext& context);

/// A JSON array of commands, or {"version": 1, "edits": [...]}.
std::vector<nlohmann::json> parse_edit_script(const std::string& text);

}  // namespace genie
