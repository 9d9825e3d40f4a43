#pragma once

#include "genie/checkpoint.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace genie {

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct VerifyOptions {
  /// "all", "rtgps", "drop-bound" or "gradients".
  std::string suite = "all";
  int queries = 200;
  int dropTrials = 300;
  std::vector<double> epsilons{1e-1, 1e-2, 1e-3};
  std::uint64_t seed = 0;
};

/// Oracle suites against a loaded checkpoint: index vs brute-force scan and
/// sphere soundness, the feature drop bound, and finite-difference spot
/// checks of the grid, splash and network gradients.
std::vector<CheckResult> verify_checkpoint(const SceneCheckpoint& checkpoint,
                                           const VerifyOptions& options);

}  // namespace genie
