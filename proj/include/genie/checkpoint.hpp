#pragma once

#include "genie/trainer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace genie {

// Binary layout (little-endian):
//   "GENIECKP" | u32 version | u32 sectionCount
//   per section: char[4] tag | u64 length | payload | u32 crc32(payload)
// Sections: CONF (JSON run config), GRID, FNET, GAUS, and optionally RADI
// (radius table override) and TRST (optimizer state for resuming).

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChecksumError : public CheckpointError {
 public:
  explicit ChecksumError(std::string section)
      : CheckpointError("checkpoint checksum mismatch in section " + section),
        section_(std::move(section)) {}
  const std::string& section() const { return section_; }

 private:
  std::string section_;
};

class VersionError : public CheckpointError {
 public:
  explicit VersionError(std::uint32_t found)
      : CheckpointError("unsupported checkpoint version " + std::to_string(found)),
        found_(found) {}
  std::uint32_t found() const { return found_; }

 private:
  std::uint32_t found_;
};

class TruncationError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class FormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Open/read/write failures; the message carries the path.
class CheckpointIOError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct SceneCheckpoint {
  SceneBundle bundle;
  std::optional<TrainingState> training;
  /// Explicit per-Gaussian radii; when present the index is built from these
  /// instead of the covariances.
  std::optional<std::vector<double>> radii;
};

std::vector<std::uint8_t> serialize_checkpoint(const SceneBundle& bundle,
                                               const TrainingState* training = nullptr,
                                               const std::vector<double>* radii = nullptr);

/// Validates everything before returning; nothing partial escapes on error.
SceneCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const SceneBundle& bundle, const TrainingState* training,
                     const std::string& path, const std::vector<double>* radii = nullptr);

SceneCheckpoint load_checkpoint(const std::string& path);

/// Index for a loaded checkpoint, honoring an explicit radius table.
ProximityIndex build_index(const SceneCheckpoint& ckpt);

}  // namespace genie
