#pragma once

#include "genie/checkpoint.hpp"
#include "genie/edit_script.hpp"

#include <nlohmann/json.hpp>

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace genie {

inline constexpr int kApiVersion = 1;

/// Carries the HTTP status the failure maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message, nlohmann::json extra = nlohmann::json::object())
      : std::runtime_error(message), status(status), extra(std::move(extra)) {}
  int status;
  nlohmann::json extra;
};

struct ServiceOptions {
  std::string bind = "127.0.0.1";
  int port = 8080;
  int threads = 1;
  std::uint64_t seed = 0;
  /// Second writer waits instead of getting 409.
  bool queueWriters = false;
  /// Resolves relative mesh paths in edits.
  std::string baseDir;
  /// Full-quality preview size when no /render request has set a camera yet.
  int previewWidth = 128;
  int previewHeight = 128;
};

/// Test seams: both run on the request thread.
struct ServiceHooks {
  /// After a render has pinned its snapshot, before it shades anything.
  std::function<void(std::uint64_t epoch)> afterRenderSnapshot;
  /// While an edit holds the writer lock.
  std::function<void()> whileEditing;
};

struct RenderResult {
  std::vector<std::uint8_t> png;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
};

/// Pushed to subscribers; previewFrame events carry the PNG in `binary`.
struct ServiceEvent {
  std::string text;
  std::vector<std::uint8_t> binary;
};

/// Scene state behind the service. Readers pin an immutable epoch snapshot;
/// writers build the next snapshot off to the side and publish it whole.
class EditSession {
 public:
  explicit EditSession(ServiceOptions options = {});
  ~EditSession();
  EditSession(const EditSession&) = delete;
  EditSession& operator=(const EditSession&) = delete;

  nlohmann::json load(const std::string& checkpointPath);
  RenderResult render(const nlohmann::json& request);
  nlohmann::json edit(const nlohmann::json& request);
  /// Gaussians whose confidence sphere meets the box; everything when unset.
  nlohmann::json gaussians(const std::optional<std::pair<Vec3, Vec3>>& bounds) const;
  nlohmann::json status() const;

  bool loaded() const;
  std::uint64_t epoch() const;

  using Listener = std::function<void(const ServiceEvent&)>;
  int subscribe(Listener listener);
  void unsubscribe(int id);
  std::size_t subscriberCount() const;
  /// Blocks until no preview ladder is queued or rendering.
  void waitForPreviews();

  ServiceHooks hooks;
  const ServiceOptions& options() const { return options_; }

  struct Snapshot;

 private:
  std::shared_ptr<const Snapshot> current() const;
  void publish(std::shared_ptr<const Snapshot> next);
  void broadcast(const ServiceEvent& event);
  void requestPreview();
  void previewLoop();

  ServiceOptions options_;
  mutable std::mutex snapshotMutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::mutex writerMutex_;
  EditContext editContext_;
  std::optional<Camera> previewCamera_;

  mutable std::mutex listenerMutex_;
  std::map<int, Listener> listeners_;
  int nextListener_ = 0;

  std::mutex previewMutex_;
  std::condition_variable previewCv_;
  bool previewPending_ = false;
  bool previewBusy_ = false;
  bool stopping_ = false;
  std::thread previewThread_;
};

/// HTTP + WebSocket front end:
///   POST /scene/load  GET /scene  POST /render  POST /edit  GET /gaussians
///   GET /subscribe (WebSocket upgrade)
class EditService {
 public:
  explicit EditService(ServiceOptions options = {});
  ~EditService();

  EditSession& session();
  /// Binds (port 0 picks a free port) and serves on a background thread.
  void start();
  /// Binds and serves on the calling thread until stop().
  bool listen();
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace genie
