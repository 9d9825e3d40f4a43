#include "genie/service.hpp"

#include "genie/dataset.hpp"
#include "genie/pipeline.hpp"
#include "genie/render.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <sstream>

namespace genie {

namespace fs = std::filesystem;
using nlohmann::json;

struct EditSession::Snapshot {
  std::shared_ptr<const HashGrid> grid;
  std::shared_ptr<const FieldNetwork> net;
  std::shared_ptr<const std::vector<double>> radii;
  GaussianSet set;
  std::optional<ProximityIndex> index;
  FeatureTable features;
  RenderConfig render;

  std::uint64_t epoch() const { return set.epoch(); }
};

namespace {

json vecJson(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

void checkVersion(const json& request) {
  if (!request.is_object()) throw ServiceError(400, "request body must be a JSON object");
  if (request.contains("version") && request["version"] != kApiVersion) {
    throw ServiceError(422, "unsupported API version " + request["version"].dump());
  }
}

bool allBaked(const GaussianSet& set) {
  return std::all_of(set.gaussians().begin(), set.gaussians().end(),
                     [](const Gaussian& g) { return g.baked; });
}

/// Finishes a snapshot whose set changed: index and feature table.
void refresh(EditSession::Snapshot& s) {
  s.render.splash.mode = allBaked(s.set) ? FeatureMode::Baked : FeatureMode::Live;
  s.index.reset();
  if (!s.set.empty()) {
    if (s.radii && s.radii->size() == s.set.size()) {
      s.index = ProximityIndex::build_with_radii(s.set, *s.radii, s.render.splash.q);
    } else {
      s.index = ProximityIndex::build(s.set, s.render.splash.q, s.render.splash.radiusMode);
    }
  }
  s.features = resolve_features(s.set, *s.grid, s.render.splash.mode);
}

std::optional<std::pair<Vec3, Vec3>> meanBounds(const GaussianSet& set) {
  if (set.empty()) return std::nullopt;
  Vec3 lo = Vec3::Constant(INFINITY), hi = Vec3::Constant(-INFINITY);
  for (const Gaussian& g : set.gaussians()) {
    lo = lo.cwiseMin(g.mean);
    hi = hi.cwiseMax(g.mean);
  }
  return std::make_pair(lo, hi);
}

json boundsJson(const std::optional<std::pair<Vec3, Vec3>>& b) {
  if (!b) return nullptr;
  return {{"min", vecJson(b->first)}, {"max", vecJson(b->second)}};
}

/// Union of the sphere boxes of every Gaussian that moved or changed shape.
std::optional<std::pair<Vec3, Vec3>> dirtyBounds(const GaussianSet& before, const GaussianSet& after,
                                                 const SplashConfig& splash) {
  std::optional<std::pair<Vec3, Vec3>> out;
  auto grow = [&](const Gaussian& g) {
    const double r = effective_radius(g, splash.q, splash.radiusMode);
    const Vec3 lo = g.mean.array() - r, hi = g.mean.array() + r;
    if (!out) {
      out = std::make_pair(lo, hi);
    } else {
      out->first = out->first.cwiseMin(lo);
      out->second = out->second.cwiseMax(hi);
    }
  };
  const std::size_t n = std::min(before.size(), after.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (before[i].mean != after[i].mean || before[i].logScale != after[i].logScale) {
      grow(before[i]);
      grow(after[i]);
    }
  }
  return out;
}

Camera defaultCamera(const GaussianSet& set, int width, int height) {
  Vec3 center = Vec3::Zero();
  double extent = 1.0;
  if (auto b = meanBounds(set)) {
    center = 0.5 * (b->first + b->second);
    extent = std::max(0.5, 0.5 * (b->second - b->first).norm());
  }
  const double fov = 40.0 * M_PI / 180.0;
  const double dist = 1.6 * extent / std::tan(fov / 2.0);
  const Vec3 eye = center + dist * Vec3(0.0, -std::cos(0.4), std::sin(0.4));
  return look_at_camera(eye, center, Vec3::UnitZ(), focal_from_fov(fov, width), width, height,
                        std::max(1e-3, dist - 4 * extent), dist + 4 * extent);
}

Camera scaledCamera(const Camera& c, int width) {
  Camera out = c;
  out.width = width;
  out.height = std::max(1, static_cast<int>(std::lround(double(c.height) * width / c.width)));
  out.focal = c.focal * width / c.width;
  return out;
}

int samplesFor(const std::string& quality, int full) {
  if (quality == "low") return std::max(8, full / 4);
  if (quality == "medium") return std::max(8, full / 2);
  if (quality == "full") return full;
  throw ServiceError(400, "quality must be low, medium or full");
}

std::vector<std::uint8_t> renderPng(const EditSession::Snapshot& s, const Camera& camera,
                                    int samples, std::uint64_t seed, int threads) {
  RenderConfig config = s.render;
  config.samples = samples;
  config.seed = seed;
  config.threads = threads;
  FieldScene scene{&s.set, s.index ? &*s.index : nullptr, &s.features, s.net.get()};
  Rgba8Image img = to_rgba8(render_image(camera, scene, config));
  // Colors already include the background.
  for (std::size_t p = 3; p < img.rgba.size(); p += 4) img.rgba[p] = 255;
  return encode_png(img);
}

}  // namespace

EditSession::EditSession(ServiceOptions options) : options_(std::move(options)) {
  editContext_.baseDir = options_.baseDir;
  previewThread_ = std::thread([this] { previewLoop(); });
}

EditSession::~EditSession() {
  {
    std::lock_guard lock(previewMutex_);
    stopping_ = true;
  }
  previewCv_.notify_all();
  previewThread_.join();
}

std::shared_ptr<const EditSession::Snapshot> EditSession::current() const {
  std::lock_guard lock(snapshotMutex_);
  return snapshot_;
}

void EditSession::publish(std::shared_ptr<const Snapshot> next) {
  std::lock_guard lock(snapshotMutex_);
  snapshot_ = std::move(next);
}

bool EditSession::loaded() const { return current() != nullptr; }

std::uint64_t EditSession::epoch() const {
  auto s = current();
  return s ? s->epoch() : 0;
}

json EditSession::load(const std::string& checkpointPath) {
  std::lock_guard writer(writerMutex_);
  fs::path path(checkpointPath);
  if (path.is_relative() && !options_.baseDir.empty()) path = fs::path(options_.baseDir) / path;
  if (!fs::exists(path)) {
    throw ServiceError(404, "checkpoint not found: " + path.string(), {{"path", path.string()}});
  }
  SceneCheckpoint ckpt;
  try {
    ckpt = load_checkpoint(path.string());
  } catch (const ChecksumError& e) {
    throw ServiceError(422, e.what(), {{"path", path.string()}, {"section", e.section()}});
  } catch (const CheckpointIOError& e) {
    throw ServiceError(404, e.what(), {{"path", path.string()}});
  } catch (const CheckpointError& e) {
    throw ServiceError(422, e.what(), {{"path", path.string()}});
  }
  auto s = std::make_shared<Snapshot>();
  s->grid = std::make_shared<const HashGrid>(std::move(ckpt.bundle.grid));
  s->net = std::make_shared<const FieldNetwork>(std::move(ckpt.bundle.net));
  if (ckpt.radii) s->radii = std::make_shared<const std::vector<double>>(std::move(*ckpt.radii));
  s->set = std::move(ckpt.bundle.set);
  s->render = ckpt.bundle.render;
  refresh(*s);
  const json out = {{"version", kApiVersion},
                    {"epoch", s->epoch()},
                    {"gaussianCount", s->set.size()},
                    {"baked", allBaked(s->set)},
                    {"bounds", boundsJson(meanBounds(s->set))}};
  editContext_ = EditContext{};
  editContext_.baseDir = options_.baseDir;
  editContext_.q = s->render.splash.q;
  {
    std::lock_guard lock(previewMutex_);
    previewCamera_ = defaultCamera(s->set, options_.previewWidth, options_.previewHeight);
  }
  const std::uint64_t epoch = s->epoch();
  publish(std::move(s));
  broadcast({json{{"version", kApiVersion},
                  {"event", "epochChanged"},
                  {"payload", {{"epoch", epoch}, {"dirtyBounds", nullptr}, {"reason", "load"}}}}
                 .dump(),
             {}});
  requestPreview();
  return out;
}

json EditSession::status() const {
  auto s = current();
  json out = {{"version", kApiVersion}, {"loaded", s != nullptr}};
  if (s) {
    out["epoch"] = s->epoch();
    out["gaussianCount"] = s->set.size();
    out["bounds"] = boundsJson(meanBounds(s->set));
    out["q"] = s->render.splash.q;
    out["k"] = s->render.splash.k;
  }
  return out;
}

RenderResult EditSession::render(const json& request) {
  checkVersion(request);
  auto snap = current();
  if (!snap) throw ServiceError(409, "no scene loaded");
  if (hooks.afterRenderSnapshot) hooks.afterRenderSnapshot(snap->epoch());
  Camera camera;
  try {
    camera = camera_from_json(request);
  } catch (const std::invalid_argument& e) {
    throw ServiceError(400, e.what());
  }
  const std::string quality = request.value("quality", std::string("full"));
  const int samples = samplesFor(quality, snap->render.samples);
  std::uint64_t seed = options_.seed;
  if (request.contains("seed")) {
    if (!request["seed"].is_number_unsigned()) throw ServiceError(400, "seed must be a non-negative integer");
    seed = request["seed"].get<std::uint64_t>();
  }
  if (quality == "full") {
    std::lock_guard lock(previewMutex_);
    previewCamera_ = camera;
  }
  RenderResult out;
  out.png = renderPng(*snap, camera, samples, seed, options_.threads);
  out.epoch = snap->epoch();
  out.seed = seed;
  out.width = camera.width;
  out.height = camera.height;
  return out;
}

json EditSession::edit(const json& request) {
  checkVersion(request);
  std::unique_lock writer(writerMutex_, std::defer_lock);
  if (options_.queueWriters) {
    writer.lock();
  } else if (!writer.try_lock()) {
    throw ServiceError(409, "another edit is in flight");
  }
  auto snap = current();
  if (!snap) throw ServiceError(409, "no scene loaded");
  if (hooks.whileEditing) hooks.whileEditing();

  json command = request;
  command.erase("version");
  auto next = std::make_shared<Snapshot>(*snap);
  EditOutcome outcome;
  try {
    outcome = apply_edit_command(next->set, command, editContext_);
  } catch (const EditError& e) {
    throw ServiceError(422, e.what());
  }
  if (!outcome.mutated) {
    return {{"version", kApiVersion}, {"newEpoch", snap->epoch()}, {"warnings", outcome.warnings}};
  }
  refresh(*next);
  const auto dirty = dirtyBounds(snap->set, next->set, next->render.splash);
  const std::uint64_t epoch = next->epoch();
  publish(std::move(next));
  broadcast({json{{"version", kApiVersion},
                  {"event", "epochChanged"},
                  {"payload", {{"epoch", epoch}, {"dirtyBounds", boundsJson(dirty)}}}}
                 .dump(),
             {}});
  requestPreview();
  return {{"version", kApiVersion}, {"newEpoch", epoch}, {"warnings", outcome.warnings}};
}

json EditSession::gaussians(const std::optional<std::pair<Vec3, Vec3>>& bounds) const {
  auto snap = current();
  if (!snap) throw ServiceError(409, "no scene loaded");
  json list = json::array();
  for (std::size_t i = 0; i < snap->set.size(); ++i) {
    const Gaussian& g = snap->set[i];
    const double r = snap->index ? snap->index->radii()[i] : 0.0;
    if (bounds) {
      const Vec3 nearest = g.mean.cwiseMax(bounds->first).cwiseMin(bounds->second);
      if ((nearest - g.mean).squaredNorm() > r * r) continue;
    }
    list.push_back({{"index", i},
                    {"mean", vecJson(g.mean)},
                    {"radius", r},
                    {"confidence", g.confidence}});
  }
  return {{"version", kApiVersion}, {"epoch", snap->epoch()}, {"gaussians", std::move(list)}};
}

int EditSession::subscribe(Listener listener) {
  std::lock_guard lock(listenerMutex_);
  listeners_[nextListener_] = std::move(listener);
  return nextListener_++;
}

void EditSession::unsubscribe(int id) {
  std::lock_guard lock(listenerMutex_);
  listeners_.erase(id);
}

std::size_t EditSession::subscriberCount() const {
  std::lock_guard lock(listenerMutex_);
  return listeners_.size();
}

void EditSession::broadcast(const ServiceEvent& event) {
  std::lock_guard lock(listenerMutex_);
  for (auto& [id, fn] : listeners_) fn(event);
}

void EditSession::requestPreview() {
  {
    std::lock_guard lock(previewMutex_);
    previewPending_ = true;
  }
  previewCv_.notify_all();
}

void EditSession::waitForPreviews() {
  std::unique_lock lock(previewMutex_);
  previewCv_.wait(lock, [&] { return (!previewPending_ && !previewBusy_) || stopping_; });
}

void EditSession::previewLoop() {
  struct Rung {
    const char* quality;
    int width;
  };
  for (;;) {
    Camera camera;
    {
      std::unique_lock lock(previewMutex_);
      previewCv_.wait(lock, [&] { return previewPending_ || stopping_; });
      if (stopping_) return;
      previewPending_ = false;
      previewBusy_ = true;
      camera = *previewCamera_;
    }
    auto snap = current();
    std::vector<Rung> ladder{{"low", 16}, {"medium", 64}, {"full", camera.width}};
    ladder.erase(std::remove_if(ladder.begin(), ladder.end() - 1,
                                [&](const Rung& r) { return r.width >= camera.width; }),
                 ladder.end() - 1);
    int level = 0;
    for (const Rung& rung : ladder) {
      {
        std::lock_guard lock(previewMutex_);
        if (stopping_ || previewPending_) break;  // superseded by a newer epoch
      }
      const Camera c = scaledCamera(camera, rung.width);
      ServiceEvent ev;
      ev.binary = renderPng(*snap, c, samplesFor(rung.quality, snap->render.samples), options_.seed,
                            options_.threads);
      ev.text = json{{"version", kApiVersion},
                     {"event", "previewFrame"},
                     {"payload",
                      {{"epoch", snap->epoch()},
                       {"level", level++},
                       {"quality", rung.quality},
                       {"width", c.width},
                       {"height", c.height},
                       {"seed", options_.seed},
                       {"bytes", ev.binary.size()}}}}
                    .dump();
      broadcast(ev);
    }
    {
      std::lock_guard lock(previewMutex_);
      previewBusy_ = false;
    }
    previewCv_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// HTTP and WebSocket transport

namespace {

std::string websocketAccept(const std::string& key) {
  const std::string input = key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(input.data(), input.size(), digest, &len, EVP_sha1(), nullptr);
  return httplib::detail::base64_encode(std::string(reinterpret_cast<char*>(digest), len));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool sendAll(int sock, const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    const ssize_t w = ::send(sock, p, n, MSG_NOSIGNAL);
    if (w <= 0) return false;
    p += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool recvAll(int sock, void* data, std::size_t n) {
  char* p = static_cast<char*>(data);
  while (n > 0) {
    pollfd pfd{sock, POLLIN, 0};
    if (::poll(&pfd, 1, 5000) <= 0) return false;
    const ssize_t r = ::recv(sock, p, n, 0);
    if (r <= 0) return false;
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

bool sendFrame(int sock, std::uint8_t opcode, const std::uint8_t* data, std::size_t n) {
  std::uint8_t head[10];
  std::size_t h = 0;
  head[h++] = 0x80 | opcode;
  if (n < 126) {
    head[h++] = static_cast<std::uint8_t>(n);
  } else if (n < 65536) {
    head[h++] = 126;
    head[h++] = static_cast<std::uint8_t>(n >> 8);
    head[h++] = static_cast<std::uint8_t>(n);
  } else {
    head[h++] = 127;
    for (int i = 7; i >= 0; --i) head[h++] = static_cast<std::uint8_t>(std::uint64_t(n) >> (8 * i));
  }
  return sendAll(sock, head, h) && (n == 0 || sendAll(sock, data, n));
}

struct Frame {
  std::uint8_t opcode = 0;
  std::vector<std::uint8_t> payload;
};

bool readFrame(int sock, Frame& f) {
  std::uint8_t head[2];
  if (!recvAll(sock, head, 2)) return false;
  f.opcode = head[0] & 0x0F;
  const bool masked = head[1] & 0x80;
  std::uint64_t len = head[1] & 0x7F;
  if (len == 126) {
    std::uint8_t b[2];
    if (!recvAll(sock, b, 2)) return false;
    len = (std::uint64_t(b[0]) << 8) | b[1];
  } else if (len == 127) {
    std::uint8_t b[8];
    if (!recvAll(sock, b, 8)) return false;
    len = 0;
    for (int i = 0; i < 8; ++i) len = (len << 8) | b[i];
  }
  if (len > (1u << 20)) return false;
  std::uint8_t mask[4] = {0, 0, 0, 0};
  if (masked && !recvAll(sock, mask, 4)) return false;
  f.payload.resize(len);
  if (len > 0 && !recvAll(sock, f.payload.data(), len)) return false;
  for (std::size_t i = 0; i < len; ++i) f.payload[i] ^= mask[i % 4];
  return true;
}

/// Per-subscriber outbound queue; only the connection thread writes to the
/// socket, so each subscriber sees events in broadcast order.
struct Outbox {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<ServiceEvent> events;
};

class Server : public httplib::Server {
 public:
  explicit Server(EditSession& session) : session_(session) {}

 protected:
  bool process_and_close_socket(socket_t sock) override {
    std::size_t headerLen = 0;
    std::string head;
    bool ok;
    if (peekUpgrade(sock, head, headerLen)) {
      std::string consumed(headerLen, '\0');
      ok = recvAll(sock, consumed.data(), headerLen);
      if (ok) serveWebSocket(sock, head);
    } else {
      // Same as the base implementation, which is private.
      ok = httplib::detail::process_server_socket(
          svr_sock_, sock, keep_alive_max_count_, keep_alive_timeout_sec_, read_timeout_sec_,
          read_timeout_usec_, write_timeout_sec_, write_timeout_usec_,
          [this](httplib::Stream& strm, bool closeConnection, bool& connectionClosed) {
            return process_request(strm, closeConnection, connectionClosed, nullptr);
          });
    }
    httplib::detail::shutdown_socket(sock);
    httplib::detail::close_socket(sock);
    return ok;
  }

 private:
  /// Looks at the pending request without consuming it; true for a
  /// WebSocket upgrade on /subscribe.
  bool peekUpgrade(socket_t sock, std::string& head, std::size_t& headerLen) {
    char buf[8192];
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    for (;;) {
      pollfd pfd{sock, POLLIN, 0};
      if (::poll(&pfd, 1, 100) < 0) return false;
      const ssize_t n = ::recv(sock, buf, sizeof(buf), MSG_PEEK);
      if (n <= 0 && (pfd.revents & POLLIN)) return false;
      if (n > 0) {
        const std::string_view view(buf, static_cast<std::size_t>(n));
        if (view.size() >= 4 && view.substr(0, 4) != "GET ") return false;
        const auto end = view.find("\r\n\r\n");
        if (end != std::string_view::npos) {
          head.assign(view.substr(0, end));
          headerLen = end + 4;
          const std::string lowered = lower(head);
          const bool path = lowered.rfind("get /subscribe ", 0) == 0 ||
                            lowered.rfind("get /subscribe?", 0) == 0;
          return path && lowered.find("upgrade: websocket") != std::string::npos;
        }
        if (static_cast<std::size_t>(n) == sizeof(buf)) return false;
      }
      if (std::chrono::steady_clock::now() > deadline || !is_running()) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

  void serveWebSocket(socket_t sock, const std::string& head) {
    std::string key;
    std::istringstream lines(head);
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      if (lower(line.substr(0, colon)) == "sec-websocket-key") {
        key = line.substr(colon + 1);
        key.erase(0, key.find_first_not_of(' '));
      }
    }
    if (key.empty()) {
      const std::string bad = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
      sendAll(sock, bad.data(), bad.size());
      return;
    }
    auto box = std::make_shared<Outbox>();
    const int id = session_.subscribe([box](const ServiceEvent& e) {
      {
        std::lock_guard lock(box->mutex);
        box->events.push_back(e);
      }
      box->cv.notify_one();
    });
    const std::string reply =
        "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
        "Sec-WebSocket-Accept: " +
        websocketAccept(key) + "\r\n\r\n";
    bool alive = sendAll(sock, reply.data(), reply.size());
    while (alive && is_running()) {
      std::deque<ServiceEvent> pending;
      {
        std::unique_lock lock(box->mutex);
        box->cv.wait_for(lock, std::chrono::milliseconds(50), [&] { return !box->events.empty(); });
        pending.swap(box->events);
      }
      for (const ServiceEvent& e : pending) {
        alive = alive && sendFrame(sock, 0x1, reinterpret_cast<const std::uint8_t*>(e.text.data()),
                                   e.text.size());
        if (!e.binary.empty()) alive = alive && sendFrame(sock, 0x2, e.binary.data(), e.binary.size());
      }
      pollfd pfd{sock, POLLIN, 0};
      while (alive && ::poll(&pfd, 1, 0) > 0) {
        if (pfd.revents & (POLLHUP | POLLERR)) {
          alive = false;
          break;
        }
        Frame f;
        if (!readFrame(sock, f)) {
          alive = false;
        } else if (f.opcode == 0x8) {
          sendFrame(sock, 0x8, f.payload.data(), std::min<std::size_t>(f.payload.size(), 2));
          alive = false;
        } else if (f.opcode == 0x9) {
          alive = sendFrame(sock, 0xA, f.payload.data(), f.payload.size());
        }
      }
    }
    session_.unsubscribe(id);
  }

  EditSession& session_;
};

void sendJson(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void sendError(httplib::Response& res, const ServiceError& e) {
  json body = e.extra.is_object() ? e.extra : json::object();
  body["version"] = kApiVersion;
  body["error"] = e.what();
  sendJson(res, e.status, body);
}

json parseBody(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ServiceError(400, std::string("malformed JSON: ") + e.what());
  }
}

std::pair<Vec3, Vec3> parseBounds(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    std::size_t used = 0;
    double x;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw ServiceError(400, "bounds: '" + tok + "' is not a number");
    }
    if (used != tok.size() || !std::isfinite(x)) throw ServiceError(400, "bounds: '" + tok + "' is not a number");
    v.push_back(x);
  }
  if (v.size() != 6) throw ServiceError(400, "bounds must be minX,minY,minZ,maxX,maxY,maxZ");
  const Vec3 lo(v[0], v[1], v[2]), hi(v[3], v[4], v[5]);
  if ((lo.array() > hi.array()).any()) throw ServiceError(400, "bounds: min exceeds max");
  return {lo, hi};
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    sendError(res, e);
  } catch (const std::exception& e) {
    sendError(res, ServiceError(500, e.what()));
  }
}

}  // namespace

struct EditService::Impl {
  explicit Impl(ServiceOptions opts) : session(std::move(opts)), server(session) {
    server.Post("/scene/load", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = parseBody(req);
        checkVersion(body);
        if (!body.contains("checkpointPath") || !body["checkpointPath"].is_string()) {
          throw ServiceError(400, "checkpointPath is required");
        }
        sendJson(res, 200, session.load(body["checkpointPath"].get<std::string>()));
      });
    });
    server.Get("/scene", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { sendJson(res, 200, session.status()); });
    });
    server.Post("/render", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        RenderResult r = session.render(parseBody(req));
        res.status = 200;
        res.set_header("X-Epoch", std::to_string(r.epoch));
        res.set_header("X-Render-Seed", std::to_string(r.seed));
        res.set_content(std::string(r.png.begin(), r.png.end()), "image/png");
      });
    });
    server.Post("/edit", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { sendJson(res, 200, session.edit(parseBody(req))); });
    });
    server.Get("/gaussians", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<std::pair<Vec3, Vec3>> bounds;
        if (req.has_param("bounds")) bounds = parseBounds(req.get_param_value("bounds"));
        sendJson(res, 200, session.gaussians(bounds));
      });
    });
  }

  EditSession session;
  Server server;
  std::thread thread;
  std::atomic<int> port{0};
};

EditService::EditService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

EditService::~EditService() { stop(); }

EditSession& EditService::session() { return impl_->session; }

void EditService::start() {
  const ServiceOptions& o = impl_->session.options();
  int port = o.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(o.bind);
  } else if (!impl_->server.bind_to_port(o.bind, port)) {
    port = -1;
  }
  if (port < 0) throw std::runtime_error("cannot bind " + o.bind + ":" + std::to_string(o.port));
  impl_->port = port;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

bool EditService::listen() {
  const ServiceOptions& o = impl_->session.options();
  if (!impl_->server.bind_to_port(o.bind, o.port)) return false;
  impl_->port = o.port;
  return impl_->server.listen_after_bind();
}

void EditService::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int EditService::port() const { return impl_->port; }

}  // namespace genie
