#include "genie/checkpoint.hpp"

#include "genie/config.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace genie {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'E', 'N', 'I', 'E', 'C', 'K', 'P'};

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void putVec3(const Vec3& v) {
    put(v[0]);
    put(v[1]);
    put(v[2]);
  }
  void putDoubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size() * sizeof(double));
  }
  void putVec3s(const std::vector<Vec3>& v) {
    put<std::uint64_t>(v.size());
    for (const Vec3& x : v) putVec3(x);
  }
  void putBytes(std::span<const std::uint8_t> v) {
    put<std::uint64_t>(v.size());
    buf_.insert(buf_.end(), v.begin(), v.end());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Vec3 getVec3() {
    const double x = get<double>();
    const double y = get<double>();
    const double z = get<double>();
    return {x, y, z};
  }
  std::uint64_t getCount(std::size_t elementBytes) {
    const auto n = get<std::uint64_t>();
    if (elementBytes > 0 && n > remaining() / elementBytes) {
      throw FormatError(what_ + ": array length " + std::to_string(n) + " exceeds section size");
    }
    return n;
  }
  std::vector<double> getDoubles() {
    const auto n = getCount(sizeof(double));
    std::vector<double> v(n);
    if (n > 0) std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::vector<Vec3> getVec3s() {
    const auto n = getCount(3 * sizeof(double));
    std::vector<Vec3> v(n);
    for (auto& x : v) x = getVec3();
    return v;
  }
  std::vector<std::uint8_t> getBytes() {
    const auto n = getCount(1);
    std::vector<std::uint8_t> v(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expectEnd() const {
    if (remaining() != 0) {
      throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw TruncationError("checkpoint truncated in " + what_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::uint32_t crc(std::span<const std::uint8_t> data) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  // zlib takes uInt lengths; feed large payloads in slices.
  while (off < data.size()) {
    const std::size_t len = std::min<std::size_t>(data.size() - off, 1u << 30);
    c = crc32(c, data.data() + off, static_cast<uInt>(len));
    off += len;
  }
  return static_cast<std::uint32_t>(c);
}

void appendSection(Writer& out, const char (&tag)[5], std::vector<std::uint8_t> payload) {
  for (int i = 0; i < 4; ++i) out.put(tag[i]);
  out.put<std::uint64_t>(payload.size());
  out.buffer().insert(out.buffer().end(), payload.begin(), payload.end());
  out.put<std::uint32_t>(crc(payload));
}

std::vector<std::uint8_t> encodeGaussians(const GaussianSet& set) {
  Writer w;
  const std::size_t dim = set.empty() ? 0 : set[0].feature.size();
  w.put<std::uint64_t>(set.size());
  w.put<std::uint64_t>(dim);
  w.put<std::uint64_t>(set.epoch());
  for (const Gaussian& g : set.gaussians()) {
    if (g.feature.size() != dim) {
      throw std::invalid_argument("save_checkpoint: Gaussians have mixed feature dimensions");
    }
    w.putVec3(g.mean);
    w.putVec3(g.logScale);
    w.put(g.confidence);
    w.put<std::uint8_t>(g.baked ? 1 : 0);
    for (double f : g.feature) w.put(f);
  }
  return std::move(w.buffer());
}

GaussianSet decodeGaussians(std::span<const std::uint8_t> payload) {
  Reader r(payload, "section GAUS");
  const auto n = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint64_t>();
  const auto epoch = r.get<std::uint64_t>();
  const std::uint64_t perGaussian = 7 * sizeof(double) + 1 + dim * sizeof(double);
  if (dim > payload.size() || (perGaussian > 0 && n > r.remaining() / perGaussian)) {
    throw FormatError("section GAUS: header counts inconsistent with section size");
  }
  std::vector<Gaussian> gs(n);
  for (Gaussian& g : gs) {
    g.mean = r.getVec3();
    g.logScale = r.getVec3();
    g.confidence = r.get<double>();
    const auto baked = r.get<std::uint8_t>();
    if (baked > 1) throw FormatError("section GAUS: baked flag must be 0 or 1");
    g.baked = baked == 1;
    g.feature.resize(dim);
    for (double& f : g.feature) f = r.get<double>();
  }
  r.expectEnd();
  return GaussianSet(std::move(gs), epoch);
}

std::vector<std::uint8_t> encodeTraining(const TrainingState& s) {
  Writer w;
  w.put<std::int64_t>(s.step);
  const OptimizerState& o = s.optimizer;
  w.put<std::int64_t>(o.step);
  w.putDoubles(o.thetaM);
  w.putDoubles(o.thetaV);
  w.putDoubles(o.gridM);
  w.putDoubles(o.gridV);
  w.putVec3s(o.meanM);
  w.putVec3s(o.meanV);
  w.putVec3s(o.logScaleM);
  w.putVec3s(o.logScaleV);
  w.putBytes(s.visited);
  w.putVec3s(s.pendingMean);
  w.putVec3s(s.pendingLogScale);
  return std::move(w.buffer());
}

TrainingState decodeTraining(std::span<const std::uint8_t> payload) {
  Reader r(payload, "section TRST");
  TrainingState s;
  s.step = r.get<std::int64_t>();
  OptimizerState& o = s.optimizer;
  o.step = r.get<std::int64_t>();
  o.thetaM = r.getDoubles();
  o.thetaV = r.getDoubles();
  o.gridM = r.getDoubles();
  o.gridV = r.getDoubles();
  o.meanM = r.getVec3s();
  o.meanV = r.getVec3s();
  o.logScaleM = r.getVec3s();
  o.logScaleV = r.getVec3s();
  s.visited = r.getBytes();
  s.pendingMean = r.getVec3s();
  s.pendingLogScale = r.getVec3s();
  r.expectEnd();
  return s;
}

std::vector<std::uint8_t> encodeDoubles(std::span<const double> v) {
  Writer w;
  w.putDoubles(v);
  return std::move(w.buffer());
}

std::vector<double> decodeDoubles(std::span<const std::uint8_t> payload, const std::string& tag) {
  Reader r(payload, "section " + tag);
  auto v = r.getDoubles();
  r.expectEnd();
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const SceneBundle& bundle,
                                               const TrainingState* training,
                                               const std::vector<double>* radii) {
  if (radii != nullptr && radii->size() != bundle.set.size()) {
    throw std::invalid_argument("save_checkpoint: radius table size differs from Gaussian count");
  }
  const nlohmann::json conf = {{"hashgrid", to_json(bundle.grid.config())},
                               {"field", to_json(bundle.net.arch())},
                               {"render", to_json(bundle.render)},
                               {"train", to_json(bundle.train)}};
  const std::string confText = conf.dump();

  Writer out;
  for (char c : kMagic) out.put(c);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint32_t>(4 + (radii ? 1 : 0) + (training ? 1 : 0));
  appendSection(out, "CONF", std::vector<std::uint8_t>(confText.begin(), confText.end()));
  appendSection(out, "GRID", encodeDoubles(bundle.grid.params().tables));
  appendSection(out, "FNET", encodeDoubles(bundle.net.params()));
  appendSection(out, "GAUS", encodeGaussians(bundle.set));
  if (radii != nullptr) appendSection(out, "RADI", encodeDoubles(*radii));
  if (training != nullptr) appendSection(out, "TRST", encodeTraining(*training));
  return std::move(out.buffer());
}

SceneCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "header");
  const auto magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw VersionError(version);
  const auto count = r.get<std::uint32_t>();

  std::map<std::string, std::span<const std::uint8_t>> sections;
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto tagBytes = r.take(4);
    const std::string tag(tagBytes.begin(), tagBytes.end());
    const auto length = r.get<std::uint64_t>();
    if (length > r.remaining()) throw TruncationError("checkpoint truncated in section " + tag);
    const auto payload = r.take(length);
    const auto stored = r.get<std::uint32_t>();
    if (stored != crc(payload)) throw ChecksumError(tag);
    if (!sections.emplace(tag, payload).second) {
      throw FormatError("duplicate checkpoint section " + tag);
    }
  }
  r.expectEnd();

  for (const char* required : {"CONF", "GRID", "FNET", "GAUS"}) {
    if (!sections.count(required)) {
      throw FormatError(std::string("checkpoint is missing section ") + required);
    }
  }
  for (const auto& [tag, payload] : sections) {
    if (tag != "CONF" && tag != "GRID" && tag != "FNET" && tag != "GAUS" && tag != "RADI" &&
        tag != "TRST") {
      throw FormatError("unknown checkpoint section " + tag);
    }
  }

  RunConfig conf;
  try {
    const auto& c = sections.at("CONF");
    apply_json(nlohmann::json::parse(c.begin(), c.end()), conf);
  } catch (const std::exception& e) {
    throw FormatError(std::string("section CONF: ") + e.what());
  }

  SceneCheckpoint out;
  try {
    HashGridParams params;
    params.tables = decodeDoubles(sections.at("GRID"), "GRID");
    out.bundle.grid = HashGrid(conf.hashgrid, std::move(params));
    out.bundle.net = FieldNetwork(conf.field, decodeDoubles(sections.at("FNET"), "FNET"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint parameters inconsistent with config: ") + e.what());
  }
  out.bundle.set = decodeGaussians(sections.at("GAUS"));
  out.bundle.render = conf.render;
  out.bundle.train = conf.train;

  if (sections.count("RADI")) {
    out.radii = decodeDoubles(sections.at("RADI"), "RADI");
    if (out.radii->size() != out.bundle.set.size()) {
      throw FormatError("section RADI: length differs from Gaussian count");
    }
  }
  if (sections.count("TRST")) out.training = decodeTraining(sections.at("TRST"));
  return out;
}

void save_checkpoint(const SceneBundle& bundle, const TrainingState* training,
                     const std::string& path, const std::vector<double>* radii) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(bundle, training, radii);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointIOError("cannot open '" + tmp + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointIOError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointIOError("cannot move checkpoint into '" + path + "': " + ec.message());
}

SceneCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointIOError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

ProximityIndex build_index(const SceneCheckpoint& ckpt) {
  const SplashConfig& s = ckpt.bundle.render.splash;
  if (ckpt.radii) return ProximityIndex::build_with_radii(ckpt.bundle.set, *ckpt.radii, s.q);
  return ProximityIndex::build(ckpt.bundle.set, s.q, s.radiusMode);
}

}  // namespace genie
