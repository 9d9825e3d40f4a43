#include "genie/dataset.hpp"

#include <nlohmann/json.hpp>
#include <png.h>
#include <Eigen/SVD>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace genie {

namespace fs = std::filesystem;
using nlohmann::json;

Rgba8Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DatasetError("cannot read PNG '" + path + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  Rgba8Image out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgba.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgba.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DatasetError("cannot decode PNG '" + path + "': " + msg);
  }
  return out;
}

namespace {

png_image describe(const Rgba8Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgba.size() != static_cast<std::size_t>(image.width) * image.height * 4) {
    throw std::invalid_argument("png: image buffer does not match its dimensions");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGBA;
  return img;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Rgba8Image& image) {
  png_image img = describe(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.rgba.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.rgba.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::string& path, const Rgba8Image& image) {
  const std::vector<std::uint8_t> bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DatasetError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DatasetError("write failed for '" + path + "'");
}

Rgba8Image to_rgba8(const Image& image) {
  Rgba8Image out;
  out.width = image.width;
  out.height = image.height;
  out.rgba.resize(image.rgba.size());
  for (std::size_t i = 0; i < image.rgba.size(); ++i) {
    const double v = std::clamp(image.rgba[i], 0.0, 1.0);
    out.rgba[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

double focal_from_fov(double fovX, int width) { return width / (2.0 * std::tan(fovX / 2.0)); }

namespace {

Mat4 parsePose(const json& m, const std::string& frame) {
  if (!m.is_array() || (m.size() != 4 && m.size() != 3)) {
    throw DatasetError(frame + ": transform_matrix must have 3 or 4 rows");
  }
  Mat4 pose = Mat4::Identity();
  for (std::size_t r = 0; r < m.size(); ++r) {
    if (!m[r].is_array() || m[r].size() != 4) {
      throw DatasetError(frame + ": transform_matrix row " + std::to_string(r) +
                         " must have 4 entries");
    }
    for (std::size_t c = 0; c < 4; ++c) {
      if (!m[r][c].is_number()) throw DatasetError(frame + ": transform_matrix entry not a number");
      pose(static_cast<int>(r), static_cast<int>(c)) = m[r][c].get<double>();
    }
  }
  const Mat3 rot = pose.block<3, 3>(0, 0);
  if (!pose.allFinite() || !(rot.transpose() * rot).isApprox(Mat3::Identity(), 1e-4)) {
    throw DatasetError(frame + ": transform_matrix rotation is not orthonormal");
  }
  // Re-orthonormalize so the strict camera check downstream passes on files
  // written with limited precision.
  Eigen::JacobiSVD<Mat3> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
  pose.block<3, 3>(0, 0) = svd.matrixU() * svd.matrixV().transpose();
  return pose;
}

}  // namespace

LoadedDataset load_dataset(const std::string& manifestPath) {
  fs::path mpath(manifestPath);
  if (fs::is_directory(mpath)) mpath /= "transforms.json";
  std::ifstream in(mpath);
  if (!in) throw DatasetError("cannot open dataset manifest '" + mpath.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DatasetError("malformed manifest '" + mpath.string() + "': " + e.what());
  }
  const fs::path root = mpath.parent_path();

  LoadedDataset out;
  DatasetManifest& m = out.manifest;
  try {
    m.cameraAngleX = j.at("camera_angle_x").get<double>();
    if (j.contains("w")) m.width = j["w"].get<int>();
    if (j.contains("h")) m.height = j["h"].get<int>();
    if (j.contains("near")) m.near = j["near"].get<double>();
    if (j.contains("far")) m.far = j["far"].get<double>();
    if (j.contains("background")) {
      const auto& b = j["background"];
      m.background = Vec3(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>());
    }
    if (j.contains("init_points")) {
      m.initPoints = (root / j["init_points"].get<std::string>()).string();
    }
  } catch (const json::exception& e) {
    throw DatasetError("manifest '" + mpath.string() + "': " + e.what());
  }
  if (!(m.cameraAngleX > 0.0 && m.cameraAngleX < M_PI)) {
    throw DatasetError("manifest '" + mpath.string() + "': camera_angle_x out of (0, pi)");
  }
  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
    throw DatasetError("manifest '" + mpath.string() + "' has no frames");
  }

  out.data.background = m.background;
  const auto& frames = j["frames"];
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& fr = frames[f];
    std::string name = "frame " + std::to_string(f);
    if (!fr.contains("file_path") || !fr["file_path"].is_string()) {
      throw DatasetError(name + ": missing file_path");
    }
    const std::string filePath = fr["file_path"].get<std::string>();
    name += " (" + filePath + ")";
    if (!fr.contains("transform_matrix")) throw DatasetError(name + ": missing transform_matrix");
    DatasetFrame frame;
    frame.pose = parsePose(fr["transform_matrix"], name);
    fs::path img = root / filePath;
    if (!img.has_extension()) img += ".png";
    frame.imagePath = img.string();
    if (!fs::exists(img)) throw DatasetError(name + ": missing image '" + img.string() + "'");

    Rgba8Image png;
    try {
      png = read_png(frame.imagePath);
    } catch (const DatasetError& e) {
      throw DatasetError(name + ": " + e.what());
    }
    if (m.width == 0) m.width = png.width;
    if (m.height == 0) m.height = png.height;
    if (png.width != m.width || png.height != m.height) {
      throw DatasetError(name + ": image is " + std::to_string(png.width) + "x" +
                         std::to_string(png.height) + ", expected " + std::to_string(m.width) +
                         "x" + std::to_string(m.height));
    }
    std::vector<double> rgb(static_cast<std::size_t>(png.width) * png.height * 3);
    for (std::size_t p = 0; p < rgb.size() / 3; ++p) {
      const double a = png.rgba[p * 4 + 3] / 255.0;
      for (int c = 0; c < 3; ++c) {
        rgb[p * 3 + c] = a * (png.rgba[p * 4 + c] / 255.0) + (1.0 - a) * m.background[c];
      }
    }
    m.frames.push_back(frame);
    out.data.images.push_back(std::move(rgb));
  }

  m.focal = focal_from_fov(m.cameraAngleX, m.width);
  for (const DatasetFrame& frame : m.frames) {
    Camera cam;
    cam.pose = frame.pose;
    cam.focal = m.focal;
    cam.width = m.width;
    cam.height = m.height;
    cam.near = m.near;
    cam.far = m.far;
    out.data.cameras.push_back(cam);
  }
  return out;
}

void write_dataset(const std::string& dir, const Dataset& data, double cameraAngleX,
                   const std::string& initPoints) {
  fs::create_directories(dir);
  json frames = json::array();
  for (std::size_t c = 0; c < data.cameras.size(); ++c) {
    const Camera& cam = data.cameras[c];
    std::ostringstream name;
    name << "r_" << std::setw(3) << std::setfill('0') << c;
    Rgba8Image img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgba.resize(static_cast<std::size_t>(cam.width) * cam.height * 4);
    for (std::size_t p = 0; p < data.pixelCount(c); ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(data.images[c][p * 3 + ch], 0.0, 1.0);
        img.rgba[p * 4 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
      img.rgba[p * 4 + 3] = 255;
    }
    write_png((fs::path(dir) / (name.str() + ".png")).string(), img);
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
      m.push_back({cam.pose(r, 0), cam.pose(r, 1), cam.pose(r, 2), cam.pose(r, 3)});
    }
    frames.push_back({{"file_path", "./" + name.str()}, {"transform_matrix", m}});
  }
  json j = {{"camera_angle_x", cameraAngleX}, {"frames", frames}};
  if (!data.cameras.empty()) {
    j["w"] = data.cameras[0].width;
    j["h"] = data.cameras[0].height;
    j["near"] = data.cameras[0].near;
    j["far"] = data.cameras[0].far;
  }
  j["background"] = {data.background[0], data.background[1], data.background[2]};
  if (!initPoints.empty()) j["init_points"] = initPoints;
  std::ofstream out(fs::path(dir) / "transforms.json");
  if (!out) throw DatasetError("cannot write manifest in '" + dir + "'");
  out << j.dump(2) << '\n';
}

std::vector<InitPoint> read_init_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open init points '" + path + "'");
  std::vector<InitPoint> out;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof() || (v.size() != 3 && v.size() != 6)) {
      throw DatasetError(path + ":" + std::to_string(lineNo) + ": expected 3 or 6 numbers");
    }
    InitPoint p;
    p.mean = Vec3(v[0], v[1], v[2]);
    if (v.size() == 6) p.logScale = Vec3(v[3], v[4], v[5]);
    out.push_back(p);
  }
  return out;
}

void write_init_points(const std::string& path, const std::vector<InitPoint>& points) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write init points '" + path + "'");
  out << std::setprecision(17);
  for (const InitPoint& p : points) {
    out << p.mean[0] << ' ' << p.mean[1] << ' ' << p.mean[2];
    if (p.logScale) out << ' ' << (*p.logScale)[0] << ' ' << (*p.logScale)[1] << ' ' << (*p.logScale)[2];
    out << '\n';
  }
}

}  // namespace genie
