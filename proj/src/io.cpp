#include "dvs/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <Eigen/Dense>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace dvs::io {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "float I/O assumes a little-endian host");

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  return in;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("truncated file: " + path.string());
  return v;
}

std::string next_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
  }
  if (!in) return tok;
  tok.push_back(c);
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
  return tok;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Eigen::Matrix3d mat3(const nlohmann::json& j, const char* name) {
  if (!j.is_array() || j.size() != 9)
    throw std::invalid_argument(std::string("camera JSON: '") + name + "' must hold 9 numbers");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j[r * 3 + c].get<double>();
  return m;
}

}  // namespace

void write_pfm(const fs::path& path, const Grid<double>& values) {
  auto out = open_out(path);
  out << "Pf\n" << values.width() << ' ' << values.height() << "\n-1.0\n";
  for (int y = values.height() - 1; y >= 0; --y)
    for (int x = 0; x < values.width(); ++x) put(out, static_cast<float>(values(x, y)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Grid<double> read_pfm(const fs::path& path) {
  auto in = open_in(path);
  const std::string magic = next_token(in);
  if (magic != "Pf") throw std::runtime_error("not a single-channel PFM: " + path.string());
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const double scale = std::stod(next_token(in));
  if (w <= 0 || h <= 0) throw std::runtime_error("PFM: bad dimensions in " + path.string());
  const bool big_endian = scale > 0.0;
  Grid<double> g(w, h, 0.0);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      auto bits = get<std::uint32_t>(in, path);
      if (big_endian) bits = __builtin_bswap32(bits);
      g(x, y) = std::bit_cast<float>(bits);
    }
  return g;
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  Grid<double> v = depth.values;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!depth.valid[i]) v[i] = 0.0;
  write_pfm(path, v);
}

DepthMap read_depth(const fs::path& path, DepthConvention conv, const fs::path& valid_png) {
  DepthMap d;
  d.values = read_pfm(path);
  d.convention = conv;
  if (!valid_png.empty()) {
    d.valid = read_mask_png(valid_png);
    if (!d.valid.same_shape(d.values))
      throw std::runtime_error("depth validity mask size mismatch: " + valid_png.string());
  } else {
    d.valid = BoolGrid(d.values.width(), d.values.height(), 0);
    for (std::size_t i = 0; i < d.values.size(); ++i) d.valid[i] = std::isfinite(d.values[i]);
  }
  for (std::size_t i = 0; i < d.values.size(); ++i)
    if (!d.valid[i]) d.values[i] = 0.0;
  d.check_invariants();
  return d;
}

constexpr float kUnknownFlow = 1e10f;

void write_flo(const fs::path& path, const FlowField& flow) {
  auto out = open_out(path);
  out.write("PIEH", 4);
  put(out, static_cast<std::int32_t>(flow.width()));
  put(out, static_cast<std::int32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      const bool ok = flow.valid(x, y) != 0;
      put(out, ok ? static_cast<float>(flow.du(x, y)) : kUnknownFlow);
      put(out, ok ? static_cast<float>(flow.dv(x, y)) : kUnknownFlow);
    }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FlowField read_flo(const fs::path& path, int src_view, int dst_view) {
  auto in = open_in(path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PIEH", 4) != 0)
    throw std::runtime_error("bad .flo magic: " + path.string());
  const auto w = get<std::int32_t>(in, path);
  const auto h = get<std::int32_t>(in, path);
  if (w <= 0 || h <= 0) throw std::runtime_error(".flo: bad dimensions in " + path.string());
  FlowField f(w, h, src_view, dst_view);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.du(x, y) = get<float>(in, path);
      f.dv(x, y) = get<float>(in, path);
      // Middlebury marks unknown flow with magnitudes above 1e9.
      f.valid(x, y) = std::abs(f.du(x, y)) < 1e9 && std::abs(f.dv(x, y)) < 1e9;
      if (!f.valid(x, y)) f.du(x, y) = f.dv(x, y) = 0.0;
    }
  return f;
}

void write_png(const fs::path& path, const Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.width()) * img.height() * 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const Rgb& c = img.rgb(x, y);
      const std::size_t i = (static_cast<std::size_t>(y) * img.width() + x) * 3;
      buf[i + 0] = quantize(c.x());
      buf[i + 1] = quantize(c.y());
      buf[i + 2] = quantize(c.z());
    }
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("PNG write failed (" + std::string(image.message) + "): " + path.string());
}

Image read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("PNG read failed: " + path.string());
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw std::runtime_error("PNG decode failed: " + path.string());
  Image img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * img.width() + x) * 3;
      img.set(x, y, Rgb(buf[i] / 255.0, buf[i + 1] / 255.0, buf[i + 2] / 255.0));
    }
  return img;
}

void write_mask_png(const fs::path& path, const BoolGrid& mask) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(mask.width());
  image.height = static_cast<png_uint_32>(mask.height());
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) buf[i] = mask[i] ? 255 : 0;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("PNG write failed: " + path.string());
}

BoolGrid read_mask_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("PNG read failed: " + path.string());
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw std::runtime_error("PNG decode failed: " + path.string());
  BoolGrid g(static_cast<int>(image.width), static_cast<int>(image.height), 0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = buf[i] >= 128 ? 1 : 0;
  return g;
}

nlohmann::json camera_to_json(const CameraView& cam) {
  nlohmann::json j;
  j["view_id"] = cam.view_id();
  j["time_index"] = cam.time_index();
  auto flat = [](const Eigen::Matrix3d& m) {
    nlohmann::json a = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
    return a;
  };
  j["K"] = flat(cam.intrinsics());
  j["R"] = flat(cam.rotation());
  j["C"] = {cam.center().x(), cam.center().y(), cam.center().z()};
  j["width"] = cam.width();
  j["height"] = cam.height();
  return j;
}

CameraView camera_from_json(const nlohmann::json& j) {
  const Eigen::Matrix3d K = mat3(j.at("K"), "K");
  Eigen::Matrix3d R = mat3(j.at("R"), "R");
  const auto& c = j.at("C");
  if (!c.is_array() || c.size() != 3) throw std::invalid_argument("camera JSON: 'C' must hold 3 numbers");
  const Eigen::Vector3d C(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());

  const double err = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > kLoaderOrthonormalTol || std::abs(R.determinant() - 1.0) > kLoaderOrthonormalTol)
    throw std::invalid_argument("camera JSON: R is not orthonormal within 1e-6");
  if (err > CameraView::kOrthonormalTol || std::abs(R.determinant() - 1.0) > CameraView::kOrthonormalTol) {
    // Snap slightly-off rotations onto SO(3); exact ones pass through bit-identical.
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    R = svd.matrixU() * svd.matrixV().transpose();
  }
  return CameraView(j.at("view_id").get<int>(), j.at("time_index").get<int>(), K, R, C,
                    j.at("width").get<int>(), j.at("height").get<int>());
}

void write_cameras(const fs::path& path, const std::vector<CameraView>& cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cams) arr.push_back(camera_to_json(c));
  write_json(path, arr);
}

std::vector<CameraView> read_cameras(const fs::path& path) {
  const auto j = read_json(path);
  if (!j.is_array()) throw std::invalid_argument("camera set JSON must be an array: " + path.string());
  std::vector<CameraView> cams;
  for (const auto& c : j) cams.push_back(camera_from_json(c));
  return cams;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

std::string read_file_bytes(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_file(const fs::path& path) {
  const std::string bytes = read_file_bytes(path);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256 failed for " + path.string());
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

}  // namespace dvs::io
