#include "dvs/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "dvs/io.hpp"

namespace dvs {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double lattice_value(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) ^
                                                       splitmix64(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

constexpr double kHitEps = 1e-12;

// Ray/quad intersection; returns camera depth or nullopt.
std::optional<SurfaceHit> intersect(const TexturedQuad& q, const Eigen::Vector3d& center,
                                    const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const Eigen::Vector3d n = q.half_u.cross(q.half_v);
  const double denom = n.dot(dir);
  if (std::abs(denom) < kHitEps) return std::nullopt;
  const double lambda = n.dot(center - origin) / denom;
  if (!(lambda > 0.0)) return std::nullopt;
  const Eigen::Vector3d rel = origin + lambda * dir - center;
  const double a = rel.dot(q.half_u) / q.half_u.squaredNorm();
  const double b = rel.dot(q.half_v) / q.half_v.squaredNorm();
  if (std::abs(a) > 1.0 || std::abs(b) > 1.0) return std::nullopt;
  SurfaceHit hit;
  hit.depth = lambda;
  hit.s = a * q.half_u.norm();
  hit.t = b * q.half_v.norm();
  return hit;
}

void check_camera_outside(const TexturedQuad& q, const Eigen::Vector3d& center,
                          const Eigen::Vector3d& cam_center) {
  const Eigen::Vector3d n = q.half_u.cross(q.half_v).normalized();
  const Eigen::Vector3d rel = cam_center - center;
  if (std::abs(n.dot(rel)) > 1e-9) return;
  const double a = rel.dot(q.half_u) / q.half_u.squaredNorm();
  const double b = rel.dot(q.half_v) / q.half_v.squaredNorm();
  if (std::abs(a) <= 1.0 && std::abs(b) <= 1.0)
    throw std::runtime_error("render_gt: camera center lies inside scene geometry");
}

Eigen::Vector3d vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json vec3_json(const Eigen::Vector3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

nlohmann::json quad_json(const TexturedQuad& q) {
  return {{"center", vec3_json(q.center)},     {"half_u", vec3_json(q.half_u)},
          {"half_v", vec3_json(q.half_v)},     {"velocity", vec3_json(q.velocity)},
          {"texture_seed", q.texture_seed},    {"texture_cell", q.texture_cell}};
}

TexturedQuad quad_from_json(const nlohmann::json& j) {
  TexturedQuad q;
  q.center = vec3(j.at("center"));
  q.half_u = vec3(j.at("half_u"));
  q.half_v = vec3(j.at("half_v"));
  if (j.contains("velocity")) q.velocity = vec3(j.at("velocity"));
  q.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  q.texture_cell = j.value("texture_cell", 0.25);
  return q;
}

// Standard normal via Box-Muller on the stdlib engine so sequences are platform independent.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

 private:
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

double value_noise(double s, double t, std::uint64_t seed) {
  const double fs = std::floor(s);
  const double ft = std::floor(t);
  const auto ix = static_cast<std::int64_t>(fs);
  const auto iy = static_cast<std::int64_t>(ft);
  const double u = fade(s - fs);
  const double v = fade(t - ft);
  const double v00 = lattice_value(ix, iy, seed);
  const double v10 = lattice_value(ix + 1, iy, seed);
  const double v01 = lattice_value(ix, iy + 1, seed);
  const double v11 = lattice_value(ix + 1, iy + 1, seed);
  return (1 - v) * ((1 - u) * v00 + u * v10) + v * ((1 - u) * v01 + u * v11);
}

void SceneSpec::validate() const {
  if (frame_count <= 0) throw std::invalid_argument("SceneSpec: frame_count must be positive");
  if (static_cast<int>(camera_path.size()) != frame_count)
    throw std::invalid_argument("SceneSpec: camera_path length must equal frame_count");
  if (width <= 0 || height <= 0) throw std::invalid_argument("SceneSpec: bad image size");
  for (const auto& cam : camera_path)
    if (cam.width() != width || cam.height() != height)
      throw std::invalid_argument("SceneSpec: camera image size mismatch");
  for (int t = 1; t < frame_count; ++t)
    if (camera_path[t].time_index() <= camera_path[t - 1].time_index())
      throw std::invalid_argument("SceneSpec: time indices must increase");
  auto check_quad = [](const TexturedQuad& q) {
    if (q.half_u.norm() <= 0.0 || q.half_v.norm() <= 0.0)
      throw std::invalid_argument("SceneSpec: degenerate quad");
    if (std::abs(q.half_u.normalized().dot(q.half_v.normalized())) > 1e-9)
      throw std::invalid_argument("SceneSpec: quad axes must be orthogonal");
    if (!(q.texture_cell > 0.0)) throw std::invalid_argument("SceneSpec: texture_cell must be > 0");
  };
  for (const auto& q : background) check_quad(q);
  for (const auto& q : foreground) check_quad(q);
}

std::optional<SurfaceHit> cast_ray(const SceneSpec& spec, const CameraView& cam,
                                   const PixelCoord& x, int t) {
  const Eigen::Vector3d origin = cam.center();
  const Eigen::Vector3d dir = cam.ray(x);
  std::optional<SurfaceHit> best_bg;
  std::optional<SurfaceHit> best_fg;
  for (std::size_t i = 0; i < spec.background.size(); ++i) {
    const auto& q = spec.background[i];
    check_camera_outside(q, q.center, origin);
    if (auto h = intersect(q, q.center, origin, dir); h && (!best_bg || h->depth < best_bg->depth)) {
      h->quad = static_cast<int>(i);
      best_bg = h;
    }
  }
  for (std::size_t i = 0; i < spec.foreground.size(); ++i) {
    const auto& q = spec.foreground[i];
    const Eigen::Vector3d c = q.center_at(t);
    check_camera_outside(q, c, origin);
    if (auto h = intersect(q, c, origin, dir); h && (!best_fg || h->depth < best_fg->depth)) {
      h->quad = static_cast<int>(i);
      h->foreground = true;
      best_fg = h;
    }
  }
  if (best_fg && best_bg && best_bg->depth < best_fg->depth)
    throw std::runtime_error("render_gt: foreground lies behind the background");
  return best_fg ? best_fg : best_bg;
}

Rgb shade(const SceneSpec& spec, const SurfaceHit& hit) {
  const TexturedQuad& q = hit.foreground ? spec.foreground.at(hit.quad) : spec.background.at(hit.quad);
  const double s = hit.s / q.texture_cell;
  const double t = hit.t / q.texture_cell;
  Rgb c;
  for (int ch = 0; ch < 3; ++ch) {
    const std::uint64_t seed = splitmix64(q.texture_seed ^ spec.rng_seed) + 0x1000193ull * (ch + 1);
    const double coarse = value_noise(s, t, seed);
    const double fine = value_noise(2.0 * s + 0.37, 2.0 * t + 0.61, seed ^ 0xA5A5A5A5ull);
    c[ch] = 0.15 + 0.65 * coarse + 0.12 * fine;
  }
  return c;
}

SceneInstant render_view(const SceneSpec& spec, const CameraView& cam, int t) {
  const int w = cam.width();
  const int h = cam.height();
  SceneInstant out{Image(w, h), DepthMap(w, h, DepthConvention::MetricDepth), Mask(w, h, 0), cam};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto hit = cast_ray(spec, cam, PixelCoord{double(x), double(y)}, t);
      if (!hit)
        throw std::runtime_error("render_gt: ray at (" + std::to_string(x) + "," +
                                 std::to_string(y) + ") escapes the scene");
      out.gt_depth.values(x, y) = hit->depth;
      out.gt_depth.valid(x, y) = 1;
      out.gt_mask(x, y) = hit->foreground ? 1 : 0;
      out.gt_image.set(x, y, shade(spec, *hit));
    }
  }
  return out;
}

SceneInstant render_gt(const SceneSpec& spec, int t) {
  if (t < 0 || t >= spec.frame_count) throw std::out_of_range("render_gt: frame index out of range");
  const CameraView& cam = spec.camera_path.at(t);
  return render_view(spec, cam, cam.time_index());
}

Mask dilate_mask(const Mask& mask, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate_mask: negative radius");
  const int w = mask.width();
  const int h = mask.height();
  Mask out(w, h, 0);
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dx, dy);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask(x, y)) continue;
      for (auto [dx, dy] : disk)
        if (out.inside(x + dx, y + dy)) out(x + dx, y + dy) = 1;
    }
  return out;
}

DepthMap degrade_to_dmv(const SceneInstant& gt, int hole_dilation_px, double noise_frac,
                        std::uint64_t seed) {
  if (hole_dilation_px < 0) throw std::invalid_argument("degrade_to_dmv: negative dilation");
  if (noise_frac < 0) throw std::invalid_argument("degrade_to_dmv: negative noise fraction");
  DepthMap dmv = gt.gt_depth;
  const Mask holes = dilate_mask(gt.gt_mask, hole_dilation_px);
  for (std::size_t i = 0; i < holes.size(); ++i)
    if (holes[i]) {
      dmv.valid[i] = 0;
      dmv.values[i] = 0.0;
    }
  if (noise_frac == 0.0) return dmv;

  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < dmv.values.size(); ++i) {
    if (!dmv.valid[i]) continue;
    sum += dmv.values[i];
    sum_sq += dmv.values[i] * dmv.values[i];
    ++n;
  }
  if (n == 0) return dmv;
  const double mean = sum / n;
  const double sigma = noise_frac * std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
  NormalStream normal(seed);
  for (std::size_t i = 0; i < dmv.values.size(); ++i) {
    if (!dmv.valid[i]) continue;
    const double d = dmv.values[i] + sigma * normal.next();
    if (d > 0.0) {
      dmv.values[i] = d;
    } else {
      dmv.values[i] = 0.0;
      dmv.valid[i] = 0;
    }
  }
  return dmv;
}

DepthMap degrade_to_dsv(const SceneInstant& gt, const DsvDistortion& distortion,
                        std::uint64_t seed) {
  if (!(distortion.a > 0.0)) throw std::invalid_argument("degrade_to_dsv: gain must be positive");
  const int w = gt.gt_depth.width();
  const int h = gt.gt_depth.height();
  const double cell = std::max(w, h) / 2.0;
  Grid<double> inv(w, h, 0.0);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d = distortion.a / gt.gt_depth.values(x, y) + distortion.b;
      if (distortion.warp_amp != 0.0) {
        const double eta = 2.0 * value_noise(x / cell, y / cell, seed) - 1.0;
        d *= std::exp(distortion.warp_amp * eta);
      }
      inv(x, y) = d;
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  const double range = hi - lo;
  for (auto& v : inv.data()) v = range > 0.0 ? (v - lo) / range : 0.0;
  return DepthMap::complete_from(std::move(inv), DepthConvention::NormalizedInverseDepth);
}

SceneSpec default_acceptance_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.width = 128;
  spec.height = 128;
  spec.frame_count = 5;
  spec.rng_seed = seed;
  const double focal = 120.0;
  const double c = (spec.width - 1) / 2.0;
  for (int t = 0; t < spec.frame_count; ++t)
    spec.camera_path.push_back(CameraView::from_focal(t, t, focal, c, c, Eigen::Matrix3d::Identity(),
                                                      Eigen::Vector3d(-0.1 + 0.05 * t, 0.0, 0.0),
                                                      spec.width, spec.height));

  // Plane z = 2.5 + 0.35 x, spanning depths 2..3 across the view.
  TexturedQuad wall;
  wall.center = {0.0, 0.0, 2.5};
  wall.half_u = Eigen::Vector3d(1.0, 0.0, 0.35).normalized() * 4.0;
  wall.half_v = {0.0, 4.0, 0.0};
  wall.texture_seed = 11;
  wall.texture_cell = 0.4;
  spec.background.push_back(wall);

  TexturedQuad board;
  board.center = {-0.04, 0.05, 1.0};
  board.half_u = {0.22, 0.0, 0.05};
  board.half_v = {0.0, 0.28, 0.0};
  board.velocity = {0.02, 0.0, 0.0};
  board.texture_seed = 23;
  board.texture_cell = 0.12;
  spec.foreground.push_back(board);
  return spec;
}

nlohmann::json scene_to_json(const SceneSpec& spec) {
  nlohmann::json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["frame_count"] = spec.frame_count;
  j["rng_seed"] = spec.rng_seed;
  j["background"] = nlohmann::json::array();
  for (const auto& q : spec.background) j["background"].push_back(quad_json(q));
  j["foreground"] = nlohmann::json::array();
  for (const auto& q : spec.foreground) j["foreground"].push_back(quad_json(q));
  j["camera_path"] = nlohmann::json::array();
  for (const auto& cam : spec.camera_path) j["camera_path"].push_back(io::camera_to_json(cam));
  return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec spec;
  spec.width = j.at("width").get<int>();
  spec.height = j.at("height").get<int>();
  spec.frame_count = j.at("frame_count").get<int>();
  spec.rng_seed = j.value("rng_seed", std::uint64_t{0});
  for (const auto& q : j.value("background", nlohmann::json::array()))
    spec.background.push_back(quad_from_json(q));
  for (const auto& q : j.value("foreground", nlohmann::json::array()))
    spec.foreground.push_back(quad_from_json(q));
  for (const auto& c : j.at("camera_path")) spec.camera_path.push_back(io::camera_from_json(c));
  spec.validate();
  return spec;
}

}  // namespace dvs
