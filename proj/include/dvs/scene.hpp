#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dvs/camera.hpp"
#include "dvs/depth_map.hpp"
#include "dvs/image.hpp"

namespace dvs {

// Textured parallelogram: points center + a*half_u + b*half_v with |a|,|b| <= 1.
// half_u and half_v must be orthogonal. Foreground quads translate rigidly by `velocity`
// world units per frame.
struct TexturedQuad {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d half_v = Eigen::Vector3d::UnitY();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  std::uint64_t texture_seed = 0;
  double texture_cell = 0.25;  // world units per noise lattice cell

  Eigen::Vector3d center_at(int t) const { return center + static_cast<double>(t) * velocity; }
};

struct SceneSpec {
  std::vector<TexturedQuad> background;
  std::vector<TexturedQuad> foreground;
  std::vector<CameraView> camera_path;
  int width = 0;
  int height = 0;
  int frame_count = 0;
  std::uint64_t rng_seed = 0;

  // Throws std::invalid_argument on inconsistent sizes, counts or quad axes.
  void validate() const;
};

struct SceneInstant {
  Image gt_image;
  DepthMap gt_depth;  // metric, complete
  Mask gt_mask;
  CameraView cam;
};

struct SurfaceHit {
  double depth = 0.0;  // camera-frame z
  bool foreground = false;
  int quad = -1;        // index into background or foreground
  double s = 0.0;       // texture coordinates in world units
  double t = 0.0;
};

// Nearest surface along the ray through x at time t. Throws std::runtime_error when the camera
// sits on a quad (inside geometry) or a foreground hit lies behind the background.
std::optional<SurfaceHit> cast_ray(const SceneSpec& spec, const CameraView& cam,
                                   const PixelCoord& x, int t);

Rgb shade(const SceneSpec& spec, const SurfaceHit& hit);

// Ground truth at camera_path[t].
SceneInstant render_gt(const SceneSpec& spec, int t);
// Ground truth for an arbitrary camera with the dynamic content at time t.
SceneInstant render_view(const SceneSpec& spec, const CameraView& cam, int t);

DepthMap degrade_to_dmv(const SceneInstant& gt, int hole_dilation_px, double noise_frac,
                        std::uint64_t seed);

struct DsvDistortion {
  double a = 1.0;  // inverse-depth gain, > 0
  double b = 0.0;  // inverse-depth bias
  double warp_amp = 0.0;
};

DepthMap degrade_to_dsv(const SceneInstant& gt, const DsvDistortion& distortion,
                        std::uint64_t seed);

// Invalidates every pixel within Euclidean distance `radius` of a mask pixel.
Mask dilate_mask(const Mask& mask, int radius);

// Band-limited value noise in [0,1] with quintic interpolation.
double value_noise(double s, double t, std::uint64_t seed);

// 128x128, 5 frames, camera sliding 0.05/frame along x, slanted background at z in [2,3],
// one billboard near z = 1 translating 0.02/frame.
SceneSpec default_acceptance_scene(std::uint64_t seed = 7);

nlohmann::json scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);

}  // namespace dvs
