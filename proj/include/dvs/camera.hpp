#pragma once

#include <Eigen/Core>

#include "dvs/depth_map.hpp"

namespace dvs {

// Continuous image coordinate; integer values land on pixel centers.
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

struct WorldPoint {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
};

// Pinhole camera: x_cam = R (p - C), pixel = K x_cam / z.
// The 3x4 projection matrix is always derived from (K, R, C).
class CameraView {
 public:
  static constexpr double kOrthonormalTol = 1e-9;

  CameraView(int view_id, int time_index, const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
             const Eigen::Vector3d& C, int width, int height);

  // Simple intrinsics helper: K = [f 0 cx; 0 f cy; 0 0 1].
  static CameraView from_focal(int view_id, int time_index, double focal, double cx, double cy,
                               const Eigen::Matrix3d& R, const Eigen::Vector3d& C, int width,
                               int height);

  int view_id() const { return view_id_; }
  int time_index() const { return time_index_; }
  const Eigen::Matrix3d& intrinsics() const { return K_; }
  const Eigen::Matrix3d& rotation() const { return R_; }
  const Eigen::Vector3d& center() const { return C_; }
  int width() const { return width_; }
  int height() const { return height_; }

  Eigen::Matrix<double, 3, 4> projection() const;

  // World-frame ray R^T K^-1 [u v 1]^T. Its camera-frame z component is exactly 1, so
  // center() + depth * ray(x) is the point at camera depth `depth`.
  Eigen::Vector3d ray(const PixelCoord& x) const;

  bool contains(const PixelCoord& x) const {
    return x.u >= 0.0 && x.v >= 0.0 && x.u <= width_ - 1 && x.v <= height_ - 1;
  }

  CameraView with_ids(int view_id, int time_index) const;

 private:
  int view_id_;
  int time_index_;
  Eigen::Matrix3d K_;
  Eigen::Matrix3d K_inv_;
  Eigen::Matrix3d R_;
  Eigen::Vector3d C_;
  int width_;
  int height_;
};

// Pixel plus signed camera-frame depth. depth <= 0 means the point is behind the camera.
struct Projection {
  PixelCoord pixel;
  double depth = 0.0;
};

// depth * R^T K^-1 x~ + C. Throws std::domain_error for non-positive depth.
WorldPoint backproject(const PixelCoord& x, double depth, const CameraView& cam);

Projection project(const WorldPoint& p, const CameraView& cam);

enum class WarpStatus { Ok, InvalidSource, BehindDestination };

struct WarpResult {
  PixelCoord pixel;
  double depth = 0.0;
  WarpStatus status = WarpStatus::Ok;

  bool ok() const { return status == WarpStatus::Ok; }
};

// Point-wise warp with an explicit metric source depth.
WarpResult warp_point(const PixelCoord& x, double depth, const CameraView& src,
                      const CameraView& dst);

// Depth of the static scene seen from `cam` (the time-independent composite).
class StaticDepth {
 public:
  StaticDepth(const DepthMap& depth, const CameraView& cam);
  const DepthMap& depth() const { return *depth_; }
  const CameraView& camera() const { return *cam_; }

 private:
  const DepthMap* depth_;
  const CameraView* cam_;
};

// Time-varying depth D^{r_t} of frame `time_index`. The binding is checked at construction
// and the type is not interchangeable with StaticDepth.
class DynamicDepth {
 public:
  DynamicDepth(const DepthMap& depth, const CameraView& cam, int time_index);
  const DepthMap& depth() const { return *depth_; }
  const CameraView& camera() const { return *cam_; }
  int time_index() const { return time_index_; }

 private:
  const DepthMap* depth_;
  const CameraView* cam_;
  int time_index_;
};

// Samples the source depth at x (bilinear over the taps that carry weight, all must be valid)
// and forwards to warp_point.
WarpResult warp_static(const PixelCoord& x, const StaticDepth& src, const CameraView& dst);
WarpResult warp_dynamic(const PixelCoord& x, const DynamicDepth& src, const CameraView& dst);

}  // namespace dvs
