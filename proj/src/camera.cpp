#include "dvs/camera.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace dvs {

CameraView::CameraView(int view_id, int time_index, const Eigen::Matrix3d& K,
                       const Eigen::Matrix3d& R, const Eigen::Vector3d& C, int width, int height)
    : view_id_(view_id),
      time_index_(time_index),
      K_(K),
      R_(R),
      C_(C),
      width_(width),
      height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("CameraView: non-positive image size");
  if (!K.allFinite() || !R.allFinite() || !C.allFinite())
    throw std::invalid_argument("CameraView: non-finite parameters");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0)
    throw std::invalid_argument("CameraView: K must be upper triangular");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0))
    throw std::invalid_argument("CameraView: focal lengths must be positive");
  if (K(2, 2) != 1.0) throw std::invalid_argument("CameraView: K(2,2) must be 1");
  const double orth_err = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth_err > kOrthonormalTol || std::abs(R.determinant() - 1.0) > kOrthonormalTol)
    throw std::invalid_argument("CameraView: R is not a rotation");
  K_inv_ = K_.inverse();
}

CameraView CameraView::from_focal(int view_id, int time_index, double focal, double cx, double cy,
                                  const Eigen::Matrix3d& R, const Eigen::Vector3d& C, int width,
                                  int height) {
  Eigen::Matrix3d K;
  K << focal, 0, cx, 0, focal, cy, 0, 0, 1;
  return CameraView(view_id, time_index, K, R, C, width, height);
}

Eigen::Matrix<double, 3, 4> CameraView::projection() const {
  Eigen::Matrix<double, 3, 4> P;
  P.leftCols<3>() = K_ * R_;
  P.col(3) = -K_ * R_ * C_;
  return P;
}

Eigen::Vector3d CameraView::ray(const PixelCoord& x) const {
  return R_.transpose() * (K_inv_ * Eigen::Vector3d(x.u, x.v, 1.0));
}

CameraView CameraView::with_ids(int view_id, int time_index) const {
  return CameraView(view_id, time_index, K_, R_, C_, width_, height_);
}

WorldPoint backproject(const PixelCoord& x, double depth, const CameraView& cam) {
  if (!(depth > 0.0)) throw std::domain_error("backproject: depth must be positive");
  return WorldPoint{depth * cam.ray(x) + cam.center()};
}

Projection project(const WorldPoint& p, const CameraView& cam) {
  const Eigen::Vector3d h = cam.intrinsics() * (cam.rotation() * (p.xyz - cam.center()));
  // Depth is the camera-frame z; K(2,:) = [0 0 1] so h.z() is exactly that.
  return Projection{PixelCoord{h.x() / h.z(), h.y() / h.z()}, h.z()};
}

WarpResult warp_point(const PixelCoord& x, double depth, const CameraView& src,
                      const CameraView& dst) {
  if (!(depth > 0.0) || !std::isfinite(depth)) return {x, 0.0, WarpStatus::InvalidSource};
  const Projection pr = project(backproject(x, depth, src), dst);
  if (!(pr.depth > 0.0)) return {pr.pixel, pr.depth, WarpStatus::BehindDestination};
  return {pr.pixel, pr.depth, WarpStatus::Ok};
}

namespace {

bool sample_depth(const DepthMap& d, const PixelCoord& x, double& out) {
  BilinearTaps t;
  if (!bilinear_taps(x.u, x.v, d.width(), d.height(), t)) return false;
  const int xs[4] = {t.x0, t.x1, t.x0, t.x1};
  const int ys[4] = {t.y0, t.y0, t.y1, t.y1};
  const double ws[4] = {t.w00, t.w10, t.w01, t.w11};
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (ws[k] == 0.0) continue;
    if (!d.is_valid(xs[k], ys[k])) return false;
    acc += ws[k] * d.values(xs[k], ys[k]);
  }
  out = acc;
  return true;
}

WarpResult warp_sampled(const PixelCoord& x, const DepthMap& depth, const CameraView& src,
                        const CameraView& dst) {
  double d = 0.0;
  if (!sample_depth(depth, x, d)) return {x, 0.0, WarpStatus::InvalidSource};
  return warp_point(x, d, src, dst);
}

void check_binding(const DepthMap& depth, const CameraView& cam) {
  if (depth.width() != cam.width() || depth.height() != cam.height())
    throw std::invalid_argument("depth/camera size mismatch");
  if (depth.convention != DepthConvention::MetricDepth)
    throw std::invalid_argument("warp: source depth must be metric");
}

}  // namespace

StaticDepth::StaticDepth(const DepthMap& depth, const CameraView& cam) : depth_(&depth), cam_(&cam) {
  check_binding(depth, cam);
}

DynamicDepth::DynamicDepth(const DepthMap& depth, const CameraView& cam, int time_index)
    : depth_(&depth), cam_(&cam), time_index_(time_index) {
  check_binding(depth, cam);
  if (time_index != cam.time_index())
    throw std::invalid_argument("DynamicDepth: depth time index does not match its camera");
}

WarpResult warp_static(const PixelCoord& x, const StaticDepth& src, const CameraView& dst) {
  return warp_sampled(x, src.depth(), src.camera(), dst);
}

WarpResult warp_dynamic(const PixelCoord& x, const DynamicDepth& src, const CameraView& dst) {
  return warp_sampled(x, src.depth(), src.camera(), dst);
}

}  // namespace dvs
