#pragma once

#include "dvs/camera.hpp"
#include "dvs/grid.hpp"
#include "dvs/image.hpp"

namespace dvs {

struct SceneSpec;

// Dense displacement from view src_view to view dst_view; x maps to x + (du, dv).
struct FlowField {
  Grid<double> du;
  Grid<double> dv;
  BoolGrid valid;
  int src_view = 0;
  int dst_view = 0;

  FlowField() = default;
  FlowField(int width, int height, int src, int dst)
      : du(width, height, 0.0), dv(width, height, 0.0), valid(width, height, 1),
        src_view(src), dst_view(dst) {}

  int width() const { return du.width(); }
  int height() const { return du.height(); }
};

constexpr double kDefaultFbTau = 1.0;

// Invalidates fwd wherever |fwd(x) + bwd(x + fwd(x))| > tau_px (bwd sampled bilinearly) or the
// target leaves the image. Vectors themselves are never modified.
FlowField fb_consistency_filter(const FlowField& fwd, const FlowField& bwd,
                                double tau_px = kDefaultFbTau);

// Analytic flow of the visible surface from (cam_src, time t_src) to (cam_dst, time t_dst).
// Pixels that leave the destination image or are occluded there are invalid.
FlowField gt_flow_from_geometry(const SceneSpec& scene, int t_src, const CameraView& cam_src,
                                int t_dst, const CameraView& cam_dst);

struct BlockMatchOptions {
  int window = 7;         // SAD window side
  int search_radius = 4;  // per pyramid level
};

// Coarse-to-fine SAD block matching from img_a to img_b with sub-pixel refinement.
// Constant images produce zero flow.
FlowField estimate_flow(const Image& img_a, const Image& img_b, int levels,
                        const BlockMatchOptions& opts = {});

}  // namespace dvs
