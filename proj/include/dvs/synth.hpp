#pragma once

#include <vector>

#include "dvs/camera.hpp"
#include "dvs/depth_map.hpp"
#include "dvs/image.hpp"

namespace dvs {

struct ViewSet;

constexpr double kDefaultDepthBand = 0.005;

// Forward-splatted view. Colors and origins are normalized by the accumulated weight.
// valid implies weight > 0 and a finite z.
struct SplatBuffer {
  Grid<Rgb> rgb;
  Grid<double> weight;
  Grid<double> z;         // nearest depth deposited at the pixel
  Grid<double> origin_u;  // weighted mean source location of the blended deposits
  Grid<double> origin_v;
  BoolGrid valid;

  SplatBuffer() = default;
  SplatBuffer(int width, int height);

  int width() const { return rgb.width(); }
  int height() const { return rgb.height(); }
  Image image() const;
};

// One bilinear contribution of a source pixel to a target pixel.
struct SplatDeposit {
  int x = 0, y = 0;
  Rgb color = Rgb::Zero();
  double z = 0.0;
  double weight = 0.0;
  PixelCoord origin;
};

// Collects deposits and resolves them with a two-pass z-buffer: contributions within
// depth_band (relative) of the nearest z blend by weight, farther ones are discarded.
// The winner set does not depend on deposit order.
class SplatAccumulator {
 public:
  SplatAccumulator(int width, int height) : width_(width), height_(height) {}
  void add(const SplatDeposit& d);
  // Deposits the four bilinear taps of `target` (zero-weight taps are skipped).
  void add_bilinear(const PixelCoord& target, const Rgb& color, double z, const PixelCoord& origin);
  // Appends other's deposits after this one's.
  void append(const SplatAccumulator& other);
  SplatBuffer resolve(double depth_band = kDefaultDepthBand) const;
  std::size_t size() const { return deposits_.size(); }

 private:
  int width_, height_;
  std::vector<SplatDeposit> deposits_;
};

// Splats every pixel selected by `select` (metric depth required there) from cam_src into
// cam_dst. Warps run on `workers` threads; deposits are merged in source row order.
SplatBuffer splat_forward(const Image& src_img, const DepthMap& src_depth, const Mask& select,
                          const CameraView& cam_src, const CameraView& cam_dst,
                          double depth_band = kDefaultDepthBand, int workers = 1);

// Back-warps each valid target pixel with its z to cam_src. The pixel is dropped when it misses
// the recorded origin by more than tau_px, or when re-warping with the source depth found there
// misses the target by more than tau_px.
SplatBuffer bidir_check(const SplatBuffer& buffer, const DepthMap& src_depth,
                        const CameraView& cam_src, const CameraView& cam_dst, double tau_px = 1.0);

struct BwmOptions {
  int radius = 3;
  double sigma_s = 2.0;  // pixels
  double sigma_r = 0.1;  // color units
};

// Bilateral weighted median over valid neighbours. Validity is unchanged.
DepthMap bwm_filter(const DepthMap& depth, const Image& guide, const BwmOptions& opts = {});

struct SourceSplat {
  SplatBuffer buffer;
  CameraView cam;
};

// Per pixel, the valid candidate whose source center is nearest to cam_virtual's. Ties go to the
// lower view_id; an invalid nearest view falls through to the next one.
Image composite_background(const std::vector<SourceSplat>& sources, const CameraView& cam_virtual);

// Pull-push completion. Valid pixels are returned unchanged. Throws when nothing is valid.
Image pull_push_fill(const Image& img);

struct BlendResult {
  Image image;        // complete
  BoolGrid filled;    // pixels produced by completion rather than a splat
};

// Foreground wins where valid. Outside the virtual foreground mask the completed background is
// used; inside it an uncovered pixel keeps the raw background or is completed afterwards.
// Foreground pixels bordering non-foreground are blended with alpha = min(1, fg_alpha).
BlendResult blend_and_inpaint(const Image& bg, const Image& fg, const Mask& fg_mask_virtual,
                              const Grid<double>* fg_alpha = nullptr);

struct SynthOptions {
  double depth_band = kDefaultDepthBand;
  double bidir_tau_px = 1.0;
  BwmOptions bwm;
  bool refine_depth = true;
  int workers = 1;
};

struct SynthSource {
  Image image;
  DepthMap depth;  // metric, complete
  Mask fg_mask;
  CameraView cam;
};

struct SynthResult {
  Image image;          // complete
  BoolGrid splatted;    // valid before completion
  BoolGrid filled;      // completed pixels
  Mask fg_virtual;      // dilated foreground footprint M^v
  Image background;     // J^v_* before completion
};

// Static splats of every source's background, bidirectional check, shortest-baseline
// compositing, then the foreground of sources[t_select] splatted and blended on top.
SynthResult synthesize(const std::vector<SynthSource>& sources, const CameraView& cam_virtual,
                       int t_select, const SynthOptions& opts = {});
SynthResult synthesize(const ViewSet& views, const std::vector<DepthMap>& fused_depths,
                       const CameraView& cam_virtual, int t_select, const SynthOptions& opts = {});

}  // namespace dvs
