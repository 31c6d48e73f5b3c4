#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvs/camera.hpp"
#include "dvs/depth_map.hpp"
#include "dvs/flow.hpp"
#include "dvs/image.hpp"

namespace dvs {

// Per-pixel log-scale correction: fused depth = exp(log_scale) * metricized DSV.
struct ScaleField {
  Grid<double> log_scale;

  ScaleField() = default;
  ScaleField(int width, int height, double s = 0.0) : log_scale(width, height, s) {}
};

struct FusionWeights {
  double lambda_g = 1.0;  // not a tunable in the objective; zeroed only by ablations
  double lambda_l = 1.0;
  double lambda_s = 0.1;
  double lambda_e = 0.05;
  double lambda_f = 10.0;
  std::vector<int> neighbor_offsets{1, 2, 4, 8, 16};
  int neighbor_views = 2;

  // Offsets must be non-empty, strictly increasing and >= 1; lambdas non-negative.
  void validate() const;
};

struct ViewFrame {
  Image image;
  DepthMap dsv;  // NormalizedInverseDepth, complete
  DepthMap dmv;  // MetricDepth, holes allowed
  Mask fg_mask;
  CameraView cam;
};

struct ViewSet {
  std::vector<ViewFrame> frames;
  std::vector<FlowField> flows;  // any set of pairwise flows, looked up by (src_view, dst_view)

  const FlowField* find_flow(int src_view, int dst_view) const;
  void validate() const;
};

// Affine fit in inverse-depth space: 1/dmv ~ a * dsv + b over static DMV-valid pixels.
struct InverseDepthFit {
  double gain = 1.0;
  double bias = 0.0;
  std::size_t samples = 0;
};

constexpr std::size_t kMinMetricizeOverlap = 100;

InverseDepthFit fit_inverse_depth(const DepthMap& dsv, const DepthMap& dmv, const Mask& mask);
// Throws std::runtime_error("insufficient static overlap") below kMinMetricizeOverlap samples.
DepthMap metricize_dsv(const DepthMap& dsv, const DepthMap& dmv, const Mask& mask);

// (d(x+dx) - d(x)) / (|d(x+dx)| + |d(x)|); nullopt when either pixel is invalid or outside,
// or when the denominator underflows 1e-12.
std::optional<double> relative_gradient(const DepthMap& d, int x, int y, int dx, int dy);

// Loss inputs for one frame after metricization.
struct FusionTarget {
  Grid<double> base_depth;  // metricized DSV, complete
  DepthMap dmv;
  Mask fg_mask;
  CameraView cam;
};

// Filtered flow between two frames (indices into FusionProblem::frames).
struct FlowLink {
  int src_frame = 0;
  int dst_frame = 0;
  FlowField flow;
};

struct FusionProblem {
  std::vector<FusionTarget> frames;
  std::vector<FlowLink> links;
};

// Metricizes every frame and pairs each frame with its +-neighbor_views frames through
// forward-backward filtered flows. Missing flows raise an error naming the pair.
FusionProblem prepare_problem(const ViewSet& views, const FusionWeights& weights,
                              double fb_tau_px = kDefaultFbTau);

struct TermValue {
  double value = 0.0;
  std::size_t terms = 0;    // size of the averaging domain
  std::size_t skipped = 0;  // pairs dropped for denominator underflow
  bool empty_domain = false;
};

// Individual loss terms. When `grad` is non-null, weight * d(term)/d(log_scale) is accumulated
// into it.
TermValue loss_global(const ScaleField& sf, const FusionTarget& frame, Grid<double>* grad = nullptr,
                      double weight = 1.0);
TermValue loss_local(const ScaleField& sf, const FusionTarget& frame, std::span<const int> offsets,
                     Grid<double>* grad = nullptr, double weight = 1.0);
TermValue loss_scene_flow(const ScaleField& src_sf, const FusionTarget& src,
                          const ScaleField& dst_sf, const FusionTarget& dst, const FlowField& flow,
                          Grid<double>* grad_src = nullptr, Grid<double>* grad_dst = nullptr,
                          double weight = 1.0);
TermValue loss_smooth(const ScaleField& sf, const FusionTarget& frame, double lambda_f,
                      Grid<double>* grad = nullptr, double weight = 1.0);

// Unweighted per-term sums over frames plus the weighted total.
struct LossBreakdown {
  double total = 0.0;
  double global = 0.0;
  double local = 0.0;
  double scene_flow = 0.0;
  double smooth = 0.0;
};

struct LossAndGradient {
  LossBreakdown loss;
  std::vector<Grid<double>> gradient;  // one grid per frame; empty when not requested
};

// L = sum over frames of lambda_g L_g + lambda_l L_l + lambda_s L_s + lambda_e L_e.
// A frame's L_s is the mean over its flow links. Work is split over frames and links and reduced
// in a fixed order, so results are bit-identical for any worker count.
LossAndGradient total_loss_and_gradient(const std::vector<ScaleField>& scales,
                                        const FusionProblem& problem, const FusionWeights& weights,
                                        bool with_gradient = true, int workers = 1);

struct FusionOptions {
  int levels = 3;                 // pyramid factors 2^(levels-1) ... 1
  int iterations_per_level = 200;
  double initial_step = 1.0;      // in units of pixel count times log-scale per unit gradient
  double step_growth = 2.0;
  int max_backtracks = 40;
  double armijo = 1e-4;
  double fb_tau_px = kDefaultFbTau;
  double min_scale = 1e-3;
  double max_scale = 1e3;
  int workers = 1;
};

struct TrajectoryPoint {
  int level = 0;
  int iteration = 0;
  LossBreakdown loss;
};

struct FusionResult {
  std::vector<DepthMap> depths;     // complete, metric
  std::vector<ScaleField> scales;
  std::vector<DepthMap> initial;    // metricized DSV
  std::vector<TrajectoryPoint> trajectory;
};

class FusionDivergence : public std::runtime_error {
 public:
  FusionDivergence(const std::string& what, std::vector<TrajectoryPoint> trajectory)
      : std::runtime_error(what), trajectory_(std::move(trajectory)) {}
  const std::vector<TrajectoryPoint>& trajectory() const { return trajectory_; }

 private:
  std::vector<TrajectoryPoint> trajectory_;
};

// Coarse-to-fine projected gradient descent with backtracking on the scale fields, starting
// from zero log-scale on top of the metricized DSV.
FusionResult fuse(const ViewSet& views, const FusionWeights& weights, const FusionOptions& opts);
FusionResult fuse_problem(const FusionProblem& problem, const FusionWeights& weights,
                          const FusionOptions& opts);

DepthMap apply_scale(const ScaleField& sf, const Grid<double>& base_depth);

}  // namespace dvs
