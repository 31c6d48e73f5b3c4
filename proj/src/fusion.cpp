#include "dvs/fusion.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dvs/parallel.hpp"

namespace dvs {

namespace {

constexpr double kUnderflow = 1e-12;

double sign(double v) { return (v > 0.0) - (v < 0.0); }

// Subgradient of |r| that takes 0 when r is rounding noise relative to `scale`.
constexpr double kKinkTol = 1e-12;
double kink_sign(double r, double scale) { return std::abs(r) <= kKinkTol * scale ? 0.0 : sign(r); }

void require_same_shape(const Grid<double>& s, const Grid<double>& base, const char* where) {
  if (!s.same_shape(base)) throw std::invalid_argument(std::string(where) + ": scale/depth shape mismatch");
}

// Scale-invariant relative gradient and its partials with respect to both depths.
struct RelGrad {
  double g = 0.0;
  double d_from = 0.0;  // d g / d d(x)
  double d_to = 0.0;    // d g / d d(x+dx)
};

bool rel_grad(double from, double to, RelGrad& out) {
  const double denom = std::abs(to) + std::abs(from);
  if (denom <= kUnderflow) return false;
  const double diff = to - from;
  out.g = diff / denom;
  const double inv2 = 1.0 / (denom * denom);
  out.d_to = (denom - diff * sign(to)) * inv2;
  out.d_from = (-denom - diff * sign(from)) * inv2;
  return true;
}

}  // namespace

void FusionWeights::validate() const {
  if (neighbor_offsets.empty()) throw std::invalid_argument("FusionWeights: neighbor_offsets is empty");
  for (std::size_t i = 0; i < neighbor_offsets.size(); ++i) {
    if (neighbor_offsets[i] < 1) throw std::invalid_argument("FusionWeights: offsets must be >= 1");
    if (i > 0 && neighbor_offsets[i] <= neighbor_offsets[i - 1])
      throw std::invalid_argument("FusionWeights: offsets must be strictly increasing");
  }
  for (double l : {lambda_g, lambda_l, lambda_s, lambda_e, lambda_f})
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("FusionWeights: lambdas must be >= 0");
  if (neighbor_views < 1) throw std::invalid_argument("FusionWeights: neighbor_views must be >= 1");
}

const FlowField* ViewSet::find_flow(int src_view, int dst_view) const {
  for (const auto& f : flows)
    if (f.src_view == src_view && f.dst_view == dst_view) return &f;
  return nullptr;
}

void ViewSet::validate() const {
  if (frames.empty()) throw std::invalid_argument("ViewSet: no frames");
  const int w = frames.front().cam.width();
  const int h = frames.front().cam.height();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string tag = "ViewSet frame " + std::to_string(i) + ": ";
    if (i > 0 && f.cam.time_index() <= frames[i - 1].cam.time_index())
      throw std::invalid_argument(tag + "time indices must strictly increase");
    if (f.cam.width() != w || f.cam.height() != h) throw std::invalid_argument(tag + "camera size mismatch");
    if (!f.dsv.values.same_shape(w, h) || !f.dmv.values.same_shape(w, h) || !f.fg_mask.same_shape(w, h))
      throw std::invalid_argument(tag + "input size mismatch");
    if (f.dsv.convention != DepthConvention::NormalizedInverseDepth)
      throw std::invalid_argument(tag + "DSV must be normalized inverse depth");
    if (f.dmv.convention != DepthConvention::MetricDepth)
      throw std::invalid_argument(tag + "DMV must be metric");
    f.dmv.check_invariants();
    f.dsv.check_invariants();
  }
}

InverseDepthFit fit_inverse_depth(const DepthMap& dsv, const DepthMap& dmv, const Mask& mask) {
  if (!dsv.values.same_shape(dmv.values) || !mask.same_shape(dsv.values))
    throw std::invalid_argument("metricize_dsv: input size mismatch");
  // Normal equations for inv_dmv = gain * dsv + bias, accumulated in a fixed order.
  double sxx = 0, sx = 0, sxy = 0, sy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < dsv.values.size(); ++i) {
    if (mask[i] || !dmv.valid[i] || !dsv.valid[i]) continue;
    const double x = dsv.values[i];
    const double y = 1.0 / dmv.values[i];
    sxx += x * x;
    sx += x;
    sxy += x * y;
    sy += y;
    ++n;
  }
  InverseDepthFit fit;
  fit.samples = n;
  if (n < kMinMetricizeOverlap) return fit;
  const double det = n * sxx - sx * sx;
  if (std::abs(det) <= 1e-12 * std::max(1.0, n * sxx)) {
    fit.gain = 0.0;
    fit.bias = sy / n;
  } else {
    fit.gain = (n * sxy - sx * sy) / det;
    fit.bias = (sy - fit.gain * sx) / n;
  }
  return fit;
}

DepthMap metricize_dsv(const DepthMap& dsv, const DepthMap& dmv, const Mask& mask) {
  if (dsv.convention != DepthConvention::NormalizedInverseDepth)
    throw std::invalid_argument("metricize_dsv: DSV must be normalized inverse depth");
  if (dmv.convention != DepthConvention::MetricDepth)
    throw std::invalid_argument("metricize_dsv: DMV must be metric");
  const InverseDepthFit fit = fit_inverse_depth(dsv, dmv, mask);
  if (fit.samples < kMinMetricizeOverlap)
    throw std::runtime_error("metricize_dsv: insufficient static overlap (" +
                             std::to_string(fit.samples) + " pixels)");
  // Floor the inverse depth at a tenth of the farthest fitted static depth's inverse.
  double min_inv = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dmv.values.size(); ++i)
    if (!mask[i] && dmv.valid[i]) min_inv = std::min(min_inv, 1.0 / dmv.values[i]);
  const double floor_inv = 0.1 * min_inv;

  DepthMap out(dsv.width(), dsv.height(), DepthConvention::MetricDepth);
  for (std::size_t i = 0; i < dsv.values.size(); ++i) {
    const double inv = std::max(fit.gain * dsv.values[i] + fit.bias, floor_inv);
    out.values[i] = 1.0 / inv;
    out.valid[i] = 1;
  }
  return out;
}

std::optional<double> relative_gradient(const DepthMap& d, int x, int y, int dx, int dy) {
  if (!d.is_valid(x, y) || !d.is_valid(x + dx, y + dy)) return std::nullopt;
  RelGrad rg;
  if (!rel_grad(d.values(x, y), d.values(x + dx, y + dy), rg)) return std::nullopt;
  return rg.g;
}

DepthMap apply_scale(const ScaleField& sf, const Grid<double>& base_depth) {
  require_same_shape(sf.log_scale, base_depth, "apply_scale");
  DepthMap out(base_depth.width(), base_depth.height(), DepthConvention::MetricDepth);
  for (std::size_t i = 0; i < base_depth.size(); ++i) {
    out.values[i] = std::exp(sf.log_scale[i]) * base_depth[i];
    out.valid[i] = 1;
  }
  return out;
}

FusionProblem prepare_problem(const ViewSet& views, const FusionWeights& weights, double fb_tau_px) {
  views.validate();
  weights.validate();
  FusionProblem problem;
  const int n = static_cast<int>(views.frames.size());
  for (const auto& f : views.frames) {
    FusionTarget t{metricize_dsv(f.dsv, f.dmv, f.fg_mask).values, f.dmv, f.fg_mask, f.cam};
    problem.frames.push_back(std::move(t));
  }
  for (int r = 0; r < n; ++r) {
    for (int nb : {r - weights.neighbor_views, r + weights.neighbor_views}) {
      if (nb < 0 || nb >= n) continue;
      const int src_id = views.frames[r].cam.view_id();
      const int dst_id = views.frames[nb].cam.view_id();
      const FlowField* fwd = views.find_flow(src_id, dst_id);
      const FlowField* bwd = views.find_flow(dst_id, src_id);
      if (!fwd || !bwd)
        throw std::runtime_error("prepare_problem: missing flow pair " + std::to_string(src_id) +
                                 "<->" + std::to_string(dst_id));
      problem.links.push_back(FlowLink{r, nb, fb_consistency_filter(*fwd, *bwd, fb_tau_px)});
    }
  }
  return problem;
}

TermValue loss_global(const ScaleField& sf, const FusionTarget& frame, Grid<double>* grad,
                      double weight) {
  require_same_shape(sf.log_scale, frame.base_depth, "loss_global");
  TermValue tv;
  for (std::size_t i = 0; i < frame.base_depth.size(); ++i)
    tv.terms += !frame.fg_mask[i] && frame.dmv.valid[i];
  if (tv.terms == 0) {
    tv.empty_domain = true;
    return tv;
  }
  const double inv_n = 1.0 / static_cast<double>(tv.terms);
  double sum = 0.0;
  for (std::size_t i = 0; i < frame.base_depth.size(); ++i) {
    if (frame.fg_mask[i] || !frame.dmv.valid[i]) continue;
    const double est = std::exp(sf.log_scale[i]) * frame.base_depth[i];
    const double r = est - frame.dmv.values[i];
    sum += std::abs(r);
    if (grad) (*grad)[i] += weight * inv_n * kink_sign(r, est + frame.dmv.values[i]) * est;
  }
  tv.value = sum * inv_n;
  return tv;
}

TermValue loss_local(const ScaleField& sf, const FusionTarget& frame, std::span<const int> offsets,
                     Grid<double>* grad, double weight) {
  require_same_shape(sf.log_scale, frame.base_depth, "loss_local");
  if (offsets.empty()) throw std::invalid_argument("loss_local: no neighbor offsets");
  const int w = frame.base_depth.width();
  const int h = frame.base_depth.height();
  const auto& base = frame.base_depth;
  Grid<double> est(w, h);
  for (std::size_t i = 0; i < base.size(); ++i) est[i] = std::exp(sf.log_scale[i]) * base[i];

  // Pass 1 sizes the averaging domain; pass 2 accumulates.
  TermValue tv;
  auto visit = [&](auto&& fn) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!frame.fg_mask(x, y)) continue;
        for (int o : offsets)
          for (int axis = 0; axis < 2; ++axis) {
            const int nx = axis == 0 ? x + o : x;
            const int ny = axis == 0 ? y : y + o;
            if (nx >= w || ny >= h) continue;
            RelGrad ge, gb;
            if (!rel_grad(est(x, y), est(nx, ny), ge) || !rel_grad(base(x, y), base(nx, ny), gb)) {
              ++tv.skipped;
              continue;
            }
            fn(x, y, nx, ny, ge, gb);
          }
      }
  };
  visit([&](int, int, int, int, const RelGrad&, const RelGrad&) { ++tv.terms; });
  if (tv.terms == 0) {
    tv.empty_domain = true;
    return tv;
  }
  const std::size_t skipped = tv.skipped;
  const double inv_n = 1.0 / static_cast<double>(tv.terms);
  double sum = 0.0;
  visit([&](int x, int y, int nx, int ny, const RelGrad& ge, const RelGrad& gb) {
    const double r = ge.g - gb.g;
    sum += std::abs(r);
    if (grad) {
      const double c = weight * inv_n * kink_sign(r, 1.0);
      (*grad)(x, y) += c * ge.d_from * est(x, y);
      (*grad)(nx, ny) += c * ge.d_to * est(nx, ny);
    }
  });
  tv.skipped = skipped;
  tv.value = sum * inv_n;
  return tv;
}

TermValue loss_scene_flow(const ScaleField& src_sf, const FusionTarget& src,
                          const ScaleField& dst_sf, const FusionTarget& dst, const FlowField& flow,
                          Grid<double>* grad_src, Grid<double>* grad_dst, double weight) {
  require_same_shape(src_sf.log_scale, src.base_depth, "loss_scene_flow");
  require_same_shape(dst_sf.log_scale, dst.base_depth, "loss_scene_flow");
  const int w = src.base_depth.width();
  const int h = src.base_depth.height();
  if (!flow.valid.same_shape(w, h)) throw std::invalid_argument("loss_scene_flow: flow size mismatch");
  const int dw = dst.base_depth.width();
  const int dh = dst.base_depth.height();

  struct Sample {
    int x, y;
    BilinearTaps taps;
  };
  std::vector<Sample> samples;
  samples.reserve(count_true(flow.valid));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!flow.valid(x, y)) continue;
      Sample s{x, y, {}};
      if (!bilinear_taps(x + flow.du(x, y), y + flow.dv(x, y), dw, dh, s.taps)) continue;
      samples.push_back(s);
    }
  TermValue tv;
  tv.terms = samples.size();
  if (samples.empty()) {
    tv.empty_domain = true;
    return tv;
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  double sum = 0.0;
  for (const Sample& s : samples) {
    const PixelCoord xs{double(s.x), double(s.y)};
    const PixelCoord yd{s.x + flow.du(s.x, s.y), s.y + flow.dv(s.x, s.y)};
    const double d_src = std::exp(src_sf.log_scale(s.x, s.y)) * src.base_depth(s.x, s.y);
    // Inverse depth is interpolated: it is affine in pixel coordinates on a plane.
    const auto& t = s.taps;
    const int tx[4] = {t.x0, t.x1, t.x0, t.x1};
    const int ty[4] = {t.y0, t.y0, t.y1, t.y1};
    const double tw[4] = {t.w00, t.w10, t.w01, t.w11};
    double tap_depth[4];
    double inv_dst = 0.0;
    for (int k = 0; k < 4; ++k) {
      tap_depth[k] = std::exp(dst_sf.log_scale(tx[k], ty[k])) * dst.base_depth(tx[k], ty[k]);
      if (tw[k] != 0.0) inv_dst += tw[k] / tap_depth[k];
    }
    const double d_dst = 1.0 / inv_dst;
    const Eigen::Vector3d ray_src = src.cam.ray(xs);
    const Eigen::Vector3d ray_dst = dst.cam.ray(yd);
    const Eigen::Vector3d gap =
        (src.cam.center() + d_src * ray_src) - (dst.cam.center() + d_dst * ray_dst);
    const double norm = gap.norm();
    sum += norm;
    const double scale = d_src * ray_src.norm() + d_dst * ray_dst.norm();
    if (norm > kKinkTol * scale && (grad_src || grad_dst)) {
      const Eigen::Vector3d u = gap / norm;
      const double c = weight * inv_n;
      if (grad_src) (*grad_src)(s.x, s.y) += c * u.dot(ray_src) * d_src;
      if (grad_dst) {
        // d d_dst / d s_k = d_dst^2 * w_k / D_k
        const double dn = -c * u.dot(ray_dst) * d_dst * d_dst;
        for (int k = 0; k < 4; ++k)
          if (tw[k] != 0.0) (*grad_dst)(tx[k], ty[k]) += dn * tw[k] / tap_depth[k];
      }
    }
  }
  tv.value = sum * inv_n;
  return tv;
}

TermValue loss_smooth(const ScaleField& sf, const FusionTarget& frame, double lambda_f,
                      Grid<double>* grad, double weight) {
  require_same_shape(sf.log_scale, frame.base_depth, "loss_smooth");
  const int w = frame.base_depth.width();
  const int h = frame.base_depth.height();
  Grid<double> est(w, h);
  for (std::size_t i = 0; i < est.size(); ++i) est[i] = std::exp(sf.log_scale[i]) * frame.base_depth[i];

  const std::size_t n_fg = count_true(frame.fg_mask);
  const std::size_t n_bg = est.size() - n_fg;
  const double w_bg = n_bg ? 1.0 / static_cast<double>(n_bg) : 0.0;
  const double w_fg = n_fg ? lambda_f / static_cast<double>(n_fg) : 0.0;

  Grid<double> d_est;
  if (grad) d_est = Grid<double>(w, h, 0.0);
  double bg_sum = 0.0, fg_sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // An axis contributes only when both of its taps are inside the image and on the same
      // side of the mask boundary as the centre.
      const bool fg = frame.fg_mask(x, y) != 0;
      auto tap = [&](int nx, int ny) {
        return frame.fg_mask.inside(nx, ny) && (frame.fg_mask(nx, ny) != 0) == fg;
      };
      const bool hx = tap(x - 1, y) && tap(x + 1, y);
      const bool hy = tap(x, y - 1) && tap(x, y + 1);
      double lap = 0.0;
      if (hx) lap += est(x - 1, y) + est(x + 1, y) - 2.0 * est(x, y);
      if (hy) lap += est(x, y - 1) + est(x, y + 1) - 2.0 * est(x, y);
      (fg ? fg_sum : bg_sum) += lap * lap;
      if (grad && (hx || hy)) {
        const double c = 2.0 * (fg ? w_fg : w_bg) * lap;
        if (hx) {
          d_est(x - 1, y) += c;
          d_est(x + 1, y) += c;
          d_est(x, y) -= 2.0 * c;
        }
        if (hy) {
          d_est(x, y - 1) += c;
          d_est(x, y + 1) += c;
          d_est(x, y) -= 2.0 * c;
        }
      }
    }
  if (grad)
    for (std::size_t i = 0; i < est.size(); ++i) (*grad)[i] += weight * d_est[i] * est[i];
  TermValue tv;
  tv.terms = est.size();
  tv.value = bg_sum * w_bg + fg_sum * w_fg;
  return tv;
}

LossAndGradient total_loss_and_gradient(const std::vector<ScaleField>& scales,
                                        const FusionProblem& problem, const FusionWeights& weights,
                                        bool with_gradient, int workers) {
  const int nf = static_cast<int>(problem.frames.size());
  const int nl = static_cast<int>(problem.links.size());
  if (static_cast<int>(scales.size()) != nf)
    throw std::invalid_argument("total_loss_and_gradient: one scale field per frame required");

  std::vector<int> links_per_frame(nf, 0);
  for (const auto& l : problem.links) ++links_per_frame[l.src_frame];

  struct FrameTerms {
    double g = 0, l = 0, e = 0;
    Grid<double> grad;
  };
  struct LinkTerms {
    double s = 0;
    Grid<double> grad_src, grad_dst;
  };
  std::vector<FrameTerms> ft(nf);
  std::vector<LinkTerms> lt(nl);

  parallel_for(nf + nl, workers, [&](int task) {
    if (task < nf) {
      const auto& frame = problem.frames[task];
      FrameTerms& out = ft[task];
      Grid<double>* g = nullptr;
      if (with_gradient) {
        out.grad = Grid<double>(frame.base_depth.width(), frame.base_depth.height(), 0.0);
        g = &out.grad;
      }
      if (weights.lambda_g > 0.0 || !with_gradient)
        out.g = loss_global(scales[task], frame, g, weights.lambda_g).value;
      if (weights.lambda_l > 0.0 || !with_gradient)
        out.l = loss_local(scales[task], frame, weights.neighbor_offsets, g, weights.lambda_l).value;
      if (weights.lambda_e > 0.0 || !with_gradient)
        out.e = loss_smooth(scales[task], frame, weights.lambda_f, g, weights.lambda_e).value;
      return;
    }
    const FlowLink& link = problem.links[task - nf];
    LinkTerms& out = lt[task - nf];
    const double share = 1.0 / links_per_frame[link.src_frame];
    Grid<double>* gs = nullptr;
    Grid<double>* gd = nullptr;
    if (with_gradient && weights.lambda_s > 0.0) {
      const auto& f = problem.frames[link.src_frame].base_depth;
      out.grad_src = Grid<double>(f.width(), f.height(), 0.0);
      out.grad_dst = Grid<double>(f.width(), f.height(), 0.0);
      gs = &out.grad_src;
      gd = &out.grad_dst;
    }
    out.s = share * loss_scene_flow(scales[link.src_frame], problem.frames[link.src_frame],
                                    scales[link.dst_frame], problem.frames[link.dst_frame],
                                    link.flow, gs, gd, weights.lambda_s * share)
                        .value;
  });

  LossAndGradient res;
  for (int f = 0; f < nf; ++f) {
    res.loss.global += ft[f].g;
    res.loss.local += ft[f].l;
    res.loss.smooth += ft[f].e;
    for (auto [name, v] : {std::pair{"L_g", ft[f].g}, {"L_l", ft[f].l}, {"L_e", ft[f].e}})
      if (!std::isfinite(v))
        throw std::runtime_error(std::string("non-finite loss in frame ") + std::to_string(f) +
                                 " term " + name);
  }
  for (int l = 0; l < nl; ++l) {
    if (!std::isfinite(lt[l].s))
      throw std::runtime_error("non-finite loss in frame " + std::to_string(problem.links[l].src_frame) +
                               " term L_s");
    res.loss.scene_flow += lt[l].s;
  }
  res.loss.total = weights.lambda_g * res.loss.global + weights.lambda_l * res.loss.local +
                   weights.lambda_s * res.loss.scene_flow + weights.lambda_e * res.loss.smooth;

  if (with_gradient) {
    res.gradient.reserve(nf);
    for (int f = 0; f < nf; ++f) res.gradient.push_back(std::move(ft[f].grad));
    for (int l = 0; l < nl; ++l) {
      if (lt[l].grad_src.empty()) continue;
      auto& gs = res.gradient[problem.links[l].src_frame];
      auto& gd = res.gradient[problem.links[l].dst_frame];
      for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += lt[l].grad_src[i];
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += lt[l].grad_dst[i];
    }
  }
  return res;
}

namespace {

// Bilinear map from a coarse grid to full resolution (and its transpose). Full pixel x samples
// the coarse grid at (x + 0.5) / factor - 0.5, clamped to the coarse extent.
class Upsampler {
 public:
  Upsampler(int width, int height, int factor)
      : w_(width), h_(height), f_(factor), cw_((width + factor - 1) / factor),
        ch_((height + factor - 1) / factor) {
    taps_.resize(static_cast<std::size_t>(w_) * h_);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const double u = std::clamp((x + 0.5) / f_ - 0.5, 0.0, double(cw_ - 1));
        const double v = std::clamp((y + 0.5) / f_ - 0.5, 0.0, double(ch_ - 1));
        bilinear_taps(u, v, cw_, ch_, taps_[static_cast<std::size_t>(y) * w_ + x]);
      }
  }

  int coarse_width() const { return cw_; }
  int coarse_height() const { return ch_; }

  void add_up(const Grid<double>& coarse, Grid<double>& full) const {
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      const auto& t = taps_[i];
      full[i] += t.w00 * coarse(t.x0, t.y0) + t.w10 * coarse(t.x1, t.y0) +
                 t.w01 * coarse(t.x0, t.y1) + t.w11 * coarse(t.x1, t.y1);
    }
  }

  Grid<double> transpose(const Grid<double>& full) const {
    Grid<double> c(cw_, ch_, 0.0);
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      const auto& t = taps_[i];
      c(t.x0, t.y0) += t.w00 * full[i];
      c(t.x1, t.y0) += t.w10 * full[i];
      c(t.x0, t.y1) += t.w01 * full[i];
      c(t.x1, t.y1) += t.w11 * full[i];
    }
    return c;
  }

 private:
  int w_, h_, f_, cw_, ch_;
  std::vector<BilinearTaps> taps_;
};

}  // namespace

FusionResult fuse_problem(const FusionProblem& problem, const FusionWeights& weights,
                          const FusionOptions& opts) {
  weights.validate();
  if (opts.levels < 1 || opts.iterations_per_level < 0)
    throw std::invalid_argument("fuse: levels must be >= 1 and iterations >= 0");
  if (!(opts.min_scale > 0.0) || !(opts.max_scale > opts.min_scale))
    throw std::invalid_argument("fuse: bad scale clamp range");
  const int nf = static_cast<int>(problem.frames.size());
  if (nf == 0) throw std::invalid_argument("fuse: no frames");
  const int w = problem.frames.front().base_depth.width();
  const int h = problem.frames.front().base_depth.height();
  const double lo = std::log(opts.min_scale);
  const double hi = std::log(opts.max_scale);

  FusionResult result;
  std::vector<ScaleField> base(nf, ScaleField(w, h, 0.0));
  double step = opts.initial_step;

  for (int level = opts.levels - 1; level >= 0; --level) {
    const int factor = 1 << level;
    const Upsampler up(w, h, factor);
    std::vector<Grid<double>> delta(nf, Grid<double>(up.coarse_width(), up.coarse_height(), 0.0));
    // Parameters are scaled so one unit of step moves a full-resolution pixel comparably at every
    // level: the transposed gradient sums factor^2 pixels.
    const double level_scale = static_cast<double>(w) * h / (double(factor) * factor);

    auto compose = [&](const std::vector<Grid<double>>& d, std::vector<ScaleField>& out,
                       std::vector<BoolGrid>* clamped) {
      out = base;
      for (int f = 0; f < nf; ++f) {
        up.add_up(d[f], out[f].log_scale);
        if (clamped) (*clamped)[f] = BoolGrid(w, h, 0);
        for (std::size_t i = 0; i < out[f].log_scale.size(); ++i) {
          double& s = out[f].log_scale[i];
          if (s < lo || s > hi) {
            s = std::clamp(s, lo, hi);
            if (clamped) (*clamped)[f][i] = 1;
          }
        }
      }
    };

    std::vector<ScaleField> current;
    std::vector<BoolGrid> clamped(nf);
    compose(delta, current, &clamped);
    LossAndGradient eval = total_loss_and_gradient(current, problem, weights, true, opts.workers);
    const double level_start = eval.loss.total;
    result.trajectory.push_back({level, 0, eval.loss});

    for (int it = 1; it <= opts.iterations_per_level; ++it) {
      std::vector<Grid<double>> gd(nf);
      double gnorm2 = 0.0;
      for (int f = 0; f < nf; ++f) {
        Grid<double> g = eval.gradient[f];
        for (std::size_t i = 0; i < g.size(); ++i)
          if (clamped[f][i]) g[i] = 0.0;
        gd[f] = up.transpose(g);
        for (double v : gd[f].data()) gnorm2 += v * v;
      }
      if (!(gnorm2 > 0.0)) break;

      bool accepted = false;
      std::vector<Grid<double>> trial_delta;
      std::vector<ScaleField> trial;
      double trial_loss = 0.0;
      for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
        const double alpha = step * level_scale;
        trial_delta = delta;
        for (int f = 0; f < nf; ++f)
          for (std::size_t i = 0; i < gd[f].size(); ++i) trial_delta[f][i] -= alpha * gd[f][i];
        compose(trial_delta, trial, nullptr);
        trial_loss = total_loss_and_gradient(trial, problem, weights, false, opts.workers).loss.total;
        if (std::isfinite(trial_loss) && trial_loss <= eval.loss.total - opts.armijo * alpha * gnorm2) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      delta = std::move(trial_delta);
      compose(delta, current, &clamped);
      eval = total_loss_and_gradient(current, problem, weights, true, opts.workers);
      result.trajectory.push_back({level, it, eval.loss});
      step *= opts.step_growth;
    }

    if (!(eval.loss.total <= level_start))
      throw FusionDivergence("fuse: loss increased over pyramid level " + std::to_string(level),
                             result.trajectory);
    base = std::move(current);
  }

  result.scales = base;
  for (int f = 0; f < nf; ++f) {
    result.depths.push_back(apply_scale(base[f], problem.frames[f].base_depth));
    result.initial.push_back(DepthMap::complete_from(problem.frames[f].base_depth,
                                                     DepthConvention::MetricDepth));
  }
  return result;
}

FusionResult fuse(const ViewSet& views, const FusionWeights& weights, const FusionOptions& opts) {
  return fuse_problem(prepare_problem(views, weights, opts.fb_tau_px), weights, opts);
}

}  // namespace dvs
