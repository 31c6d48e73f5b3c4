#include "dvs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dvs/fusion.hpp"
#include "dvs/parallel.hpp"
#include "dvs/scene.hpp"

namespace dvs {

SplatBuffer::SplatBuffer(int width, int height)
    : rgb(width, height, Rgb::Zero()), weight(width, height, 0.0),
      z(width, height, std::numeric_limits<double>::infinity()), origin_u(width, height, 0.0),
      origin_v(width, height, 0.0), valid(width, height, 0) {}

Image SplatBuffer::image() const {
  Image img(width(), height());
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) {
      img.rgb[i] = rgb[i];
      img.valid[i] = 1;
    }
  return img;
}

void SplatAccumulator::add(const SplatDeposit& d) {
  if (d.x < 0 || d.y < 0 || d.x >= width_ || d.y >= height_) return;
  if (!(d.weight > 0.0) || !(d.z > 0.0) || !std::isfinite(d.z)) return;
  deposits_.push_back(d);
}

void SplatAccumulator::add_bilinear(const PixelCoord& target, const Rgb& color, double z,
                                    const PixelCoord& origin) {
  if (!std::isfinite(target.u) || !std::isfinite(target.v)) return;
  const double fu = std::floor(target.u), fv = std::floor(target.v);
  if (fu < -1.0 || fv < -1.0 || fu > width_ || fv > height_) return;
  const int x0 = static_cast<int>(fu), y0 = static_cast<int>(fv);
  const double ax = target.u - fu, ay = target.v - fv;
  const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const int dx[4] = {0, 1, 0, 1};
  const int dy[4] = {0, 0, 1, 1};
  for (int k = 0; k < 4; ++k)
    if (w[k] > 0.0) add({x0 + dx[k], y0 + dy[k], color, z, w[k], origin});
}

void SplatAccumulator::append(const SplatAccumulator& other) {
  if (other.width_ != width_ || other.height_ != height_)
    throw std::invalid_argument("SplatAccumulator: size mismatch on append");
  deposits_.insert(deposits_.end(), other.deposits_.begin(), other.deposits_.end());
}

SplatBuffer SplatAccumulator::resolve(double depth_band) const {
  if (!(depth_band >= 0.0)) throw std::invalid_argument("SplatAccumulator: negative depth band");
  SplatBuffer out(width_, height_);
  for (const auto& d : deposits_) out.z(d.x, d.y) = std::min(out.z(d.x, d.y), d.z);

  Grid<Rgb> color(width_, height_, Rgb::Zero());
  for (const auto& d : deposits_) {
    if (d.z > out.z(d.x, d.y) * (1.0 + depth_band)) continue;
    out.weight(d.x, d.y) += d.weight;
    color(d.x, d.y) += d.weight * d.color;
    out.origin_u(d.x, d.y) += d.weight * d.origin.u;
    out.origin_v(d.x, d.y) += d.weight * d.origin.v;
  }
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    const double w = out.weight[i];
    if (!(w > 0.0)) continue;
    out.rgb[i] = (color[i] / w).cwiseMax(0.0).cwiseMin(1.0);
    out.origin_u[i] /= w;
    out.origin_v[i] /= w;
    out.valid[i] = 1;
  }
  return out;
}

SplatBuffer splat_forward(const Image& src_img, const DepthMap& src_depth, const Mask& select,
                          const CameraView& cam_src, const CameraView& cam_dst, double depth_band,
                          int workers) {
  const int w = src_img.width(), h = src_img.height();
  if (!src_depth.values.same_shape(w, h) || !select.same_shape(w, h))
    throw std::invalid_argument("splat_forward: input size mismatch");
  if (cam_src.width() != w || cam_src.height() != h)
    throw std::invalid_argument("splat_forward: camera does not match image size");
  if (src_depth.convention != DepthConvention::MetricDepth)
    throw std::invalid_argument("splat_forward: depth must be metric");

  // Rows warp independently and are merged in row order, so the result ignores `workers`.
  std::vector<SplatAccumulator> rows(h, SplatAccumulator(cam_dst.width(), cam_dst.height()));
  parallel_for(h, workers, [&](int y) {
    for (int x = 0; x < w; ++x) {
      if (!select(x, y)) continue;
      if (!src_depth.is_valid(x, y))
        throw std::invalid_argument("splat_forward: selected pixel without depth at (" +
                                    std::to_string(x) + ", " + std::to_string(y) + ")");
      const PixelCoord px{double(x), double(y)};
      const WarpResult r = warp_point(px, src_depth.values(x, y), cam_src, cam_dst);
      if (!r.ok()) continue;
      rows[y].add_bilinear(r.pixel, src_img.rgb(x, y), r.depth, px);
    }
  });
  SplatAccumulator all(cam_dst.width(), cam_dst.height());
  for (const auto& row : rows) all.append(row);
  return all.resolve(depth_band);
}

SplatBuffer bidir_check(const SplatBuffer& buffer, const DepthMap& src_depth,
                        const CameraView& cam_src, const CameraView& cam_dst, double tau_px) {
  if (!(tau_px > 0.0)) throw std::invalid_argument("bidir_check: tau must be positive");
  SplatBuffer out = buffer;
  if (std::isinf(tau_px)) return out;
  const StaticDepth src(src_depth, cam_src);
  for (int y = 0; y < buffer.height(); ++y)
    for (int x = 0; x < buffer.width(); ++x) {
      if (!buffer.valid(x, y)) continue;
      const PixelCoord px{double(x), double(y)};
      const WarpResult back = warp_point(px, buffer.z(x, y), cam_dst, cam_src);
      bool keep = back.ok() && std::hypot(back.pixel.u - buffer.origin_u(x, y),
                                          back.pixel.v - buffer.origin_v(x, y)) <= tau_px;
      if (keep) {
        // The source surface at the back-warped point must land here again. Points whose
        // source depth cannot be sampled keep the first test's verdict.
        const WarpResult again = warp_static(back.pixel, src, cam_dst);
        if (again.ok())
          keep = std::hypot(again.pixel.u - x, again.pixel.v - y) <= tau_px;
      }
      if (!keep) {
        out.valid(x, y) = 0;
        out.rgb(x, y) = Rgb::Zero();
        out.weight(x, y) = 0.0;
        out.z(x, y) = std::numeric_limits<double>::infinity();
      }
    }
  return out;
}

DepthMap bwm_filter(const DepthMap& depth, const Image& guide, const BwmOptions& opts) {
  if (opts.radius < 1) throw std::invalid_argument("bwm_filter: radius must be >= 1");
  if (!(opts.sigma_s > 0.0) || !(opts.sigma_r > 0.0))
    throw std::invalid_argument("bwm_filter: sigmas must be positive");
  if (guide.width() != depth.width() || guide.height() != depth.height())
    throw std::invalid_argument("bwm_filter: guide size mismatch");
  const int r = opts.radius;
  const double inv_s = 1.0 / (2.0 * opts.sigma_s * opts.sigma_s);
  const double inv_r = 1.0 / (2.0 * opts.sigma_r * opts.sigma_r);

  DepthMap out = depth;
  std::vector<std::pair<double, double>> samples;  // (value, weight)
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!depth.valid(x, y)) continue;
      samples.clear();
      double total = 0.0;
      const Rgb& c0 = guide.rgb(x, y);
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (!depth.is_valid(nx, ny)) continue;
          const double wt = std::exp(-(dx * dx + dy * dy) * inv_s -
                                     (guide.rgb(nx, ny) - c0).squaredNorm() * inv_r);
          if (!(wt > 0.0)) continue;
          samples.emplace_back(depth.values(nx, ny), wt);
          total += wt;
        }
      if (!(total > 0.0)) continue;
      std::sort(samples.begin(), samples.end());
      // Lower weighted median: first value whose cumulative weight reaches half the total.
      double acc = 0.0;
      for (const auto& [v, wt] : samples) {
        acc += wt;
        if (acc >= 0.5 * total) {
          out.values(x, y) = v;
          break;
        }
      }
    }
  return out;
}

Image composite_background(const std::vector<SourceSplat>& sources, const CameraView& cam_virtual) {
  const int w = cam_virtual.width(), h = cam_virtual.height();
  std::vector<std::size_t> order(sources.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
    if (sources[i].buffer.width() != w || sources[i].buffer.height() != h)
      throw std::invalid_argument("composite_background: buffer size mismatch");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double da = (sources[a].cam.center() - cam_virtual.center()).norm();
    const double db = (sources[b].cam.center() - cam_virtual.center()).norm();
    if (da != db) return da < db;
    return sources[a].cam.view_id() < sources[b].cam.view_id();
  });
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (std::size_t i : order) {
        const SplatBuffer& b = sources[i].buffer;
        if (!b.valid(x, y)) continue;
        out.set(x, y, b.rgb(x, y));
        break;
      }
  return out;
}

namespace {

struct Level {
  Grid<Rgb> color;
  Grid<double> weight;  // in [0, 1]
};

// Linear interpolation weights along one axis. Past the outermost cell centres the edge pair is
// extrapolated, so affine content is reproduced exactly up to the border.
void axis_taps(double u, int n, int& i0, int& i1, double& w1) {
  if (n == 1) {
    i0 = i1 = 0;
    w1 = 0.0;
    return;
  }
  i0 = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
  i1 = i0 + 1;
  w1 = u - i0;
}

Rgb sample_up(const Grid<Rgb>& coarse, int x, int y) {
  int x0, x1, y0, y1;
  double ax, ay;
  axis_taps((x + 0.5) / 2.0 - 0.5, coarse.width(), x0, x1, ax);
  axis_taps((y + 0.5) / 2.0 - 0.5, coarse.height(), y0, y1, ay);
  return (1 - ax) * (1 - ay) * coarse(x0, y0) + ax * (1 - ay) * coarse(x1, y0) +
         (1 - ax) * ay * coarse(x0, y1) + ax * ay * coarse(x1, y1);
}

}  // namespace

Image pull_push_fill(const Image& img) {
  const int w = img.width(), h = img.height();
  if (w == 0 || h == 0 || count_true(img.valid) == 0)
    throw std::invalid_argument("pull_push_fill: no valid pixels to complete from");

  std::vector<Level> pyr;
  pyr.push_back({img.rgb, Grid<double>(w, h, 0.0)});
  for (std::size_t i = 0; i < img.valid.size(); ++i) {
    pyr[0].weight[i] = img.valid[i] ? 1.0 : 0.0;
    if (!img.valid[i]) pyr[0].color[i] = Rgb::Zero();
  }
  // Pull: 2x2 weighted averages until a single pixel remains.
  while (pyr.back().color.width() > 1 || pyr.back().color.height() > 1) {
    const Level& f = pyr.back();
    const int cw = (f.color.width() + 1) / 2, ch = (f.color.height() + 1) / 2;
    Level c{Grid<Rgb>(cw, ch, Rgb::Zero()), Grid<double>(cw, ch, 0.0)};
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) {
        double ws = 0.0;
        Rgb acc = Rgb::Zero();
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int fx = 2 * x + dx, fy = 2 * y + dy;
            if (!f.color.inside(fx, fy)) continue;
            ws += f.weight(fx, fy);
            acc += f.weight(fx, fy) * f.color(fx, fy);
          }
        if (ws > 0.0) c.color(x, y) = acc / ws;
        c.weight(x, y) = std::min(1.0, ws);
      }
    pyr.push_back(std::move(c));
  }
  // Push: blend each level with the upsampled coarser completion where weight is short of 1.
  for (int l = static_cast<int>(pyr.size()) - 2; l >= 0; --l) {
    Level& f = pyr[l];
    const Grid<Rgb>& coarse = pyr[l + 1].color;
    for (int y = 0; y < f.color.height(); ++y)
      for (int x = 0; x < f.color.width(); ++x) {
        const double a = f.weight(x, y);
        if (a >= 1.0) continue;
        f.color(x, y) = a * f.color(x, y) + (1.0 - a) * sample_up(coarse, x, y);
      }
  }
  Image out = img;
  for (std::size_t i = 0; i < out.valid.size(); ++i)
    if (!img.valid[i]) out.set(static_cast<int>(i % w), static_cast<int>(i / w), pyr[0].color[i]);
  return out;
}

BlendResult blend_and_inpaint(const Image& bg, const Image& fg, const Mask& fg_mask_virtual,
                              const Grid<double>* fg_alpha) {
  const int w = bg.width(), h = bg.height();
  if (fg.width() != w || fg.height() != h || !fg_mask_virtual.same_shape(w, h))
    throw std::invalid_argument("blend_and_inpaint: input size mismatch");
  if (fg_alpha && !fg_alpha->same_shape(w, h))
    throw std::invalid_argument("blend_and_inpaint: alpha size mismatch");
  const bool any_fg = count_true(fg.valid) > 0;
  const bool any_bg = count_true(bg.valid) > 0;
  if (!any_fg && !any_bg) throw std::invalid_argument("blend_and_inpaint: all inputs are invalid");

  // Background completion uses background pixels only, so it is the same for every foreground.
  const Image bg_full = any_bg ? pull_push_fill(bg) : Image(w, h);

  BlendResult res{Image(w, h), BoolGrid(w, h, 0)};
  Image& out = res.image;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (fg.valid(x, y)) {
        out.set(x, y, fg.rgb(x, y));
      } else if (!fg_mask_virtual(x, y)) {
        if (any_bg) out.set(x, y, bg_full.rgb(x, y));
        res.filled(x, y) = !bg.valid(x, y);
      } else if (bg.valid(x, y)) {
        out.set(x, y, bg.rgb(x, y));
      }
    }
  for (std::size_t i = 0; i < out.valid.size(); ++i) res.filled[i] |= !out.valid[i];
  if (count_true(out.valid) < out.valid.size()) out = pull_push_fill(out);

  // Feather the one-pixel foreground seam towards the completed background.
  if (any_bg) {
    const Image snapshot = out;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!fg.valid(x, y)) continue;
        bool seam = false;
        for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
          if (fg.valid.inside(x + dx, y + dy) && !fg.valid(x + dx, y + dy)) seam = true;
        if (!seam) continue;
        const double a = fg_alpha ? std::min(1.0, (*fg_alpha)(x, y)) : 0.5;
        out.set(x, y, a * snapshot.rgb(x, y) + (1.0 - a) * bg_full.rgb(x, y));
      }
  }
  return res;
}

SynthResult synthesize(const std::vector<SynthSource>& sources, const CameraView& cam_virtual,
                       int t_select, const SynthOptions& opts) {
  if (sources.empty()) throw std::invalid_argument("synthesize: no source views");
  if (t_select < 0 || t_select >= static_cast<int>(sources.size()))
    throw std::invalid_argument("synthesize: t_select " + std::to_string(t_select) +
                                " is not a source frame");
  const int w = cam_virtual.width(), h = cam_virtual.height();

  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("synthesize/") + name + ": " + e.what());
    }
  };

  // Region-restricted depth so the median never mixes foreground and background.
  auto region_depth = [&](const SynthSource& s, bool foreground) {
    DepthMap d = s.depth;
    if (!d.complete()) throw std::invalid_argument("source depth is not complete");
    for (std::size_t i = 0; i < d.valid.size(); ++i)
      if ((s.fg_mask[i] != 0) != foreground) d.valid[i] = 0;
    return opts.refine_depth ? bwm_filter(d, s.image, opts.bwm) : d;
  };

  std::vector<SourceSplat> bg_splats(sources.size(), SourceSplat{SplatBuffer(), cam_virtual});
  stage("background splat", [&] {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const SynthSource& s = sources[i];
      const DepthMap d = region_depth(s, false);
      SplatBuffer b = splat_forward(s.image, d, d.valid, s.cam, cam_virtual, opts.depth_band,
                                    opts.workers);
      bg_splats[i] = {bidir_check(b, d, s.cam, cam_virtual, opts.bidir_tau_px), s.cam};
    }
    return 0;
  });
  Image background = stage("composite", [&] { return composite_background(bg_splats, cam_virtual); });

  const SynthSource& sel = sources[t_select];
  SplatBuffer fg_raw, fg;
  stage("foreground splat", [&] {
    const DepthMap d = region_depth(sel, true);
    fg_raw = splat_forward(sel.image, d, d.valid, sel.cam, cam_virtual, opts.depth_band,
                           opts.workers);
    fg = bidir_check(fg_raw, d, sel.cam, cam_virtual, opts.bidir_tau_px);
    return 0;
  });

  SynthResult res;
  res.fg_virtual = dilate_mask(fg_raw.valid, 1);
  res.background = background;
  const Image fg_img = fg.image();
  BlendResult blended = stage("blend", [&] {
    return blend_and_inpaint(background, fg_img, res.fg_virtual, &fg.weight);
  });
  res.image = std::move(blended.image);
  res.filled = std::move(blended.filled);
  res.splatted = BoolGrid(w, h, 0);
  for (std::size_t i = 0; i < res.splatted.size(); ++i)
    res.splatted[i] = background.valid[i] || fg_img.valid[i];
  return res;
}

SynthResult synthesize(const ViewSet& views, const std::vector<DepthMap>& fused_depths,
                       const CameraView& cam_virtual, int t_select, const SynthOptions& opts) {
  if (fused_depths.size() != views.frames.size())
    throw std::invalid_argument("synthesize: one fused depth per frame required");
  std::vector<SynthSource> sources;
  sources.reserve(views.frames.size());
  for (std::size_t i = 0; i < views.frames.size(); ++i) {
    const auto& f = views.frames[i];
    sources.push_back({f.image, fused_depths[i], f.fg_mask, f.cam});
  }
  return synthesize(sources, cam_virtual, t_select, opts);
}

}  // namespace dvs
