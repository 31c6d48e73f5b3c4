#include "dvs/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "dvs/scene.hpp"

namespace dvs {

FlowField fb_consistency_filter(const FlowField& fwd, const FlowField& bwd, double tau_px) {
  if (fwd.src_view != bwd.dst_view || fwd.dst_view != bwd.src_view)
    throw std::invalid_argument("fb_consistency_filter: flows are not a forward/backward pair (" +
                                std::to_string(fwd.src_view) + "->" + std::to_string(fwd.dst_view) +
                                " vs " + std::to_string(bwd.src_view) + "->" +
                                std::to_string(bwd.dst_view) + ")");
  if (fwd.width() != bwd.width() || fwd.height() != bwd.height())
    throw std::invalid_argument("fb_consistency_filter: size mismatch");
  if (!(tau_px > 0.0)) throw std::invalid_argument("fb_consistency_filter: tau must be positive");

  FlowField out = fwd;
  const int w = fwd.width();
  const int h = fwd.height();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!out.valid(x, y)) continue;
      const double fu = fwd.du(x, y);
      const double fv = fwd.dv(x, y);
      BilinearTaps t;
      if (!bilinear_taps(x + fu, y + fv, w, h, t)) {
        out.valid(x, y) = 0;
        continue;
      }
      const int xs[4] = {t.x0, t.x1, t.x0, t.x1};
      const int ys[4] = {t.y0, t.y0, t.y1, t.y1};
      const double ws[4] = {t.w00, t.w10, t.w01, t.w11};
      double bu = 0.0, bv = 0.0;
      bool ok = true;
      for (int k = 0; k < 4 && ok; ++k) {
        if (ws[k] == 0.0) continue;
        ok = bwd.valid(xs[k], ys[k]) != 0;
        bu += ws[k] * bwd.du(xs[k], ys[k]);
        bv += ws[k] * bwd.dv(xs[k], ys[k]);
      }
      if (!ok || std::hypot(fu + bu, fv + bv) > tau_px) out.valid(x, y) = 0;
    }
  return out;
}

FlowField gt_flow_from_geometry(const SceneSpec& scene, int t_src, const CameraView& cam_src,
                                int t_dst, const CameraView& cam_dst) {
  if (cam_src.width() != cam_dst.width() || cam_src.height() != cam_dst.height())
    throw std::invalid_argument("gt_flow_from_geometry: camera sizes differ");
  const int w = cam_src.width();
  const int h = cam_src.height();
  FlowField flow(w, h, cam_src.view_id(), cam_dst.view_id());
  const double dt = static_cast<double>(t_dst - t_src);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const PixelCoord px{double(x), double(y)};
      const auto hit = cast_ray(scene, cam_src, px, t_src);
      if (!hit) {
        flow.valid(x, y) = 0;
        continue;
      }
      Eigen::Vector3d p = cam_src.center() + hit->depth * cam_src.ray(px);
      if (hit->foreground) p += dt * scene.foreground[hit->quad].velocity;
      const Projection pr = project(WorldPoint{p}, cam_dst);
      flow.du(x, y) = pr.pixel.u - x;
      flow.dv(x, y) = pr.pixel.v - y;
      if (!(pr.depth > 0.0) || !cam_dst.contains(pr.pixel)) {
        flow.valid(x, y) = 0;
        continue;
      }
      const auto seen = cast_ray(scene, cam_dst, pr.pixel, t_dst);
      const double tol = 1e-7 * pr.depth + 1e-9;
      if (!seen || seen->depth < pr.depth - tol) flow.valid(x, y) = 0;
    }
  return flow;
}

namespace {

Grid<double> gray(const Image& img) {
  Grid<double> g(img.width(), img.height(), 0.0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) g(x, y) = luminance(img.rgb(x, y));
  return g;
}

Grid<double> downsample(const Grid<double>& g) {
  const int w = std::max(1, g.width() / 2);
  const int h = std::max(1, g.height() / 2);
  Grid<double> out(w, h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x0 = std::min(2 * x, g.width() - 1), x1 = std::min(2 * x + 1, g.width() - 1);
      const int y0 = std::min(2 * y, g.height() - 1), y1 = std::min(2 * y + 1, g.height() - 1);
      out(x, y) = 0.25 * (g(x0, y0) + g(x1, y0) + g(x0, y1) + g(x1, y1));
    }
  return out;
}

constexpr double kNoMatch = std::numeric_limits<double>::infinity();

// Mean absolute difference of the window at (x, y) in a against (x+du, y+dv) in b.
double window_cost(const Grid<double>& a, const Grid<double>& b, int x, int y, int du, int dv,
                   int half) {
  if (!b.inside(x + du, y + dv)) return kNoMatch;
  double acc = 0.0;
  int n = 0;
  for (int oy = -half; oy <= half; ++oy)
    for (int ox = -half; ox <= half; ++ox) {
      const int ax = x + ox, ay = y + oy;
      const int bx = ax + du, by = ay + dv;
      if (!a.inside(ax, ay) || !b.inside(bx, by)) continue;
      acc += std::abs(a(ax, ay) - b(bx, by));
      ++n;
    }
  const int full = (2 * half + 1) * (2 * half + 1);
  if (2 * n < full) return kNoMatch;
  return acc / n;
}

double equiangular_offset(double cm, double c0, double cp) {
  if (c0 <= 0.0 || !std::isfinite(cm) || !std::isfinite(cp)) return 0.0;
  const double denom = cm >= cp ? cm - c0 : cp - c0;
  if (!(denom > 0.0)) return 0.0;
  return std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
}

struct LevelFlow {
  Grid<int> du, dv;
};

LevelFlow match_level(const Grid<double>& a, const Grid<double>& b, const LevelFlow* coarse,
                      int half, int radius, Grid<double>* sub_u, Grid<double>* sub_v) {
  const int w = a.width(), h = a.height();
  LevelFlow out{Grid<int>(w, h, 0), Grid<int>(w, h, 0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int pu = 0, pv = 0;
      if (coarse) {
        const int cx = std::min(x / 2, coarse->du.width() - 1);
        const int cy = std::min(y / 2, coarse->du.height() - 1);
        pu = 2 * coarse->du(cx, cy);
        pv = 2 * coarse->dv(cx, cy);
      }
      double best = kNoMatch;
      int bu = 0, bv = 0;
      long best_norm = std::numeric_limits<long>::max();
      for (int dv = pv - radius; dv <= pv + radius; ++dv)
        for (int du = pu - radius; du <= pu + radius; ++du) {
          const double c = window_cost(a, b, x, y, du, dv, half);
          if (c == kNoMatch) continue;
          const long norm = long(du) * du + long(dv) * dv;
          if (c < best || (c == best && norm < best_norm)) {
            best = c;
            bu = du;
            bv = dv;
            best_norm = norm;
          }
        }
      out.du(x, y) = bu;
      out.dv(x, y) = bv;
      if (sub_u && best != kNoMatch) {
        (*sub_u)(x, y) = bu + equiangular_offset(window_cost(a, b, x, y, bu - 1, bv, half), best,
                                                 window_cost(a, b, x, y, bu + 1, bv, half));
        (*sub_v)(x, y) = bv + equiangular_offset(window_cost(a, b, x, y, bu, bv - 1, half), best,
                                                 window_cost(a, b, x, y, bu, bv + 1, half));
      } else if (sub_u) {
        (*sub_u)(x, y) = bu;
        (*sub_v)(x, y) = bv;
      }
    }
  return out;
}

}  // namespace

FlowField estimate_flow(const Image& img_a, const Image& img_b, int levels,
                        const BlockMatchOptions& opts) {
  if (img_a.width() != img_b.width() || img_a.height() != img_b.height())
    throw std::invalid_argument("estimate_flow: image sizes differ");
  if (levels < 1) throw std::invalid_argument("estimate_flow: levels must be >= 1");
  if (opts.window < 1 || opts.window % 2 == 0 || opts.search_radius < 0)
    throw std::invalid_argument("estimate_flow: window must be odd and radius non-negative");

  const int w = img_a.width(), h = img_a.height();
  FlowField flow(w, h, 0, 1);

  std::vector<Grid<double>> pa{gray(img_a)}, pb{gray(img_b)};
  const auto is_constant = [](const Grid<double>& g) {
    const auto [lo, hi] = std::minmax_element(g.data().begin(), g.data().end());
    return g.empty() || *lo == *hi;
  };
  if (is_constant(pa[0]) || is_constant(pb[0])) return flow;  // degenerate: zero flow
  for (int l = 1; l < levels; ++l) {
    if (pa.back().width() / 2 < opts.window || pa.back().height() / 2 < opts.window) break;
    pa.push_back(downsample(pa.back()));
    pb.push_back(downsample(pb.back()));
  }

  const int half = opts.window / 2;
  std::optional<LevelFlow> coarse;
  Grid<double> su(w, h, 0.0), sv(w, h, 0.0);
  for (int l = static_cast<int>(pa.size()) - 1; l >= 0; --l) {
    const bool finest = l == 0;
    LevelFlow lf = match_level(pa[l], pb[l], coarse ? &*coarse : nullptr, half, opts.search_radius,
                               finest ? &su : nullptr, finest ? &sv : nullptr);
    coarse = std::move(lf);
  }
  flow.du = std::move(su);
  flow.dv = std::move(sv);
  return flow;
}

}  // namespace dvs
