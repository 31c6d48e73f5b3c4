#include "dvs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dvs/flow.hpp"

namespace dvs {

namespace {

void require_same_size(const Image& a, const Image& b, const BoolGrid* region, const char* where) {
  if (a.width() != b.width() || a.height() != b.height())
    throw std::invalid_argument(std::string(where) + ": image sizes differ");
  if (region && !region->same_shape(a.width(), a.height()))
    throw std::invalid_argument(std::string(where) + ": region size mismatch");
}

bool in_region(const BoolGrid* region, std::size_t i) { return !region || (*region)[i]; }

}  // namespace

nlohmann::json DepthEvalReport::to_json() const {
  return {{"rmse_full", rmse_full}, {"rmse_fg", rmse_fg},   {"rmse_bg", rmse_bg},
          {"count_full", count_full}, {"count_fg", count_fg}, {"count_bg", count_bg},
          {"excluded", excluded}};
}

DepthEvalReport DepthEvalReport::from_json(const nlohmann::json& j) {
  DepthEvalReport r;
  r.rmse_full = j.at("rmse_full").get<double>();
  r.rmse_fg = j.at("rmse_fg").get<double>();
  r.rmse_bg = j.at("rmse_bg").get<double>();
  r.count_full = j.at("count_full").get<std::size_t>();
  r.count_fg = j.at("count_fg").get<std::size_t>();
  r.count_bg = j.at("count_bg").get<std::size_t>();
  r.excluded = j.at("excluded").get<std::size_t>();
  return r;
}

DepthEvalReport depth_rmse(const DepthMap& est, const DepthMap& gt, const Mask& mask,
                           double baseline_scale) {
  if (!est.values.same_shape(gt.values) || !mask.same_shape(gt.values))
    throw std::invalid_argument("depth_rmse: size mismatch");
  if (!(baseline_scale > 0.0)) throw std::invalid_argument("depth_rmse: baseline_scale must be > 0");
  if (!est.complete()) throw std::invalid_argument("depth_rmse: estimate must be complete");

  double se_fg = 0.0, se_bg = 0.0;
  DepthEvalReport r;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (!gt.valid[i]) {
      ++r.excluded;
      continue;
    }
    const double e = baseline_scale * est.values[i] - gt.values[i];
    if (mask[i]) {
      se_fg += e * e;
      ++r.count_fg;
    } else {
      se_bg += e * e;
      ++r.count_bg;
    }
  }
  r.count_full = r.count_fg + r.count_bg;
  if (r.count_full == 0) throw std::runtime_error("depth_rmse: no ground-truth pixels to evaluate");
  if (r.count_fg == 0) throw std::runtime_error("depth_rmse: foreground evaluation set is empty");
  r.rmse_full = std::sqrt((se_fg + se_bg) / r.count_full);
  r.rmse_fg = std::sqrt(se_fg / r.count_fg);
  r.rmse_bg = r.count_bg ? std::sqrt(se_bg / r.count_bg) : 0.0;
  return r;
}

nlohmann::json SynthEvalReport::to_json() const {
  return {{"mean_flow_mag", mean_flow_mag}, {"psnr", psnr}, {"ssim", ssim}, {"pixels", pixels}};
}

SynthEvalReport SynthEvalReport::from_json(const nlohmann::json& j) {
  SynthEvalReport r;
  r.mean_flow_mag = j.at("mean_flow_mag").get<double>();
  r.psnr = j.at("psnr").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.pixels = j.at("pixels").get<std::size_t>();
  return r;
}

double psnr(const Image& a, const Image& b, const BoolGrid* region) {
  require_same_size(a, b, region, "psnr");
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    if (!in_region(region, i)) continue;
    se += (a.rgb[i] - b.rgb[i]).squaredNorm();
    n += 3;
  }
  if (n == 0) throw std::runtime_error("psnr: empty region");
  const double mse = se / n;
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b, const BoolGrid* region) {
  require_same_size(a, b, region, "ssim");
  constexpr int kHalf = 5;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double g[2 * kHalf + 1];
  for (int k = -kHalf; k <= kHalf; ++k) g[k + kHalf] = std::exp(-(k * k) / (2 * kSigma * kSigma));

  const int w = a.width(), h = a.height();
  double acc = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in_region(region, static_cast<std::size_t>(y) * w + x)) continue;
      // Window clipped at the image border and renormalized.
      for (int c = 0; c < 3; ++c) {
        double ws = 0, ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -kHalf; dy <= kHalf; ++dy)
          for (int dx = -kHalf; dx <= kHalf; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const double wt = g[dx + kHalf] * g[dy + kHalf];
            const double va = a.rgb(nx, ny)[c], vb = b.rgb(nx, ny)[c];
            ws += wt;
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        ma /= ws;
        mb /= ws;
        const double va = std::max(0.0, saa / ws - ma * ma);
        const double vb = std::max(0.0, sbb / ws - mb * mb);
        const double cov = sab / ws - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++n;
      }
    }
  if (n == 0) throw std::runtime_error("ssim: empty region");
  return acc / n;
}

SynthEvalReport synth_eval(const Image& synth, const Image& gt, const BoolGrid* region) {
  require_same_size(synth, gt, region, "synth_eval");
  SynthEvalReport r;
  const FlowField flow = estimate_flow(gt, synth, 3);
  double mag = 0.0;
  for (std::size_t i = 0; i < flow.valid.size(); ++i) {
    if (!in_region(region, i) || !flow.valid[i] || !gt.valid[i] || !synth.valid[i]) continue;
    mag += std::hypot(flow.du[i], flow.dv[i]);
    ++r.pixels;
  }
  if (r.pixels == 0) throw std::runtime_error("synth_eval: no valid pixels to compare");
  r.mean_flow_mag = mag / r.pixels;
  r.psnr = psnr(synth, gt, region);
  r.ssim = ssim(synth, gt, region);
  return r;
}

}  // namespace dvs
