#pragma once

#include <cstddef>

#include <json.hpp>

#include "dvs/depth_map.hpp"
#include "dvs/image.hpp"

namespace dvs {

struct DepthEvalReport {
  double rmse_full = 0.0;
  double rmse_fg = 0.0;
  double rmse_bg = 0.0;
  std::size_t count_full = 0;  // = count_fg + count_bg
  std::size_t count_fg = 0;
  std::size_t count_bg = 0;
  std::size_t excluded = 0;    // gt-invalid pixels

  nlohmann::json to_json() const;
  static DepthEvalReport from_json(const nlohmann::json& j);
};

// est * baseline_scale against gt over gt-valid pixels. Throws std::runtime_error when the
// full or the foreground evaluation set is empty.
DepthEvalReport depth_rmse(const DepthMap& est, const DepthMap& gt, const Mask& mask,
                           double baseline_scale = 1.0);

constexpr double kPsnrCap = 99.0;

struct SynthEvalReport {
  double mean_flow_mag = 0.0;  // pixels
  double psnr = 0.0;           // dB, capped
  double ssim = 0.0;
  std::size_t pixels = 0;

  nlohmann::json to_json() const;
  static SynthEvalReport from_json(const nlohmann::json& j);
};

// PSNR over the region (all pixels when null), peak 1.0, capped at kPsnrCap.
double psnr(const Image& a, const Image& b, const BoolGrid* region = nullptr);
// Mean SSIM over channels and region pixels, 11x11 Gaussian window with sigma 1.5.
double ssim(const Image& a, const Image& b, const BoolGrid* region = nullptr);

// Flow magnitude from gt to synth (block matching) averaged over pixels valid in both images
// and inside `region`; PSNR and SSIM over the same region.
SynthEvalReport synth_eval(const Image& synth, const Image& gt, const BoolGrid* region = nullptr);

}  // namespace dvs
