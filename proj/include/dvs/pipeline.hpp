#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvs/fusion.hpp"
#include "dvs/scene.hpp"
#include "dvs/synth.hpp"

namespace dvs {

struct DegradationConfig {
  DsvDistortion dsv{0.7, 0.05, 0.15};
  int hole_dilation_px = 5;
  double noise_frac = 0.05;
};

// Upper/lower bounds checked by cmd_eval against each method's mean row.
struct EvalThresholds {
  std::optional<double> max_rmse_full;
  std::optional<double> max_rmse_fg;
  std::optional<double> max_flow_mag;
  std::optional<double> min_psnr;
  std::optional<double> min_ssim;
  std::vector<std::string> methods{"fused"};
};

struct PipelineConfig {
  std::optional<SceneSpec> scene;  // generated by cmd_generate
  std::filesystem::path scene_dir; // existing dataset, used when `scene` is unset
  std::string scene_name = "scene";
  DegradationConfig degradation;
  FusionWeights weights;
  FusionOptions fusion;
  std::vector<CameraView> virtual_cameras;  // empty: midpoints of consecutive source cameras
  std::vector<int> t_select;                // empty: every frame
  SynthOptions synthesis;
  bool eval = true;
  std::vector<std::string> methods{"fused", "dsv"};  // also "gt": render with ground-truth depth
  EvalThresholds thresholds;
  std::filesystem::path output_dir = "dvs_out";
  std::uint64_t seed = 7;
  int workers = 1;

  // Missing keys keep their defaults; relative paths resolve against base_dir.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  // Throws std::invalid_argument naming every problem found.
  void validate() const;

  std::filesystem::path dataset_dir() const;
  std::filesystem::path fused_dir() const { return output_dir / "fused"; }
  std::filesystem::path renders_dir() const { return output_dir / "renders"; }
  std::filesystem::path eval_dir() const { return output_dir / "eval"; }
};

// Applies a --drop-loss letter (g, l, s or e).
void drop_loss(FusionWeights& weights, char term);

struct Dataset {
  std::vector<CameraView> cameras;
  ViewSet views;
  std::vector<DepthMap> gt_depth;
  std::optional<SceneSpec> scene;  // present when scene.json exists
};

std::string frame_dir_name(int t);
// Relative paths of every file a dataset with these cameras must contain.
std::vector<std::string> dataset_files(int frame_count, int neighbor_views);
void write_dataset(const SceneSpec& spec, const DegradationConfig& deg, std::uint64_t seed,
                   int neighbor_views, const std::filesystem::path& dir);
// Checks presence and checksums of every manifest entry before reading anything.
Dataset load_dataset(const std::filesystem::path& dir, int neighbor_views);

std::vector<CameraView> midpoint_cameras(const std::vector<CameraView>& cams);

struct RenderRequest {
  int camera = 0;  // index into the virtual camera list
  int t_select = 0;
  std::string stem() const;
};

void cmd_generate(const PipelineConfig& cfg);
void cmd_fuse(const PipelineConfig& cfg);
void cmd_render(const PipelineConfig& cfg);
// Writes eval/report.csv and eval/report.json. Returns the number of violated thresholds.
int cmd_eval(const PipelineConfig& cfg);
// generate (when a scene is configured), fuse, render, and eval when enabled.
int cmd_pipeline(const PipelineConfig& cfg);

}  // namespace dvs
