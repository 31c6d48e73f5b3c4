#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dvs/io.hpp"
#include "dvs/pipeline.hpp"
#include "test_util.hpp"

using namespace dvs;
namespace fs = std::filesystem;

namespace {

// 64x64, 4 frames, with a moving billboard; small enough for a full pipeline per test.
SceneSpec small_scene() {
  SceneSpec s = default_acceptance_scene(5);
  s.width = s.height = 64;
  s.frame_count = 4;
  s.camera_path.clear();
  for (int t = 0; t < 4; ++t)
    s.camera_path.push_back(CameraView::from_focal(t, t, 60.0, 31.5, 31.5, Eigen::Matrix3d::Identity(),
                                                   {-0.1 + 0.05 * t, 0.0, 0.0}, 64, 64));
  return s;
}

PipelineConfig small_config(const fs::path& out) {
  PipelineConfig c;
  c.scene = small_scene();
  c.scene_name = "small";
  c.output_dir = out;
  c.fusion.iterations_per_level = 15;
  c.methods = {"fused", "dsv", "gt"};
  return c;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Pipeline, GenerateWritesEveryManifestFile) {
  const fs::path out = dvs::testing::temp_dir("gen");
  const PipelineConfig c = small_config(out);
  cmd_generate(c);
  const nlohmann::json m = io::read_json(c.dataset_dir() / "manifest.json");
  const auto expected = dataset_files(4, c.weights.neighbor_views);
  ASSERT_EQ(m.at("files").size(), expected.size());
  for (const auto& f : expected) {
    ASSERT_TRUE(m.at("files").contains(f)) << f;
    EXPECT_EQ(m.at("files").at(f).get<std::string>(), io::sha256_file(c.dataset_dir() / f)) << f;
  }
  const Dataset ds = load_dataset(c.dataset_dir(), c.weights.neighbor_views);
  EXPECT_EQ(ds.views.frames.size(), 4u);
  EXPECT_EQ(ds.views.flows.size(), 4u);  // (0,2) and (1,3), both directions
}

TEST(Pipeline, RerunWithSameSeedGivesIdenticalChecksums) {
  const PipelineConfig a = small_config(dvs::testing::temp_dir("rerun_a"));
  const PipelineConfig b = small_config(dvs::testing::temp_dir("rerun_b"));
  cmd_generate(a);
  cmd_generate(b);
  EXPECT_EQ(io::read_json(a.dataset_dir() / "manifest.json").dump(),
            io::read_json(b.dataset_dir() / "manifest.json").dump());
  PipelineConfig c = small_config(dvs::testing::temp_dir("rerun_c"));
  c.seed = 8;
  cmd_generate(c);
  EXPECT_NE(io::read_json(a.dataset_dir() / "manifest.json").dump(),
            io::read_json(c.dataset_dir() / "manifest.json").dump());
}

TEST(Pipeline, ZeroFramesIsValidationError) {
  PipelineConfig c = small_config(dvs::testing::temp_dir("zero"));
  c.scene->frame_count = 0;
  c.scene->camera_path.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(cmd_generate(c), std::invalid_argument);
  EXPECT_FALSE(fs::exists(c.dataset_dir()));
}

TEST(Pipeline, ValidationListsEveryProblem) {
  PipelineConfig c = small_config(dvs::testing::temp_dir("problems"));
  c.workers = 0;
  c.methods = {"fused", "magic"};
  c.fusion.levels = 0;
  const std::string msg = message_of([&] { c.validate(); });
  EXPECT_NE(msg.find("workers"), std::string::npos);
  EXPECT_NE(msg.find("magic"), std::string::npos);
  EXPECT_NE(msg.find("levels"), std::string::npos);
}

TEST(Pipeline, MissingInputsAreEnumeratedBeforeWork) {
  const fs::path out = dvs::testing::temp_dir("missing");
  const PipelineConfig c = small_config(out);
  cmd_generate(c);
  fs::remove(c.dataset_dir() / "frame_0001" / "dsv.pfm");
  fs::remove(c.dataset_dir() / "flows" / "bwd_1_3.flo");
  {
    std::ofstream(c.dataset_dir() / "frame_0002" / "dmv.pfm", std::ios::app) << "x";
  }
  const std::string msg = message_of([&] { cmd_fuse(c); });
  EXPECT_NE(msg.find("frame_0001/dsv.pfm"), std::string::npos) << msg;
  EXPECT_NE(msg.find("bwd_1_3.flo"), std::string::npos) << msg;
  EXPECT_NE(msg.find("frame_0002/dmv.pfm"), std::string::npos) << msg;
  EXPECT_FALSE(fs::exists(c.fused_dir()));
}

TEST(Pipeline, RenderRequiresFusedDepths) {
  const PipelineConfig c = small_config(dvs::testing::temp_dir("nofuse"));
  cmd_generate(c);
  const std::string msg = message_of([&] { cmd_render(c); });
  EXPECT_NE(msg.find("depth_0000.pfm"), std::string::npos) << msg;
}

TEST(Pipeline, EvalWithEmptyRenderDirIsError) {
  const PipelineConfig c = small_config(dvs::testing::temp_dir("norender"));
  cmd_generate(c);
  fs::create_directories(c.renders_dir());
  EXPECT_ANY_THROW(cmd_eval(c));
}

TEST(Pipeline, EndToEndReportAndThresholds) {
  PipelineConfig c = small_config(dvs::testing::temp_dir("e2e"));
  EXPECT_EQ(cmd_pipeline(c), 0);
  const nlohmann::json report = io::read_json(c.eval_dir() / "report.json");
  for (const char* m : {"fused", "dsv", "gt"}) ASSERT_TRUE(report.contains(m)) << m;
  // Perfect depth renders nearly where the ground truth is.
  EXPECT_LT(report["gt"].back()["flow_mag"].get<double>(), 1.0);

  std::ifstream csv(c.eval_dir() / "report.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "scene,method,frame,rmse_full,rmse_fg,flow_mag,psnr,ssim");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 3 * (4 + 1));  // per frame plus a mean row, per method

  EXPECT_TRUE(fs::exists(c.renders_dir() / "fused" / "view_00_t0000.png"));
  EXPECT_TRUE(fs::exists(c.renders_dir() / "fused" / "view_00_t0000_valid.png"));
  EXPECT_TRUE(fs::exists(c.fused_dir() / "trajectory.csv"));

  c.thresholds.min_psnr = 98.0;
  c.thresholds.max_flow_mag = 0.0;
  EXPECT_EQ(cmd_eval(c), 2);
}

TEST(Pipeline, EvalRejectsMismatchedFrameSets) {
  const PipelineConfig c = small_config(dvs::testing::temp_dir("mismatch"));
  EXPECT_EQ(cmd_pipeline(c), 0);
  fs::remove(c.renders_dir() / "dsv" / "view_01_t0002.png");
  const std::string msg = message_of([&] { cmd_eval(c); });
  EXPECT_NE(msg.find("view_01_t0002"), std::string::npos) << msg;
}

TEST(Pipeline, ConfigJsonRoundTrip) {
  PipelineConfig c = small_config("some/out");
  c.thresholds.max_rmse_fg = 0.25;
  c.t_select = {0, 2};
  c.weights.lambda_s = 0.3;
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(*back.thresholds.max_rmse_fg, 0.25);
}

TEST(Pipeline, ConfigFromJsonResolvesRelativePathsAndDefaults) {
  const nlohmann::json j = {{"scene_dir", "data/scene"}, {"output_dir", "out"}, {"seed", 11}};
  const PipelineConfig c = PipelineConfig::from_json(j, "/base");
  EXPECT_EQ(c.scene_dir, fs::path("/base/data/scene"));
  EXPECT_EQ(c.output_dir, fs::path("/base/out"));
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.weights.lambda_l, 1.0);
  EXPECT_EQ(c.fusion.iterations_per_level, 200);
}

TEST(Pipeline, DropLossZeroesTheTerm) {
  FusionWeights w;
  drop_loss(w, 'g');
  EXPECT_EQ(w.lambda_g, 0.0);
  drop_loss(w, 'l');
  EXPECT_EQ(w.lambda_l, 0.0);
  drop_loss(w, 's');
  EXPECT_EQ(w.lambda_s, 0.0);
  drop_loss(w, 'e');
  EXPECT_EQ(w.lambda_e, 0.0);
  EXPECT_THROW(drop_loss(w, 'x'), std::invalid_argument);
}

TEST(Pipeline, MidpointCameras) {
  const SceneSpec s = small_scene();
  const auto mids = midpoint_cameras(s.camera_path);
  ASSERT_EQ(mids.size(), 3u);
  EXPECT_NEAR(mids[1].center().x(), -0.025, 1e-12);
  EXPECT_EQ(mids[1].view_id(), 1001);
  EXPECT_EQ((RenderRequest{2, 13}).stem(), "view_02_t0013");
}
