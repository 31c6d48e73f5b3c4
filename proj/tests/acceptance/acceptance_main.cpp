// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dvs/flow.hpp"
#include "dvs/fusion.hpp"
#include "dvs/io.hpp"
#include "dvs/metrics.hpp"
#include "dvs/pipeline.hpp"
#include "dvs/scene.hpp"
#include "dvs/synth.hpp"
#include "../test_util.hpp"

using namespace dvs;
namespace fs = std::filesystem;

namespace {

// Tolerances, pinned.
constexpr int kScaleInvarianceMaps = 1000;
constexpr double kScaleInvarianceTol = 1e-12;
constexpr double kScaleInvarianceSeconds = 5.0;
constexpr double kFdTol = 1e-4;
constexpr double kFdSeconds = 30.0;
constexpr double kStaticRmseFraction = 0.02;
constexpr double kFgGradientTol = 0.02;
constexpr double kFusionSeconds = 60.0;
constexpr double kAblationTieRel = 0.01;  // "tied": within 1% of the best variant
constexpr double kWarpLevelTol = 1.0 / 255.0 + 1e-9;
constexpr double kWarpFraction = 0.99;
constexpr double kStaticLsTol = 1e-9;
constexpr double kMinPsnr = 30.0;
constexpr int kParallelWorkers = 3;
constexpr std::uint64_t kSeed = 7;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

// Runs a criterion; an exception counts as a failure with its message.
void run(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

Image quantized(const Image& img) {
  Image out = img;
  for (auto& c : out.rgb.data())
    for (int k = 0; k < 3; ++k) c[k] = std::round(std::clamp(c[k], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

PipelineConfig acceptance_config(const fs::path& out, int workers) {
  PipelineConfig c;
  c.scene = default_acceptance_scene(kSeed);
  c.scene_name = "acceptance";
  c.output_dir = out;
  c.seed = kSeed;
  c.workers = workers;
  c.fusion.workers = workers;
  c.synthesis.workers = workers;
  c.methods = {"fused", "dsv"};
  return c;
}

std::map<std::string, std::string> tree_checksums(const fs::path& root) {
  std::map<std::string, std::string> sums;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) sums[fs::relative(e.path(), root).generic_string()] = io::sha256_file(e.path());
  return sums;
}

// Pooled RMSE over all frames, full image and foreground only.
std::pair<double, double> pooled_rmse(const std::vector<DepthMap>& est, const Dataset& ds) {
  double se_full = 0, se_fg = 0;
  std::size_t n_full = 0, n_fg = 0;
  for (std::size_t t = 0; t < est.size(); ++t) {
    const DepthEvalReport r = depth_rmse(est[t], ds.gt_depth[t], ds.views.frames[t].fg_mask);
    se_full += r.rmse_full * r.rmse_full * r.count_full;
    se_fg += r.rmse_fg * r.rmse_fg * r.count_fg;
    n_full += r.count_full;
    n_fg += r.count_fg;
  }
  return {std::sqrt(se_full / n_full), std::sqrt(se_fg / n_fg)};
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

void criterion_scale_invariance() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(4, 40);
  std::uniform_real_distribution<double> log_depth(std::log(0.05), std::log(200.0));
  std::uniform_real_distribution<double> log_alpha(std::log(1e-3), std::log(1e3)), u01(0, 1);
  const int offsets[] = {1, 2, 4, 8, 16};
  const auto t0 = Clock::now();
  double worst = 0.0;
  long mismatched = 0, pairs = 0;
  for (int m = 0; m < kScaleInvarianceMaps; ++m) {
    const int w = size(rng), h = size(rng);
    DepthMap d(w, h);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      if (u01(rng) < 0.1) continue;
      d.values[i] = std::exp(log_depth(rng));
      d.valid[i] = 1;
    }
    const double alpha = std::exp(log_alpha(rng));
    DepthMap scaled = d;
    for (std::size_t i = 0; i < d.values.size(); ++i)
      if (d.valid[i]) scaled.values[i] = alpha * d.values[i];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int o : offsets)
          for (auto [dx, dy] : {std::pair{o, 0}, std::pair{0, o}}) {
            const auto g = relative_gradient(d, x, y, dx, dy);
            const auto gs = relative_gradient(scaled, x, y, dx, dy);
            if (g.has_value() != gs.has_value()) {
              ++mismatched;
              continue;
            }
            if (!g) continue;
            ++pairs;
            worst = std::max(worst, std::abs(*g - *gs));
          }
  }
  const double secs = seconds_since(t0);
  report(1, mismatched == 0 && worst <= kScaleInvarianceTol && secs < kScaleInvarianceSeconds,
         fmt("max |g(aD)-g(D)| = %.3g", worst) + " over " + std::to_string(pairs) + " pairs, " +
             std::to_string(mismatched) + " validity mismatches, " + fmt("%.2f s", secs));
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  std::string detail;
  double worst = 0.0;
  const auto inst = dvs::testing::random_instance(21);
  for (char term : {'g', 'l', 's', 'e'}) {
    const double e = dvs::testing::worst_fd_error(inst, dvs::testing::only(term));
    worst = std::max(worst, e);
    detail += std::string("L_") + term + fmt(" %.2g, ", e);
  }
  for (std::uint64_t seed : {3u, 8u}) {
    const double e = dvs::testing::worst_fd_error(dvs::testing::random_instance(seed), FusionWeights{});
    worst = std::max(worst, e);
    detail += "total(seed " + std::to_string(seed) + fmt(") %.2g, ", e);
  }
  const double secs = seconds_since(t0);
  report(2, worst < kFdTol && secs < kFdSeconds, "max rel err: " + detail + fmt("%.1f s", secs));
}

struct FusionRun {
  Dataset ds;
  FusionResult full;
  double fuse_seconds = 0.0;
};

void criterion_fusion_recovery(const FusionRun& run) {
  const Dataset& ds = run.ds;
  const auto& fused = run.full.depths;
  double lo = 1e300, hi = -1e300, se = 0, gerr = 0;
  std::size_t n_static = 0, n_pairs = 0;
  const std::vector<int> offsets = FusionWeights{}.neighbor_offsets;
  for (std::size_t t = 0; t < fused.size(); ++t) {
    const DepthMap& gt = ds.gt_depth[t];
    const Mask& fg = ds.views.frames[t].fg_mask;
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
      lo = std::min(lo, gt.values[i]);
      hi = std::max(hi, gt.values[i]);
      if (fg[i]) continue;
      const double e = fused[t].values[i] - gt.values[i];
      se += e * e;
      ++n_static;
    }
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x) {
        if (!fg(x, y)) continue;
        for (int o : offsets)
          for (auto [dx, dy] : {std::pair{o, 0}, std::pair{0, o}}) {
            const auto ge = relative_gradient(fused[t], x, y, dx, dy);
            const auto gg = relative_gradient(gt, x, y, dx, dy);
            if (!ge || !gg) continue;
            gerr += std::abs(*ge - *gg);
            ++n_pairs;
          }
      }
  }
  const double rmse = std::sqrt(se / n_static), range = hi - lo, g = gerr / n_pairs;
  report(3, rmse <= kStaticRmseFraction * range && g <= kFgGradientTol && run.fuse_seconds < kFusionSeconds,
         fmt("static RMSE %.4f", rmse) + fmt(" (%.2f%% of range", 100 * rmse / range) +
             fmt(" %.3f)", range) + fmt(", fg mean |dg| %.4f", g) +
             fmt(", fuse %.1f s single-threaded", run.fuse_seconds));
}

void criterion_ablation(const FusionRun& run) {
  const auto full = pooled_rmse(run.full.depths, run.ds);
  std::map<char, std::pair<double, double>> drop;
  for (char term : {'g', 'l', 's', 'e'}) {
    FusionWeights w;
    drop_loss(w, term);
    drop[term] = pooled_rmse(fuse(run.ds.views, w, FusionOptions{}).depths, run.ds);
  }
  bool g_worst_full = true, l_worst_fg = true, full_best = true;
  for (char term : {'l', 's', 'e'}) g_worst_full &= drop['g'].first >= drop[term].first;
  for (char term : {'s', 'e'}) l_worst_fg &= drop['l'].second > drop[term].second;
  for (const auto& [term, r] : drop) {
    full_best &= full.first <= r.first * (1 + kAblationTieRel);
    full_best &= full.second <= r.second * (1 + kAblationTieRel);
  }
  std::string detail = fmt("full %.4f", full.first) + fmt("/%.4f", full.second);
  for (const auto& [term, r] : drop)
    detail += std::string(", -L_") + term + fmt(" %.4f", r.first) + fmt("/%.4f", r.second);
  detail += std::string(" (full/fg RMSE); -L_g worst full: ") + (g_worst_full ? "yes" : "no") +
            ", -L_l worse fg than -L_s,-L_e: " + (l_worst_fg ? "yes" : "no") +
            ", full best or tied: " + (full_best ? "yes" : "no");
  report(4, g_worst_full && l_worst_fg && full_best, detail);
}

void criterion_static_warp() {
  const SceneSpec spec = default_acceptance_scene(kSeed);
  const SceneInstant a = render_gt(spec, 0);
  const CameraView& cam_b = spec.camera_path[1];
  const SceneInstant b = render_view(spec, cam_b, 0);  // same instant, so the scene is static
  const Mask all(spec.width, spec.height, 1);
  SplatBuffer buf = splat_forward(a.gt_image, a.gt_depth, all, a.cam, cam_b);
  buf = bidir_check(buf, a.gt_depth, a.cam, cam_b);
  std::size_t checked = 0, good = 0;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      if (!buf.valid(x, y)) continue;
      ++checked;
      const double err = (buf.rgb(x, y) - b.gt_image.rgb(x, y)).cwiseAbs().maxCoeff();
      if (err <= kWarpLevelTol) ++good;
    }
  const double frac = checked ? static_cast<double>(good) / checked : 0.0;

  SceneSpec still = spec;
  still.foreground.clear();
  ViewSet vs = dvs::testing::make_viewset(still, {1.0, 0.0, 0.0}, 0, 0.0, kSeed);
  FusionWeights w = dvs::testing::only('s');
  const FusionProblem p = prepare_problem(vs, w);
  const std::vector<ScaleField> zero(p.frames.size(), ScaleField(still.width, still.height));
  const double ls = total_loss_and_gradient(zero, p, w, false).loss.scene_flow;

  report(5, checked > 0 && frac >= kWarpFraction && ls < kStaticLsTol,
         fmt("%.2f%% of non-occluded pixels within 1 level", 100 * frac) + " (" + std::to_string(checked) +
             " of " + std::to_string(spec.width * spec.height) + " covered)" +
             fmt(", static L_s with GT depth/flow %.3g", ls));
}

void criterion_synthesis(const PipelineConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir(), cfg.weights.neighbor_views);
  const auto cams = midpoint_cameras(ds.cameras);
  const fs::path root = cfg.renders_dir();
  std::map<std::string, double> flow;
  double min_psnr = 1e300, mean_psnr = 0;
  int n = 0;
  for (const std::string method : {"fused", "dsv"}) {
    for (int c = 0; c < static_cast<int>(cams.size()); ++c)
      for (int t : {c, c + 1}) {
        const std::string stem = RenderRequest{c, t}.stem();
        const Image img = io::read_png(root / method / (stem + ".png"));
        const BoolGrid splatted = io::read_mask_png(root / method / (stem + "_valid.png"));
        const Image gt = quantized(render_view(*ds.scene, cams[c], t).gt_image);
        flow[method] += synth_eval(img, gt).mean_flow_mag;
        if (method == "fused") {
          const double p = psnr(img, gt, &splatted);
          min_psnr = std::min(min_psnr, p);
          mean_psnr += p;
          ++n;
        }
      }
  }
  mean_psnr /= n;
  flow["fused"] /= n;
  flow["dsv"] /= n;
  report(6, min_psnr >= kMinPsnr && flow["fused"] < flow["dsv"],
         fmt("fused PSNR (excl. completed) min %.2f dB", min_psnr) + fmt(" mean %.2f dB", mean_psnr) +
             " over " + std::to_string(n) + " midpoint renders" +
             fmt("; flow magnitude fused %.4f px", flow["fused"]) + fmt(" vs dsv %.4f px", flow["dsv"]));
}

void criterion_bullet_time(const PipelineConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir(), cfg.weights.neighbor_views);
  std::vector<DepthMap> depths;
  for (int t = 0; t < static_cast<int>(ds.cameras.size()); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "depth_%04d.pfm", t);
    depths.push_back(io::read_depth(cfg.fused_dir() / name, DepthConvention::MetricDepth));
  }
  const CameraView cam = midpoint_cameras(ds.cameras)[1];
  std::vector<SynthResult> out;
  for (int t = 0; t < static_cast<int>(depths.size()); ++t) out.push_back(synthesize(ds.views, depths, cam, t));
  std::size_t outside = 0, differing = 0;
  for (int y = 0; y < cam.height(); ++y)
    for (int x = 0; x < cam.width(); ++x) {
      bool in_fg = false;
      for (const auto& r : out) in_fg |= r.fg_virtual(x, y) != 0;
      if (in_fg) continue;
      ++outside;
      for (std::size_t t = 1; t < out.size(); ++t)
        if (out[t].image.rgb(x, y) != out[0].image.rgb(x, y)) {
          ++differing;
          break;
        }
    }
  report(7, outside > 0 && differing == 0,
         std::to_string(out.size()) + " time indices, " + std::to_string(outside) +
             " pixels outside every foreground footprint, " + std::to_string(differing) + " differ");
}

void criterion_determinism(const std::vector<PipelineConfig>& runs) {
  const auto ref = tree_checksums(runs[0].output_dir);
  std::string detail = std::to_string(ref.size()) + " files";
  bool same = !ref.empty();
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const auto other = tree_checksums(runs[i].output_dir);
    std::size_t diff = 0;
    for (const auto& [name, sum] : ref) {
      const auto it = other.find(name);
      if (it == other.end() || it->second != sum) ++diff;
    }
    diff += other.size() > ref.size() ? other.size() - ref.size() : 0;
    same &= diff == 0;
    detail += "; run " + std::to_string(i) + " (workers " + std::to_string(runs[i].workers) +
              "): " + std::to_string(diff) + " differ";
  }
  report(8, same, detail);
}

void criterion_io(const PipelineConfig& cfg, const fs::path& work) {
  const fs::path dir = work / "io_roundtrip";
  fs::create_directories(dir);
  const fs::path ds = cfg.dataset_dir();
  std::vector<std::string> bad;
  auto same = [&](const fs::path& a, const fs::path& b) {
    if (io::read_file_bytes(a) != io::read_file_bytes(b)) bad.push_back(a.filename().string());
  };
  // Files written by the library, read and written again.
  for (const char* name : {"frame_0000/gt_depth.pfm", "frame_0003/dmv.pfm", "frame_0002/dsv.pfm"}) {
    const fs::path out = dir / fs::path(name).filename();
    io::write_pfm(out, io::read_pfm(ds / name));
    same(ds / name, out);
  }
  io::write_flo(dir / "fwd.flo", io::read_flo(ds / "flows" / "fwd_0_2.flo", 0, 2));
  same(ds / "flows" / "fwd_0_2.flo", dir / "fwd.flo");
  io::write_cameras(dir / "cameras.json", io::read_cameras(ds / "cameras.json"));
  same(ds / "cameras.json", dir / "cameras.json");

  // Extreme values starting from memory: write, read, write.
  Grid<double> g(7, 5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> e(-30, 30);
  for (auto& v : g.data()) v = std::pow(10.0, e(rng)) * (rng() % 2 ? 1 : -1);
  io::write_pfm(dir / "a.pfm", g);
  io::write_pfm(dir / "b.pfm", io::read_pfm(dir / "a.pfm"));
  same(dir / "a.pfm", dir / "b.pfm");
  FlowField f(9, 4, 0, 1);
  for (std::size_t i = 0; i < f.du.size(); ++i) {
    f.du[i] = e(rng);
    f.dv[i] = -e(rng);
    f.valid[i] = i % 5 != 0;
  }
  io::write_flo(dir / "a.flo", f);
  io::write_flo(dir / "b.flo", io::read_flo(dir / "a.flo", 0, 1));
  same(dir / "a.flo", dir / "b.flo");
  const CameraView cam = CameraView::from_focal(
      4, 2, 123.456789, 63.25, 61.75, dvs::testing::random_rotation(rng, 1.0), {0.1, -0.2, 0.3}, 128, 120);
  io::write_cameras(dir / "a.json", {cam});
  io::write_cameras(dir / "b.json", io::read_cameras(dir / "a.json"));
  same(dir / "a.json", dir / "b.json");

  std::string detail = "PFM x4, .flo x2, camera JSON x2 byte-identical";
  if (!bad.empty()) {
    detail = "differ:";
    for (const auto& b : bad) detail += " " + b;
  }
  report(9, bad.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvs acceptance suite"};
  fs::path work = fs::temp_directory_path() / "dvs_acceptance";
  app.add_option("--work-dir", work, "scratch directory for generated data");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  std::error_code ec;
  fs::remove_all(work, ec);
  fs::create_directories(work);

  run(1, criterion_scale_invariance);
  run(2, criterion_gradients);

  // Three full pipeline runs: the reference, a rerun, and a multi-threaded run.
  std::vector<PipelineConfig> runs{acceptance_config(work / "run_a", 1), acceptance_config(work / "run_b", 1),
                                   acceptance_config(work / "run_c", kParallelWorkers)};
  bool pipelines_ok = true;
  for (const auto& cfg : runs) {
    try {
      const int rc = cmd_pipeline(cfg);
      if (rc != 0) throw std::runtime_error("pipeline returned " + std::to_string(rc));
    } catch (const std::exception& e) {
      std::printf("pipeline run in %s failed: %s\n", cfg.output_dir.string().c_str(), e.what());
      pipelines_ok = false;
    }
  }

  std::optional<FusionRun> fr;
  run(3, [&] {
    if (!pipelines_ok) throw std::runtime_error("dataset generation failed");
    FusionRun r{load_dataset(runs[0].dataset_dir(), runs[0].weights.neighbor_views), {}, 0.0};
    const auto t0 = Clock::now();
    r.full = fuse(r.ds.views, FusionWeights{}, FusionOptions{});
    r.fuse_seconds = seconds_since(t0);
    fr = std::move(r);
    criterion_fusion_recovery(*fr);
  });
  run(4, [&] {
    if (!fr) throw std::runtime_error("full fusion run unavailable");
    criterion_ablation(*fr);
  });
  run(5, criterion_static_warp);
  run(6, [&] { criterion_synthesis(runs[0]); });
  run(7, [&] { criterion_bullet_time(runs[0]); });
  run(8, [&] {
    if (!pipelines_ok) throw std::runtime_error("a pipeline run failed");
    criterion_determinism(runs);
  });
  run(9, [&] { criterion_io(runs[0], work); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
