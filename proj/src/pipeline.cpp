#include "dvs/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "dvs/flow.hpp"
#include "dvs/io.hpp"
#include "dvs/metrics.hpp"
#include "dvs/parallel.hpp"

namespace dvs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string flow_name(const char* dir, int a, int b) {
  return std::string("flows/") + dir + "_" + std::to_string(a) + "_" + std::to_string(b) + ".flo";
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_opt(const json& j, const char* key, std::optional<double>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<double>();
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& files, json extra = {}) {
  json m = extra.is_null() ? json::object() : extra;
  json entries = json::object();
  for (const auto& f : files) entries[f] = io::sha256_file(dir / f);
  m["files"] = entries;
  io::write_json(dir / "manifest.json", m);
}

// Every listed file must exist; the manifest, when present, must match byte-for-byte.
void verify_files(const fs::path& dir, const std::vector<std::string>& files, const char* what) {
  std::vector<std::string> problems;
  for (const auto& f : files)
    if (!fs::is_regular_file(dir / f)) problems.push_back("missing " + (dir / f).string());
  if (fs::is_regular_file(dir / "manifest.json")) {
    const json m = io::read_json(dir / "manifest.json");
    const json entries = m.value("files", json::object());
    for (const auto& [name, sum] : entries.items()) {
      if (!fs::is_regular_file(dir / name)) {
        const std::string line = "missing " + (dir / name).string();
        if (std::find(problems.begin(), problems.end(), line) == problems.end()) problems.push_back(line);
      } else if (io::sha256_file(dir / name) != sum.get<std::string>())
        problems.push_back("checksum mismatch " + (dir / name).string());
    }
  }
  if (problems.empty()) return;
  std::string msg = std::string(what) + " is incomplete:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw std::runtime_error(msg);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw std::runtime_error("cannot create output directory " + dir.string());
}

std::vector<int> effective_t_select(const PipelineConfig& cfg, int frames) {
  if (!cfg.t_select.empty()) return cfg.t_select;
  std::vector<int> all(frames);
  for (int t = 0; t < frames; ++t) all[t] = t;
  return all;
}

std::vector<RenderRequest> render_requests(int cameras, const std::vector<int>& ts) {
  std::vector<RenderRequest> out;
  for (int c = 0; c < cameras; ++c)
    for (int t : ts) out.push_back({c, t});
  return out;
}

Image quantized(const Image& img) {
  Image out = img;
  for (auto& c : out.rgb.data())
    for (int k = 0; k < 3; ++k) c[k] = std::round(std::clamp(c[k], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

std::vector<DepthMap> method_depths(const PipelineConfig& cfg, const Dataset& ds,
                                    const std::string& method) {
  std::vector<DepthMap> depths;
  const int n = static_cast<int>(ds.views.frames.size());
  if (method == "fused") {
    for (int t = 0; t < n; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "depth_%04d.pfm", t);
      depths.push_back(io::read_depth(cfg.fused_dir() / name, DepthConvention::MetricDepth));
    }
  } else if (method == "dsv") {
    for (const auto& f : ds.views.frames) depths.push_back(metricize_dsv(f.dsv, f.dmv, f.fg_mask));
  } else if (method == "gt") {
    depths = ds.gt_depth;
  } else {
    throw std::invalid_argument("unknown method '" + method + "'");
  }
  return depths;
}

std::vector<CameraView> virtual_cameras(const PipelineConfig& cfg, const Dataset& ds) {
  return cfg.virtual_cameras.empty() ? midpoint_cameras(ds.cameras) : cfg.virtual_cameras;
}

}  // namespace

void drop_loss(FusionWeights& weights, char term) {
  switch (term) {
    case 'g': weights.lambda_g = 0.0; break;
    case 'l': weights.lambda_l = 0.0; break;
    case 's': weights.lambda_s = 0.0; break;
    case 'e': weights.lambda_e = 0.0; break;
    default: throw std::invalid_argument(std::string("unknown loss term '") + term + "'");
  }
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.scene.reset();
  read_opt(j, "seed", c.seed);
  read_opt(j, "workers", c.workers);
  read_opt(j, "scene_name", c.scene_name);
  if (j.contains("output_dir")) c.output_dir = base_dir / j.at("output_dir").get<std::string>();
  if (j.contains("scene_dir")) c.scene_dir = base_dir / j.at("scene_dir").get<std::string>();
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    if (s.is_string() && s.get<std::string>() == "default")
      c.scene = default_acceptance_scene(c.seed);
    else
      c.scene = scene_from_json(s);
  } else if (c.scene_dir.empty()) {
    c.scene = default_acceptance_scene(c.seed);
  }

  if (j.contains("degradation")) {
    const json& d = j.at("degradation");
    if (d.contains("dsv")) {
      read_opt(d.at("dsv"), "a", c.degradation.dsv.a);
      read_opt(d.at("dsv"), "b", c.degradation.dsv.b);
      read_opt(d.at("dsv"), "warp_amp", c.degradation.dsv.warp_amp);
    }
    read_opt(d, "hole_dilation_px", c.degradation.hole_dilation_px);
    read_opt(d, "noise_frac", c.degradation.noise_frac);
  }
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    read_opt(f, "lambda_g", c.weights.lambda_g);
    read_opt(f, "lambda_l", c.weights.lambda_l);
    read_opt(f, "lambda_s", c.weights.lambda_s);
    read_opt(f, "lambda_e", c.weights.lambda_e);
    read_opt(f, "lambda_f", c.weights.lambda_f);
    read_opt(f, "neighbor_offsets", c.weights.neighbor_offsets);
    read_opt(f, "neighbor_views", c.weights.neighbor_views);
    read_opt(f, "levels", c.fusion.levels);
    read_opt(f, "iterations_per_level", c.fusion.iterations_per_level);
    read_opt(f, "initial_step", c.fusion.initial_step);
    read_opt(f, "step_growth", c.fusion.step_growth);
    read_opt(f, "max_backtracks", c.fusion.max_backtracks);
    read_opt(f, "armijo", c.fusion.armijo);
    read_opt(f, "fb_tau_px", c.fusion.fb_tau_px);
    read_opt(f, "min_scale", c.fusion.min_scale);
    read_opt(f, "max_scale", c.fusion.max_scale);
  }
  if (j.contains("synthesis")) {
    const json& s = j.at("synthesis");
    for (const auto& cam : s.value("virtual_cameras", json::array()))
      c.virtual_cameras.push_back(io::camera_from_json(cam));
    read_opt(s, "t_select", c.t_select);
    read_opt(s, "depth_band", c.synthesis.depth_band);
    read_opt(s, "bidir_tau_px", c.synthesis.bidir_tau_px);
    read_opt(s, "refine_depth", c.synthesis.refine_depth);
    if (s.contains("bwm")) {
      read_opt(s.at("bwm"), "radius", c.synthesis.bwm.radius);
      read_opt(s.at("bwm"), "sigma_s", c.synthesis.bwm.sigma_s);
      read_opt(s.at("bwm"), "sigma_r", c.synthesis.bwm.sigma_r);
    }
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    read_opt(e, "enabled", c.eval);
    read_opt(e, "methods", c.methods);
    if (e.contains("thresholds")) {
      const json& t = e.at("thresholds");
      read_opt(t, "max_rmse_full", c.thresholds.max_rmse_full);
      read_opt(t, "max_rmse_fg", c.thresholds.max_rmse_fg);
      read_opt(t, "max_flow_mag", c.thresholds.max_flow_mag);
      read_opt(t, "min_psnr", c.thresholds.min_psnr);
      read_opt(t, "min_ssim", c.thresholds.min_ssim);
      read_opt(t, "methods", c.thresholds.methods);
    }
  }
  return c;
}

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["scene_name"] = scene_name;
  j["output_dir"] = output_dir.string();
  if (scene) j["scene"] = scene_to_json(*scene);
  if (!scene_dir.empty()) j["scene_dir"] = scene_dir.string();
  j["degradation"] = {{"dsv", {{"a", degradation.dsv.a}, {"b", degradation.dsv.b},
                               {"warp_amp", degradation.dsv.warp_amp}}},
                      {"hole_dilation_px", degradation.hole_dilation_px},
                      {"noise_frac", degradation.noise_frac}};
  j["fusion"] = {{"lambda_g", weights.lambda_g},
                 {"lambda_l", weights.lambda_l},
                 {"lambda_s", weights.lambda_s},
                 {"lambda_e", weights.lambda_e},
                 {"lambda_f", weights.lambda_f},
                 {"neighbor_offsets", weights.neighbor_offsets},
                 {"neighbor_views", weights.neighbor_views},
                 {"levels", fusion.levels},
                 {"iterations_per_level", fusion.iterations_per_level},
                 {"initial_step", fusion.initial_step},
                 {"step_growth", fusion.step_growth},
                 {"max_backtracks", fusion.max_backtracks},
                 {"armijo", fusion.armijo},
                 {"fb_tau_px", fusion.fb_tau_px},
                 {"min_scale", fusion.min_scale},
                 {"max_scale", fusion.max_scale}};
  json cams = json::array();
  for (const auto& c : virtual_cameras) cams.push_back(io::camera_to_json(c));
  j["synthesis"] = {{"virtual_cameras", cams},
                    {"t_select", t_select},
                    {"depth_band", synthesis.depth_band},
                    {"bidir_tau_px", synthesis.bidir_tau_px},
                    {"refine_depth", synthesis.refine_depth},
                    {"bwm", {{"radius", synthesis.bwm.radius},
                             {"sigma_s", synthesis.bwm.sigma_s},
                             {"sigma_r", synthesis.bwm.sigma_r}}}};
  json th = {{"methods", thresholds.methods}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) th[k] = *v;
  };
  put("max_rmse_full", thresholds.max_rmse_full);
  put("max_rmse_fg", thresholds.max_rmse_fg);
  put("max_flow_mag", thresholds.max_flow_mag);
  put("min_psnr", thresholds.min_psnr);
  put("min_ssim", thresholds.min_ssim);
  j["eval"] = {{"enabled", eval}, {"methods", methods}, {"thresholds", th}};
  return j;
}

void PipelineConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  };
  if (scene) check([&] { scene->validate(); });
  if (!scene && scene_dir.empty()) problems.push_back("neither scene nor scene_dir is set");
  if (!scene && !scene_dir.empty() && !fs::is_directory(scene_dir))
    problems.push_back("scene_dir does not exist: " + scene_dir.string());
  check([&] { weights.validate(); });
  if (fusion.levels < 1) problems.push_back("fusion.levels must be >= 1");
  if (fusion.iterations_per_level < 0) problems.push_back("fusion.iterations_per_level must be >= 0");
  if (degradation.dsv.a <= 0.0) problems.push_back("degradation.dsv.a must be > 0");
  if (degradation.hole_dilation_px < 0) problems.push_back("degradation.hole_dilation_px must be >= 0");
  if (degradation.noise_frac < 0.0) problems.push_back("degradation.noise_frac must be >= 0");
  if (workers < 1) problems.push_back("workers must be >= 1");
  const int frames = scene ? scene->frame_count : -1;
  for (int t : t_select)
    if (t < 0 || (frames >= 0 && t >= frames))
      problems.push_back("t_select " + std::to_string(t) + " is not a frame index");
  for (const auto& m : methods)
    if (m != "fused" && m != "dsv" && m != "gt") problems.push_back("unknown method '" + m + "'");
  if (output_dir.empty()) problems.push_back("output_dir is empty");
  if (problems.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw std::invalid_argument(msg);
}

fs::path PipelineConfig::dataset_dir() const {
  return scene ? output_dir / "dataset" : scene_dir;
}

std::string frame_dir_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d", t);
  return buf;
}

std::vector<std::string> dataset_files(int frame_count, int neighbor_views) {
  std::vector<std::string> files{"cameras.json", "scene.json"};
  for (int t = 0; t < frame_count; ++t)
    for (const char* f : {"image.png", "gt_depth.pfm", "dsv.pfm", "dmv.pfm", "dmv_valid.png", "mask.png"})
      files.push_back(frame_dir_name(t) + "/" + f);
  for (int a = 0; a + neighbor_views < frame_count; ++a) {
    files.push_back(flow_name("fwd", a, a + neighbor_views));
    files.push_back(flow_name("bwd", a, a + neighbor_views));
  }
  return files;
}

void write_dataset(const SceneSpec& spec, const DegradationConfig& deg, std::uint64_t seed,
                   int neighbor_views, const fs::path& dir) {
  spec.validate();
  if (spec.frame_count < 1) throw std::invalid_argument("frame_count must be >= 1");
  ensure_dir(dir / "flows");
  io::write_cameras(dir / "cameras.json", spec.camera_path);
  io::write_json(dir / "scene.json", scene_to_json(spec));
  for (int t = 0; t < spec.frame_count; ++t) {
    const SceneInstant gt = render_gt(spec, t);
    const fs::path fd = dir / frame_dir_name(t);
    ensure_dir(fd);
    io::write_png(fd / "image.png", gt.gt_image);
    io::write_depth(fd / "gt_depth.pfm", gt.gt_depth);
    io::write_depth(fd / "dsv.pfm", degrade_to_dsv(gt, deg.dsv, mix_seed(seed, 2 * t)));
    const DepthMap dmv = degrade_to_dmv(gt, deg.hole_dilation_px, deg.noise_frac, mix_seed(seed, 2 * t + 1));
    io::write_depth(fd / "dmv.pfm", dmv);
    io::write_mask_png(fd / "dmv_valid.png", dmv.valid);
    io::write_mask_png(fd / "mask.png", gt.gt_mask);
  }
  for (int a = 0; a + neighbor_views < spec.frame_count; ++a) {
    const int b = a + neighbor_views;
    io::write_flo(dir / flow_name("fwd", a, b),
                  gt_flow_from_geometry(spec, a, spec.camera_path[a], b, spec.camera_path[b]));
    io::write_flo(dir / flow_name("bwd", a, b),
                  gt_flow_from_geometry(spec, b, spec.camera_path[b], a, spec.camera_path[a]));
  }
  write_manifest(dir, dataset_files(spec.frame_count, neighbor_views),
                 {{"frame_count", spec.frame_count}, {"neighbor_views", neighbor_views}});
}

Dataset load_dataset(const fs::path& dir, int neighbor_views) {
  if (!fs::is_regular_file(dir / "cameras.json"))
    throw std::runtime_error("dataset is incomplete:\n  missing " + (dir / "cameras.json").string());
  Dataset ds;
  ds.cameras = io::read_cameras(dir / "cameras.json");
  if (ds.cameras.empty()) throw std::runtime_error("dataset has no cameras: " + dir.string());
  verify_files(dir, dataset_files(static_cast<int>(ds.cameras.size()), neighbor_views), "dataset");
  ds.scene = scene_from_json(io::read_json(dir / "scene.json"));

  for (std::size_t t = 0; t < ds.cameras.size(); ++t) {
    const fs::path fd = dir / frame_dir_name(static_cast<int>(t));
    ViewFrame f{io::read_png(fd / "image.png"),
                io::read_depth(fd / "dsv.pfm", DepthConvention::NormalizedInverseDepth),
                io::read_depth(fd / "dmv.pfm", DepthConvention::MetricDepth, fd / "dmv_valid.png"),
                io::read_mask_png(fd / "mask.png"), ds.cameras[t]};
    ds.views.frames.push_back(std::move(f));
    ds.gt_depth.push_back(io::read_depth(fd / "gt_depth.pfm", DepthConvention::MetricDepth));
  }
  const int n = static_cast<int>(ds.cameras.size());
  for (int a = 0; a + neighbor_views < n; ++a) {
    const int b = a + neighbor_views;
    const int va = ds.cameras[a].view_id(), vb = ds.cameras[b].view_id();
    ds.views.flows.push_back(io::read_flo(dir / flow_name("fwd", a, b), va, vb));
    ds.views.flows.push_back(io::read_flo(dir / flow_name("bwd", a, b), vb, va));
  }
  ds.views.validate();
  return ds;
}

std::vector<CameraView> midpoint_cameras(const std::vector<CameraView>& cams) {
  std::vector<CameraView> out;
  for (std::size_t i = 0; i + 1 < cams.size(); ++i) {
    const CameraView& a = cams[i];
    const CameraView& b = cams[i + 1];
    // Rotations are shared on the default path; otherwise the first view's orientation is kept.
    out.emplace_back(1000 + static_cast<int>(i), a.time_index(), a.intrinsics(), a.rotation(),
                     0.5 * (a.center() + b.center()), a.width(), a.height());
  }
  return out;
}

std::string RenderRequest::stem() const {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "view_%02d_t%04d", camera, t_select);
  return buf;
}

void cmd_generate(const PipelineConfig& cfg) {
  cfg.validate();
  if (!cfg.scene) throw std::invalid_argument("generate: no scene spec configured");
  const fs::path dir = cfg.dataset_dir();
  spdlog::info("generate: {} frames into {}", cfg.scene->frame_count, dir.string());
  write_dataset(*cfg.scene, cfg.degradation, cfg.seed, cfg.weights.neighbor_views, dir);
}

void cmd_fuse(const PipelineConfig& cfg) {
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset_dir(), cfg.weights.neighbor_views);
  FusionOptions opts = cfg.fusion;
  opts.workers = cfg.workers;
  spdlog::info("fuse: {} frames, lambdas g={} l={} s={} e={}", ds.views.frames.size(),
               cfg.weights.lambda_g, cfg.weights.lambda_l, cfg.weights.lambda_s, cfg.weights.lambda_e);
  const FusionResult res = fuse(ds.views, cfg.weights, opts);

  const fs::path out = cfg.fused_dir();
  ensure_dir(out);
  std::vector<std::string> files;
  for (std::size_t t = 0; t < res.depths.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "depth_%04d.pfm", static_cast<int>(t));
    io::write_depth(out / name, res.depths[t]);
    files.push_back(name);
  }
  {
    std::ofstream csv(out / "trajectory.csv");
    csv << "level,iteration,L,L_g,L_l,L_s,L_e\n";
    char line[256];
    for (const auto& p : res.trajectory) {
      std::snprintf(line, sizeof(line), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.level,
                    p.iteration, p.loss.total, p.loss.global, p.loss.local, p.loss.scene_flow,
                    p.loss.smooth);
      csv << line;
    }
    if (!csv) throw std::runtime_error("cannot write trajectory.csv");
  }
  files.push_back("trajectory.csv");
  const auto& last = res.trajectory.back().loss;
  spdlog::info("fuse: final loss {:.6g} (g {:.4g}, l {:.4g}, s {:.4g}, e {:.4g})", last.total,
               last.global, last.local, last.scene_flow, last.smooth);
  write_manifest(out, files);
}

void cmd_render(const PipelineConfig& cfg) {
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset_dir(), cfg.weights.neighbor_views);
  const int n = static_cast<int>(ds.views.frames.size());
  if (std::find(cfg.methods.begin(), cfg.methods.end(), "fused") != cfg.methods.end()) {
    std::vector<std::string> need;
    for (int t = 0; t < n; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "depth_%04d.pfm", t);
      need.push_back(name);
    }
    verify_files(cfg.fused_dir(), need, "fused depth directory");
  }
  const auto ts = effective_t_select(cfg, n);
  for (int t : ts)
    if (t < 0 || t >= n) throw std::invalid_argument("t_select " + std::to_string(t) + " out of range");
  const auto cams = virtual_cameras(cfg, ds);
  const auto requests = render_requests(static_cast<int>(cams.size()), ts);

  const fs::path root = cfg.renders_dir();
  ensure_dir(root);
  std::vector<std::string> files;
  for (const auto& method : cfg.methods) {
    const std::vector<DepthMap> depths = method_depths(cfg, ds, method);
    ensure_dir(root / method);
    SynthOptions sopts = cfg.synthesis;
    sopts.workers = 1;
    std::vector<std::size_t> splatted(requests.size());
    parallel_for(static_cast<int>(requests.size()), cfg.workers, [&](int i) {
      const RenderRequest& r = requests[i];
      const SynthResult s = synthesize(ds.views, depths, cams[r.camera], r.t_select, sopts);
      io::write_png(root / method / (r.stem() + ".png"), s.image);
      io::write_mask_png(root / method / (r.stem() + "_valid.png"), s.splatted);
      splatted[i] = count_true(s.splatted);
    });
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const std::size_t total = static_cast<std::size_t>(cams[requests[i].camera].width()) *
                                cams[requests[i].camera].height();
      if (splatted[i] * 100 < total)
        spdlog::warn("render: virtual camera {} sees almost none of the scene (behind it?)",
                     requests[i].camera);
      files.push_back(method + "/" + requests[i].stem() + ".png");
      files.push_back(method + "/" + requests[i].stem() + "_valid.png");
    }
    spdlog::info("render: {} views for method {}", requests.size(), method);
  }
  json cam_json = json::array();
  for (const auto& c : cams) cam_json.push_back(io::camera_to_json(c));
  io::write_json(root / "cameras.json", cam_json);
  json req_json = json::array();
  for (const auto& r : requests) req_json.push_back({{"camera", r.camera}, {"t_select", r.t_select}});
  io::write_json(root / "requests.json", req_json);
  files.push_back("cameras.json");
  files.push_back("requests.json");
  write_manifest(root, files, {{"methods", cfg.methods}});
}

int cmd_eval(const PipelineConfig& cfg) {
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset_dir(), cfg.weights.neighbor_views);
  if (!ds.scene) throw std::runtime_error("eval: dataset has no scene.json for ground truth");
  const fs::path root = cfg.renders_dir();
  if (!fs::is_directory(root) || fs::is_empty(root))
    throw std::runtime_error("eval: render directory is empty: " + root.string());
  verify_files(root, {"cameras.json", "requests.json", "manifest.json"}, "render directory");

  std::vector<CameraView> cams;
  for (const auto& c : io::read_json(root / "cameras.json")) cams.push_back(io::camera_from_json(c));
  std::vector<RenderRequest> requests;
  for (const auto& r : io::read_json(root / "requests.json"))
    requests.push_back({r.at("camera").get<int>(), r.at("t_select").get<int>()});
  if (requests.empty()) throw std::runtime_error("eval: no renders listed in requests.json");
  const int n = static_cast<int>(ds.views.frames.size());

  // Every method must hold the same frame set; enumerate all gaps before computing.
  std::vector<std::string> expected;
  for (const auto& m : cfg.methods)
    for (const auto& r : requests) {
      if (r.camera < 0 || r.camera >= static_cast<int>(cams.size()) || r.t_select < 0 || r.t_select >= n)
        throw std::runtime_error("eval: render request " + r.stem() + " does not match the dataset");
      expected.push_back(m + "/" + r.stem() + ".png");
      expected.push_back(m + "/" + r.stem() + "_valid.png");
    }
  verify_files(root, expected, "render directory (mismatched frame sets)");
  if (std::find(cfg.methods.begin(), cfg.methods.end(), "fused") != cfg.methods.end()) {
    std::vector<std::string> need;
    for (int t = 0; t < n; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "depth_%04d.pfm", t);
      need.push_back(name);
    }
    verify_files(cfg.fused_dir(), need, "fused depth directory");
  }

  // Ground truth for every virtual view, quantized like the renders.
  std::vector<Image> gt_images(requests.size());
  parallel_for(static_cast<int>(requests.size()), cfg.workers, [&](int i) {
    gt_images[i] = quantized(render_view(*ds.scene, cams[requests[i].camera], requests[i].t_select).gt_image);
  });

  struct Row {
    std::string frame;
    DepthEvalReport depth;
    double flow = 0, psnr = 0, ssim = 0;
    int renders = 0;
  };
  std::map<std::string, std::vector<Row>> table;
  json report = json::object();
  int violations = 0;
  for (const auto& method : cfg.methods) {
    const std::vector<DepthMap> depths = method_depths(cfg, ds, method);
    std::vector<SynthEvalReport> synth(requests.size());
    parallel_for(static_cast<int>(requests.size()), cfg.workers, [&](int i) {
      const Image img = io::read_png(root / method / (requests[i].stem() + ".png"));
      const BoolGrid valid = io::read_mask_png(root / method / (requests[i].stem() + "_valid.png"));
      SynthEvalReport rep = synth_eval(img, gt_images[i]);
      // PSNR and SSIM exclude completed pixels.
      rep.psnr = psnr(img, gt_images[i], &valid);
      rep.ssim = ssim(img, gt_images[i], &valid);
      synth[i] = rep;
    });
    std::vector<Row> rows;
    Row mean{"mean", {}, 0, 0, 0, 0};
    double se_full = 0, se_fg = 0;
    for (int t = 0; t < n; ++t) {
      Row row;
      row.frame = std::to_string(t);
      row.depth = depth_rmse(depths[t], ds.gt_depth[t], ds.views.frames[t].fg_mask);
      for (std::size_t i = 0; i < requests.size(); ++i) {
        if (requests[i].t_select != t) continue;
        row.flow += synth[i].mean_flow_mag;
        row.psnr += synth[i].psnr;
        row.ssim += synth[i].ssim;
        ++row.renders;
      }
      mean.flow += row.flow;
      mean.psnr += row.psnr;
      mean.ssim += row.ssim;
      mean.renders += row.renders;
      if (row.renders) {
        row.flow /= row.renders;
        row.psnr /= row.renders;
        row.ssim /= row.renders;
      }
      se_full += row.depth.rmse_full * row.depth.rmse_full * row.depth.count_full;
      se_fg += row.depth.rmse_fg * row.depth.rmse_fg * row.depth.count_fg;
      mean.depth.count_full += row.depth.count_full;
      mean.depth.count_fg += row.depth.count_fg;
      rows.push_back(row);
    }
    mean.depth.rmse_full = std::sqrt(se_full / mean.depth.count_full);
    mean.depth.rmse_fg = std::sqrt(se_fg / mean.depth.count_fg);
    mean.flow /= mean.renders;
    mean.psnr /= mean.renders;
    mean.ssim /= mean.renders;
    rows.push_back(mean);

    json mj = json::array();
    for (const auto& r : rows)
      mj.push_back({{"frame", r.frame}, {"depth", r.depth.to_json()}, {"flow_mag", r.flow},
                    {"psnr", r.psnr}, {"ssim", r.ssim}, {"renders", r.renders}});
    report[method] = mj;

    const auto& th = cfg.thresholds;
    if (std::find(th.methods.begin(), th.methods.end(), method) != th.methods.end()) {
      auto check = [&](const std::optional<double>& bound, double v, bool upper, const char* name) {
        if (!bound) return;
        if (upper ? v <= *bound : v >= *bound) return;
        spdlog::error("eval: {} {} = {:.6g} violates {} {:.6g}", method, name, v,
                      upper ? "max" : "min", *bound);
        ++violations;
      };
      check(th.max_rmse_full, mean.depth.rmse_full, true, "rmse_full");
      check(th.max_rmse_fg, mean.depth.rmse_fg, true, "rmse_fg");
      check(th.max_flow_mag, mean.flow, true, "flow_mag");
      check(th.min_psnr, mean.psnr, false, "psnr");
      check(th.min_ssim, mean.ssim, false, "ssim");
    }
    table[method] = std::move(rows);
  }

  ensure_dir(cfg.eval_dir());
  std::ofstream csv(cfg.eval_dir() / "report.csv");
  csv << "scene,method,frame,rmse_full,rmse_fg,flow_mag,psnr,ssim\n";
  for (const auto& method : cfg.methods)
    for (const auto& r : table[method])
      csv << cfg.scene_name << ',' << method << ',' << r.frame << ',' << fmt_num(r.depth.rmse_full)
          << ',' << fmt_num(r.depth.rmse_fg) << ',' << fmt_num(r.flow) << ',' << fmt_num(r.psnr)
          << ',' << fmt_num(r.ssim) << '\n';
  if (!csv) throw std::runtime_error("cannot write eval report");
  io::write_json(cfg.eval_dir() / "report.json", report);
  spdlog::info("eval: wrote {} ({} threshold violations)", (cfg.eval_dir() / "report.csv").string(),
               violations);
  return violations;
}

int cmd_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.scene) cmd_generate(cfg);
  cmd_fuse(cfg);
  cmd_render(cfg);
  return cfg.eval ? cmd_eval(cfg) : 0;
}

}  // namespace dvs
