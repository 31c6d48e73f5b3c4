#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dvs/depth_map.hpp"
#include "dvs/flow.hpp"
#include "dvs/io.hpp"
#include "test_util.hpp"

using namespace dvs;
namespace fs = std::filesystem;

TEST(DepthMap, InvariantsPerConvention) {
  DepthMap metric = DepthMap::complete_from(Grid<double>(4, 3, 2.0), DepthConvention::MetricDepth);
  EXPECT_NO_THROW(metric.check_invariants());
  metric.values(1, 1) = -1.0;
  EXPECT_THROW(metric.check_invariants(), std::invalid_argument);
  metric.valid(1, 1) = 0;
  EXPECT_NO_THROW(metric.check_invariants());

  DepthMap inv = DepthMap::complete_from(Grid<double>(4, 3, 0.5), DepthConvention::NormalizedInverseDepth);
  EXPECT_NO_THROW(inv.check_invariants());
  inv.values(0, 0) = 1.5;
  EXPECT_THROW(inv.check_invariants(), std::invalid_argument);
  EXPECT_THROW(DepthMap::complete_from(Grid<double>(2, 2, 0.0), DepthConvention::MetricDepth),
               std::invalid_argument);
}

TEST(DepthMap, CountsValidPixels) {
  DepthMap d(5, 4);
  EXPECT_EQ(d.valid_count(), 0u);
  d.valid(2, 2) = 1;
  d.values(2, 2) = 1.0;
  EXPECT_EQ(d.valid_count(), 1u);
  EXPECT_FALSE(d.complete());
  EXPECT_FALSE(d.is_valid(-1, 0));
}

TEST(Io, PfmRoundTripIsByteIdentical) {
  const auto dir = dvs::testing::temp_dir("pfm");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 9.0);
  Grid<double> g(17, 9);
  for (auto& v : g.data()) v = static_cast<float>(u(rng));
  io::write_pfm(dir / "a.pfm", g);
  const Grid<double> back = io::read_pfm(dir / "a.pfm");
  EXPECT_EQ(back, g);
  io::write_pfm(dir / "b.pfm", back);
  EXPECT_EQ(io::read_file_bytes(dir / "a.pfm"), io::read_file_bytes(dir / "b.pfm"));
}

TEST(Io, PfmStoresRowsBottomToTop) {
  const auto dir = dvs::testing::temp_dir("pfm_rows");
  Grid<double> g(2, 2);
  g(0, 0) = 1;
  g(1, 0) = 2;
  g(0, 1) = 3;
  g(1, 1) = 4;
  io::write_pfm(dir / "r.pfm", g);
  const std::string bytes = io::read_file_bytes(dir / "r.pfm");
  const std::string header = "Pf\n2 2\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  float first;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  EXPECT_EQ(first, 3.0f);
}

TEST(Io, DepthWithSidecarKeepsValidity) {
  const auto dir = dvs::testing::temp_dir("depth");
  DepthMap d = DepthMap::complete_from(Grid<double>(8, 6, 2.5), DepthConvention::MetricDepth);
  d.valid(3, 3) = 0;
  d.values(3, 3) = 0.0;
  io::write_depth(dir / "d.pfm", d);
  io::write_mask_png(dir / "d_valid.png", d.valid);
  const DepthMap back = io::read_depth(dir / "d.pfm", DepthConvention::MetricDepth, dir / "d_valid.png");
  EXPECT_EQ(back.valid, d.valid);
  EXPECT_EQ(back.values, d.values);
}

TEST(Io, FloRoundTripIsByteIdentical) {
  const auto dir = dvs::testing::temp_dir("flo");
  FlowField f(11, 7, 2, 3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-6, 6);
  for (std::size_t i = 0; i < f.du.size(); ++i) {
    f.du[i] = static_cast<float>(u(rng));
    f.dv[i] = static_cast<float>(u(rng));
  }
  f.valid(4, 4) = 0;
  f.du(4, 4) = f.dv(4, 4) = 0.0;
  io::write_flo(dir / "a.flo", f);
  const FlowField back = io::read_flo(dir / "a.flo", 2, 3);
  EXPECT_EQ(back.du, f.du);
  EXPECT_EQ(back.dv, f.dv);
  EXPECT_EQ(back.valid, f.valid);
  EXPECT_EQ(back.src_view, 2);
  EXPECT_EQ(back.dst_view, 3);
  io::write_flo(dir / "b.flo", back);
  EXPECT_EQ(io::read_file_bytes(dir / "a.flo"), io::read_file_bytes(dir / "b.flo"));
  EXPECT_EQ(io::read_file_bytes(dir / "a.flo").substr(0, 4), "PIEH");
}

TEST(Io, PngRoundTripOfQuantizedImage) {
  const auto dir = dvs::testing::temp_dir("png");
  Image img = dvs::testing::textured_image(13, 9);
  for (auto& c : img.rgb.data()) c = (c * 255.0).array().round().matrix() / 255.0;
  io::write_png(dir / "a.png", img);
  const Image back = io::read_png(dir / "a.png");
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR((back.rgb[i] - img.rgb[i]).norm(), 0.0, 1e-12);
  io::write_png(dir / "b.png", back);
  EXPECT_EQ(io::read_file_bytes(dir / "a.png"), io::read_file_bytes(dir / "b.png"));
}

TEST(Io, CameraJsonRoundTripIsByteIdentical) {
  const auto dir = dvs::testing::temp_dir("cams");
  std::mt19937_64 rng(4);
  std::vector<CameraView> cams;
  for (int i = 0; i < 3; ++i)
    cams.push_back(dvs::testing::simple_camera(i, {0.1 * i, -0.02, 0.3}, 64, 48, 97.5,
                                               dvs::testing::random_rotation(rng)));
  io::write_cameras(dir / "a.json", cams);
  const auto back = io::read_cameras(dir / "a.json");
  ASSERT_EQ(back.size(), cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    EXPECT_EQ(back[i].intrinsics(), cams[i].intrinsics());
    EXPECT_EQ(back[i].rotation(), cams[i].rotation());
    EXPECT_EQ(back[i].center(), cams[i].center());
    EXPECT_EQ(back[i].view_id(), cams[i].view_id());
  }
  io::write_cameras(dir / "b.json", back);
  EXPECT_EQ(io::read_file_bytes(dir / "a.json"), io::read_file_bytes(dir / "b.json"));
}

TEST(Io, CameraLoaderRejectsNonOrthonormalRotation) {
  nlohmann::json j = io::camera_to_json(dvs::testing::simple_camera(0, {0, 0, 0}));
  j["R"][1] = 1e-3;
  EXPECT_THROW(io::camera_from_json(j), std::invalid_argument);
}

TEST(Io, MissingFileThrows) {
  EXPECT_ANY_THROW(io::read_pfm("/nonexistent/x.pfm"));
  EXPECT_ANY_THROW(io::read_flo("/nonexistent/x.flo", 0, 1));
  EXPECT_ANY_THROW(io::read_png("/nonexistent/x.png"));
}

TEST(Io, Sha256OfKnownContent) {
  const auto dir = dvs::testing::temp_dir("sha");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  EXPECT_EQ(io::sha256_file(dir / "abc.txt"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
