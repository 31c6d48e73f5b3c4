#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvs/camera.hpp"
#include "dvs/depth_map.hpp"
#include "dvs/flow.hpp"
#include "dvs/image.hpp"

namespace dvs::io {

// PFM, single channel, little-endian (scale -1.0), rows stored bottom to top.
// Invalid pixels are written as 0.
void write_pfm(const std::filesystem::path& path, const Grid<double>& values);
Grid<double> read_pfm(const std::filesystem::path& path);

void write_depth(const std::filesystem::path& path, const DepthMap& depth);
// Validity comes from the optional sidecar mask; otherwise every finite value is valid.
DepthMap read_depth(const std::filesystem::path& path, DepthConvention conv,
                    const std::filesystem::path& valid_png = {});

// Middlebury .flo: "PIEH", int32 width, int32 height, interleaved float32 (du, dv).
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path, int src_view, int dst_view);

// 8-bit PNG. Images are RGB without alpha; masks are grayscale with 255 = true.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BoolGrid& mask);
BoolGrid read_mask_png(const std::filesystem::path& path);

// Camera sets: array of {view_id, time_index, K, R, C, width, height}, matrices row-major.
constexpr double kLoaderOrthonormalTol = 1e-6;
nlohmann::json camera_to_json(const CameraView& cam);
CameraView camera_from_json(const nlohmann::json& j);
void write_cameras(const std::filesystem::path& path, const std::vector<CameraView>& cams);
std::vector<CameraView> read_cameras(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dvs::io
