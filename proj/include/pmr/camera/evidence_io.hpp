#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "pmr/camera/camera.hpp"

namespace pmr::camera {

using Json = nlohmann::json;

// Camera: {"fx","fy","cx","cy","R":[9] row-major,"t":[3],"w","h"}.
Json camera_to_json(const CameraModel& cam);
CameraModel camera_from_json(const Json& j);

// Keypoints: {"frames": [{"kps": [[u, v, vis] x 12], "bbox_area": a}]}; an
// optional "kappa": [12] overrides the falloff constants.
Json keypoints_to_json(const KeypointTrack& track);
KeypointTrack keypoints_from_json(const Json& j);

/// Reads P2 or P5; values > 127 are foreground.
MaskRaster read_pgm(const std::filesystem::path& path);
/// Writes P5 with foreground 255.
void write_pgm(const std::filesystem::path& path, const MaskRaster& mask);

/// mask_00000.pgm, mask_00001.pgm, ...
std::filesystem::path mask_filename(const std::filesystem::path& dir, std::size_t frame);
void write_mask_dir(const std::filesystem::path& dir, const std::vector<MaskRaster>& masks);
/// All *.pgm files of the directory in filename order.
std::vector<MaskRaster> read_mask_dir(const std::filesystem::path& dir);

}  // namespace pmr::camera
