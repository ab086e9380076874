#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pmr/motion/motion.hpp"

namespace pmr::camera {

using Vec2 = Eigen::Vector2d;

/// Pinhole camera; R and t map world points into the camera frame
/// (x right, y down, z forward).
struct CameraModel {
  double fx = 160.0, fy = 160.0, cx = 96.0, cy = 72.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 192, height = 144;

  void validate() const;
  Vec3 to_camera(const Vec3& world) const { return R * world + t; }
  Vec3 to_world(const Vec3& cam) const { return R.transpose() * (cam - t); }
};

/// Camera at `position` looking toward `target`, with world +z as up.
CameraModel look_at(const Vec3& position, const Vec3& target, double focal, int width, int height);

struct Projection {
  Vec2 uv = Vec2::Zero();
  bool valid = false;  // false when the point is at or behind the image plane
};

inline constexpr double kMinDepth = 1e-6;

Projection project(const CameraModel& cam, const Vec3& world);
std::vector<Projection> project(const CameraModel& cam, std::span<const Vec3> world);

// ---------------------------------------------------------------- keypoints

inline constexpr std::size_t kKeypointCount = 12;

/// Joint names in keypoint order: left/right hip, knee, ankle, shoulder, elbow, wrist.
const std::array<const char*, kKeypointCount>& keypoint_joint_names();
/// Skeleton joint index per keypoint.
std::array<int, kKeypointCount> keypoint_joint_indices(const motion::Skeleton& skel);

struct Keypoint {
  double u = 0.0, v = 0.0;
  bool visible = false;
};

struct KeypointFrame {
  std::array<Keypoint, kKeypointCount> kps{};
  double bbox_area = 0.0;  // pixels^2
};

struct KeypointTrack {
  std::vector<KeypointFrame> frames;
  std::array<double, kKeypointCount> kappa = [] {
    std::array<double, kKeypointCount> k{};
    k.fill(0.1);
    return k;
  }();

  /// epsilon_i^2 = bbox_area * kappa_i^2
  std::array<double, kKeypointCount> scale_sq(std::size_t frame) const;
};

/// Object keypoint similarity. A visible detection whose projection is
/// invalid contributes zero. Throws UndefinedMetric with no visible keypoint.
double oks(std::span<const Projection> projected, std::span<const Keypoint> detected,
           std::span<const double> scale_sq);

/// Projects the 12 keypoint joints of a pose.
std::vector<Projection> project_keypoints(const CameraModel& cam, const motion::Skeleton& skel,
                                          const motion::JointPose& pose);

// ---------------------------------------------------------------- masks

struct MaskRaster {
  int width = 0, height = 0;
  std::vector<std::uint8_t> data;  // row-major, 1 = foreground

  MaskRaster() = default;
  MaskRaster(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::uint8_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  void set(int x, int y, std::uint8_t v) { data[std::size_t(y) * width + x] = v; }
  std::size_t count() const;
};

/// Pixel containing an image point, or nullopt when outside the raster.
std::optional<std::pair<int, int>> pixel_of(const MaskRaster& mask, const Vec2& uv);

/// Fraction of valid projected samples that land on foreground pixels.
/// Samples outside the image count as outside. Throws UndefinedMetric when
/// no sample projects validly.
double mask_pose_similarity(const CameraModel& cam, std::span<const Vec3> samples,
                            const MaskRaster& mask);

// ---------------------------------------------------------------- surface

/// Deterministic rings of points on each bone capsule, bone order 1..J-1,
/// `samples_per_bone` points per bone. Sample i belongs to bone 1 + i / spb.
std::vector<Vec3> body_surface_samples(const motion::Skeleton& skel, const motion::JointPose& pose,
                                       int samples_per_bone);
std::vector<Vec3> body_surface_samples(const motion::Skeleton& skel, const motion::MotionFrame& frame,
                                       int samples_per_bone);

/// Silhouette of the capsule body: projected stadium per bone plus the
/// pixels hit by the surface samples.
MaskRaster render_silhouette(const CameraModel& cam, const motion::Skeleton& skel,
                             const motion::JointPose& pose, int samples_per_bone);

// ---------------------------------------------------------------- detection

struct FlawSegment {
  int start = 0;
  int end = 0;  // inclusive
  double mean_score = 0.0;
};

/// Frames scoring below `threshold` grouped into runs; runs separated by at
/// most `merge_gap` frames are merged. Undefined frames take the flag of the
/// nearest defined frame (ties flag the frame).
std::vector<FlawSegment> flag_flaws(std::span<const std::optional<double>> scores, double threshold,
                                    int merge_gap);

}  // namespace pmr::camera
