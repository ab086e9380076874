#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pmr/camera/camera.hpp"
#include "pmr/motion/motion.hpp"

namespace pmr::bench {

struct BenchConfig {
  int samples_per_bone = 32;
  double threshold = 0.005;       // m; GP and Float values below this are ignored
  double contact_height = 0.005;  // m; foot contact for FS
  double ground_height = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static BenchConfig from_json(const nlohmann::json& j);
};

/// Surface samples and joint poses of every frame, computed once and shared
/// by the metrics.
struct SequenceGeometry {
  std::vector<motion::JointPose> poses;
  std::vector<std::vector<Vec3>> samples;
  int samples_per_bone = 0;
};

SequenceGeometry sequence_geometry(const motion::Skeleton& skel, const motion::MotionSequence& seq,
                                   int samples_per_bone);

// Per-frame traces. GP, Float and FS are in millimeters.
std::vector<double> ground_penetration_trace(const SequenceGeometry& g, const BenchConfig& cfg);
/// Frames with any penetration contribute 0.
std::vector<double> float_trace(const SequenceGeometry& g, const BenchConfig& cfg);
/// One entry per adjacent frame pair: mean horizontal displacement of the
/// feet in contact in both frames, or nullopt when no foot is.
std::vector<std::optional<double>> foot_skate_trace(const motion::Skeleton& skel, const SequenceGeometry& g,
                                                    const BenchConfig& cfg);
std::vector<double> self_penetration_trace(const motion::Skeleton& skel, const SequenceGeometry& g);

/// Bones are named by their child joint (bone k = parent(k) -> k). Bones
/// sharing a joint are adjacent: parent/child and siblings.
bool bones_adjacent(const motion::Skeleton& skel, int a, int b);
/// Strictly inside the capsule of bone b.
bool inside_capsule(const motion::Skeleton& skel, const motion::JointPose& pose, int b, const Vec3& p);

// Sequence aggregates.
double ground_penetration(const motion::Skeleton& skel, const motion::MotionSequence& seq, const BenchConfig& cfg = {});
double float_metric(const motion::Skeleton& skel, const motion::MotionSequence& seq, const BenchConfig& cfg = {});
double foot_skate(const motion::Skeleton& skel, const motion::MotionSequence& seq, const BenchConfig& cfg = {});
double self_penetration(const motion::Skeleton& skel, const motion::MotionSequence& seq, const BenchConfig& cfg = {});

struct ScoreTrace {
  std::vector<std::optional<double>> values;
  double mean = 0.0;
  std::size_t undefined = 0;
};

/// Frame-wise OKS against a keypoint track. Throws UndefinedMetric when no
/// frame is defined and ShapeError when frame counts differ.
ScoreTrace sequence_oks(const motion::Skeleton& skel, const motion::MotionSequence& seq,
                        const camera::KeypointTrack& track, const camera::CameraModel& cam);
ScoreTrace sequence_mps(const motion::Skeleton& skel, const motion::MotionSequence& seq,
                        const std::vector<camera::MaskRaster>& masks, const camera::CameraModel& cam,
                        int samples_per_bone);

struct Evidence {
  camera::CameraModel camera;
  std::optional<camera::KeypointTrack> keypoints;
  std::optional<std::vector<camera::MaskRaster>> masks;
};

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;

  BenchConfig config;
  std::size_t frames = 0;
  std::vector<double> sp, gp, flt;
  std::vector<std::optional<double>> fs;
  std::optional<ScoreTrace> oks, mps;
  double sp_mean = 0, gp_mean = 0, float_mean = 0, fs_mean = 0;

  nlohmann::json to_json() const;
  /// frame,sp,gp,float,fs,oks,mps; fs on row t is the pair (t, t+1).
  std::string to_csv() const;
};

MetricsReport evaluate(const motion::Skeleton& skel, const motion::MotionSequence& seq, const BenchConfig& cfg,
                       const Evidence* evidence = nullptr);

/// Plain-text table in the column order SP, GP, Float, FS, OKS, MPS.
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace pmr::bench
