#include "pmr/camera/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pmr/error.hpp"

namespace pmr::camera {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValidationError("camera image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw ValidationError("camera principal point must lie inside the image");
  }
  if (!motion::is_rotation(R, 1e-6)) throw ValidationError("camera R is not a rotation");
  if (!t.allFinite()) throw ValidationError("camera t is not finite");
}

CameraModel look_at(const Vec3& position, const Vec3& target, double focal, int width, int height) {
  const Vec3 forward = (target - position).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) right = Vec3::UnitX();
  right.normalize();
  const Vec3 down = forward.cross(right);
  CameraModel cam;
  cam.fx = cam.fy = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.R.row(0) = right.transpose();
  cam.R.row(1) = down.transpose();
  cam.R.row(2) = forward.transpose();
  cam.t = -cam.R * position;
  return cam;
}

Projection project(const CameraModel& cam, const Vec3& world) {
  const Vec3 c = cam.to_camera(world);
  Projection p;
  if (!(c.z() > kMinDepth)) return p;
  p.uv = Vec2(cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy);
  p.valid = true;
  return p;
}

std::vector<Projection> project(const CameraModel& cam, std::span<const Vec3> world) {
  std::vector<Projection> out;
  out.reserve(world.size());
  for (const auto& w : world) out.push_back(project(cam, w));
  return out;
}

const std::array<const char*, kKeypointCount>& keypoint_joint_names() {
  static const std::array<const char*, kKeypointCount> names = {
      "left_hip",      "right_hip",      "left_knee",  "right_knee",  "left_ankle", "right_ankle",
      "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist"};
  return names;
}

std::array<int, kKeypointCount> keypoint_joint_indices(const motion::Skeleton& skel) {
  std::array<int, kKeypointCount> idx{};
  const auto& names = keypoint_joint_names();
  for (std::size_t i = 0; i < kKeypointCount; ++i) {
    idx[i] = skel.index_of(names[i]);
    if (idx[i] < 0) throw ValidationError(std::string("skeleton lacks keypoint joint ") + names[i]);
  }
  return idx;
}

std::array<double, kKeypointCount> KeypointTrack::scale_sq(std::size_t frame) const {
  std::array<double, kKeypointCount> s{};
  const double area = frames.at(frame).bbox_area;
  for (std::size_t i = 0; i < kKeypointCount; ++i) s[i] = area * kappa[i] * kappa[i];
  return s;
}

double oks(std::span<const Projection> projected, std::span<const Keypoint> detected,
           std::span<const double> scale_sq) {
  if (projected.size() != detected.size() || scale_sq.size() != detected.size()) {
    throw ShapeError("oks: keypoint counts differ");
  }
  double num = 0.0;
  int visible = 0;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    if (!detected[i].visible) continue;
    ++visible;
    if (!projected[i].valid) continue;
    const double d2 = (projected[i].uv - Vec2(detected[i].u, detected[i].v)).squaredNorm();
    num += std::exp(-d2 / (2.0 * scale_sq[i]));
  }
  if (visible == 0) throw UndefinedMetric("oks: no visible keypoints");
  return num / visible;
}

std::vector<Projection> project_keypoints(const CameraModel& cam, const motion::Skeleton& skel,
                                          const motion::JointPose& pose) {
  const auto idx = keypoint_joint_indices(skel);
  std::vector<Projection> out;
  out.reserve(kKeypointCount);
  for (int j : idx) out.push_back(project(cam, pose.positions[j]));
  return out;
}

std::size_t MaskRaster::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

std::optional<std::pair<int, int>> pixel_of(const MaskRaster& mask, const Vec2& uv) {
  if (!(uv.x() >= 0.0) || !(uv.y() >= 0.0)) return std::nullopt;
  const double fx = std::floor(uv.x());
  const double fy = std::floor(uv.y());
  if (fx >= mask.width || fy >= mask.height) return std::nullopt;
  return std::make_pair(static_cast<int>(fx), static_cast<int>(fy));
}

double mask_pose_similarity(const CameraModel& cam, std::span<const Vec3> samples,
                            const MaskRaster& mask) {
  if (mask.width != cam.width || mask.height != cam.height) {
    throw ShapeError("mask dimensions do not match the camera image");
  }
  std::size_t valid = 0, inside = 0;
  for (const auto& s : samples) {
    const Projection p = project(cam, s);
    if (!p.valid) continue;
    ++valid;
    if (auto px = pixel_of(mask, p.uv); px && mask.at(px->first, px->second)) ++inside;
  }
  if (valid == 0) throw UndefinedMetric("mask_pose_similarity: no valid projected samples");
  return static_cast<double>(inside) / static_cast<double>(valid);
}

namespace {

// Fixed unit vectors perpendicular to a bone direction, in the parent frame.
void ring_basis(const Vec3& dir, Vec3& u, Vec3& v) {
  int axis = 0;
  for (int k = 1; k < 3; ++k) {
    if (std::abs(dir[k]) < std::abs(dir[axis])) axis = k;
  }
  u = dir.cross(Vec3::Unit(axis)).normalized();
  v = dir.cross(u);
}

}  // namespace

std::vector<Vec3> body_surface_samples(const motion::Skeleton& skel, const motion::JointPose& pose,
                                       int samples_per_bone) {
  if (samples_per_bone <= 0) throw ValidationError("samples_per_bone must be positive");
  const int rings = (samples_per_bone % 8 == 0) ? samples_per_bone / 8 : 1;
  const int per_ring = samples_per_bone / rings;
  std::vector<Vec3> out;
  out.reserve((skel.joint_count() - 1) * samples_per_bone);
  for (std::size_t b = 1; b < skel.joint_count(); ++b) {
    const int p = skel.parent(b);
    const Vec3& off = skel.joint(b).offset;
    const double len = off.norm();
    const Vec3 dir = len > 1e-12 ? Vec3(off / len) : Vec3::UnitZ();
    Vec3 u, v;
    ring_basis(dir, u, v);
    const double r = skel.joint(b).radius;
    const Mat3& W = pose.rotations[p];
    for (int ring = 0; ring < rings; ++ring) {
      const double s = (ring + 0.5) / rings;
      for (int k = 0; k < per_ring; ++k) {
        const double phi = 2.0 * M_PI * k / per_ring;
        const Vec3 local = s * off + r * (std::cos(phi) * u + std::sin(phi) * v);
        out.push_back(pose.positions[p] + W * local);
      }
    }
  }
  return out;
}

std::vector<Vec3> body_surface_samples(const motion::Skeleton& skel, const motion::MotionFrame& frame,
                                       int samples_per_bone) {
  return body_surface_samples(skel, motion::forward_kinematics(skel, frame), samples_per_bone);
}

MaskRaster render_silhouette(const CameraModel& cam, const motion::Skeleton& skel,
                             const motion::JointPose& pose, int samples_per_bone) {
  MaskRaster mask(cam.width, cam.height);
  for (std::size_t b = 1; b < skel.joint_count(); ++b) {
    const Vec3 a = cam.to_camera(pose.positions[skel.parent(b)]);
    const Vec3 c = cam.to_camera(pose.positions[b]);
    if (!(a.z() > kMinDepth) || !(c.z() > kMinDepth)) continue;
    const Vec2 pa(cam.fx * a.x() / a.z() + cam.cx, cam.fy * a.y() / a.z() + cam.cy);
    const Vec2 pc(cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy);
    const double rad = cam.fx * skel.joint(b).radius / std::min(a.z(), c.z());
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(pa.x(), pc.x()) - rad)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max(pa.x(), pc.x()) + rad)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(pa.y(), pc.y()) - rad)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max(pa.y(), pc.y()) + rad)));
    const Vec2 seg = pc - pa;
    const double seg2 = seg.squaredNorm();
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q(x + 0.5, y + 0.5);
        const double s = seg2 > 0.0 ? std::clamp((q - pa).dot(seg) / seg2, 0.0, 1.0) : 0.0;
        if ((q - (pa + s * seg)).squaredNorm() <= rad * rad) mask.set(x, y, 1);
      }
    }
  }
  for (const auto& s : body_surface_samples(skel, pose, samples_per_bone)) {
    const Projection p = project(cam, s);
    if (!p.valid) continue;
    if (auto px = pixel_of(mask, p.uv)) mask.set(px->first, px->second, 1);
  }
  return mask;
}

std::vector<FlawSegment> flag_flaws(std::span<const std::optional<double>> scores, double threshold,
                                    int merge_gap) {
  const int n = static_cast<int>(scores.size());
  std::vector<char> flagged(n, 0);
  std::vector<int> defined;
  for (int i = 0; i < n; ++i) {
    if (scores[i]) {
      defined.push_back(i);
      flagged[i] = *scores[i] < threshold;
    }
  }
  if (defined.empty()) return {};
  for (int i = 0; i < n; ++i) {
    if (scores[i]) continue;
    auto it = std::lower_bound(defined.begin(), defined.end(), i);
    const int right = it == defined.end() ? -1 : *it;
    const int left = it == defined.begin() ? -1 : *(it - 1);
    if (left < 0) {
      flagged[i] = flagged[right];
    } else if (right < 0) {
      flagged[i] = flagged[left];
    } else if (i - left < right - i) {
      flagged[i] = flagged[left];
    } else if (right - i < i - left) {
      flagged[i] = flagged[right];
    } else {
      flagged[i] = flagged[left] || flagged[right];
    }
  }

  std::vector<FlawSegment> segs;
  for (int i = 0; i < n;) {
    if (!flagged[i]) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < n && flagged[j + 1]) ++j;
    if (!segs.empty() && i - segs.back().end - 1 <= merge_gap) {
      segs.back().end = j;
    } else {
      segs.push_back({i, j, 0.0});
    }
    i = j + 1;
  }
  for (auto& s : segs) {
    double sum = 0.0;
    int cnt = 0;
    for (int i = s.start; i <= s.end; ++i) {
      if (scores[i]) {
        sum += *scores[i];
        ++cnt;
      }
    }
    s.mean_score = cnt > 0 ? sum / cnt : 0.0;
  }
  return segs;
}

}  // namespace pmr::camera
