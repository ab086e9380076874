#include "pmr/motion/skeleton.hpp"

#include <algorithm>
#include <cmath>

#include "pmr/error.hpp"

namespace pmr::motion {

Skeleton::Skeleton(std::string id, std::vector<Joint> joints, std::vector<int> feet, int head)
    : id_(std::move(id)), joints_(std::move(joints)), feet_(std::move(feet)), head_(head) {
  validate();
}

void Skeleton::validate() {
  const int n = static_cast<int>(joints_.size());
  if (n < 1) throw ValidationError("skeleton has no joints");
  if (joints_[0].parent != -1) throw ValidationError("joint 0 must be the root");
  children_.assign(joints_.size(), {});
  for (int i = 1; i < n; ++i) {
    const int p = joints_[i].parent;
    // Parents must precede children, which also rules out cycles and
    // multiple roots.
    if (p < 0 || p >= i) {
      throw ValidationError("joint '" + joints_[i].name + "' has invalid parent index");
    }
    if (!joints_[i].offset.allFinite()) {
      throw ValidationError("joint '" + joints_[i].name + "' has a non-finite offset");
    }
    children_[p].push_back(i);
  }
  for (const auto& j : joints_) {
    if (!(j.radius > 0.0) || !std::isfinite(j.radius)) {
      throw ValidationError("joint '" + j.name + "' has non-positive capsule radius");
    }
  }
  for (int f : feet_) {
    if (f <= 0 || f >= n) throw ValidationError("foot joint index out of range");
  }
  if (head_ <= 0 || head_ >= n) throw ValidationError("head joint index out of range");

  end_effectors_.clear();
  for (int i = 1; i < n; ++i) {
    if (children_[i].empty()) end_effectors_.push_back(i);
  }
  contact_joints_ = feet_;
  for (int e : end_effectors_) {
    if (std::find(contact_joints_.begin(), contact_joints_.end(), e) == contact_joints_.end()) {
      contact_joints_.push_back(e);
    }
  }
  if (std::find(contact_joints_.begin(), contact_joints_.end(), head_) == contact_joints_.end()) {
    contact_joints_.push_back(head_);
  }
  std::sort(contact_joints_.begin(), contact_joints_.end());
}

bool Skeleton::is_foot(int j) const {
  return std::find(feet_.begin(), feet_.end(), j) != feet_.end();
}

double Skeleton::contact_radius(std::size_t j) const {
  const auto& ch = children_.at(j);
  if (!ch.empty()) return joints_[ch.front()].radius;
  return joints_[j].radius;
}

int Skeleton::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

bool Skeleton::is_ancestor_or_self(int j, int k) const {
  while (k >= 0) {
    if (k == j) return true;
    k = joints_[k].parent;
  }
  return false;
}

const Skeleton& desk_humanoid() {
  static const Skeleton skel = [] {
    // z up, x forward, y left. Standing height of the pelvis is 0.91 m with
    // the foot capsules resting on z = 0.
    std::vector<Joint> j = {
        {"pelvis", -1, {0, 0, 0}, 0.09},
        {"left_hip", 0, {0, 0.09, -0.07}, 0.04},
        {"right_hip", 0, {0, -0.09, -0.07}, 0.04},
        {"spine1", 0, {0, 0, 0.11}, 0.08},
        {"left_knee", 1, {0, 0, -0.40}, 0.06},
        {"right_knee", 2, {0, 0, -0.40}, 0.06},
        {"spine2", 3, {0, 0, 0.12}, 0.08},
        {"left_ankle", 4, {0, 0, -0.40}, 0.045},
        {"right_ankle", 5, {0, 0, -0.40}, 0.045},
        {"spine3", 6, {0, 0, 0.10}, 0.085},
        {"left_foot", 7, {0.14, 0, 0}, 0.04},
        {"right_foot", 8, {0.14, 0, 0}, 0.04},
        {"neck", 9, {0, 0, 0.16}, 0.04},
        {"left_collar", 9, {0, 0.09, 0.09}, 0.035},
        {"right_collar", 9, {0, -0.09, 0.09}, 0.035},
        {"head", 12, {0, 0, 0.15}, 0.07},
        {"left_shoulder", 13, {0, 0.10, 0.0}, 0.04},
        {"right_shoulder", 14, {0, -0.10, 0.0}, 0.04},
        {"left_elbow", 16, {0, 0.27, 0}, 0.04},
        {"right_elbow", 17, {0, -0.27, 0}, 0.04},
        {"left_wrist", 18, {0, 0.25, 0}, 0.035},
        {"right_wrist", 19, {0, -0.25, 0}, 0.035},
    };
    return Skeleton("desk_humanoid", std::move(j), {7, 8, 10, 11}, 15);
  }();
  return skel;
}

}  // namespace pmr::motion
