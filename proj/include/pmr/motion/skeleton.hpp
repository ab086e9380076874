#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pmr/motion/rotation.hpp"

namespace pmr::motion {

struct Joint {
  std::string name;
  int parent = -1;  // -1 only for the root
  Vec3 offset = Vec3::Zero();  // meters, parent frame
  double radius = 0.05;  // capsule radius of the bone ending at this joint
};

/// Kinematic tree in topological order (parents precede children). Bone k
/// is the segment parent(k) -> k, rigidly attached to the parent's frame.
class Skeleton {
 public:
  Skeleton() = default;
  Skeleton(std::string id, std::vector<Joint> joints, std::vector<int> feet, int head);

  const std::string& id() const { return id_; }
  std::size_t joint_count() const { return joints_.size(); }
  const Joint& joint(std::size_t i) const { return joints_.at(i); }
  const std::vector<Joint>& joints() const { return joints_; }
  int parent(std::size_t i) const { return joints_[i].parent; }
  const std::vector<int>& children(std::size_t i) const { return children_[i]; }

  const std::vector<int>& feet() const { return feet_; }
  int head() const { return head_; }
  /// Leaf joints (no children).
  const std::vector<int>& end_effectors() const { return end_effectors_; }
  /// Feet, wrists/hands and head: points that may touch the ground in simulation.
  const std::vector<int>& contact_joints() const { return contact_joints_; }
  bool is_foot(int j) const;

  /// Radius of the contact sphere centred on joint j.
  double contact_radius(std::size_t j) const;

  int index_of(std::string_view name) const;  // -1 if absent

  /// True if j is an ancestor of k or j == k.
  bool is_ancestor_or_self(int j, int k) const;

 private:
  void validate();

  std::string id_;
  std::vector<Joint> joints_;
  std::vector<std::vector<int>> children_;
  std::vector<int> feet_;
  int head_ = -1;
  std::vector<int> end_effectors_;
  std::vector<int> contact_joints_;
};

/// The bundled 22-joint humanoid mirroring the SMPL body topology.
const Skeleton& desk_humanoid();

inline constexpr std::size_t kSmplJoints = 22;

}  // namespace pmr::motion
