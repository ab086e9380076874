#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "pmr/motion/motion.hpp"
#include "pmr/motion/skeleton.hpp"

namespace pmr::motion {

using Json = nlohmann::json;

// Motion file: {"fps", "skeleton", "frames": [{"t": [3], "r": [[6] x J]}]}.
Json motion_to_json(const MotionSequence& seq);
MotionSequence motion_from_json(const Json& j);

// Skeleton file: {"joints": [{"name", "parent", "offset", "radius"}], "feet", "head"}.
// "parent" is the parent joint's name, or null for the root.
Json skeleton_to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const Json& j, const std::string& id);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

MotionSequence load_motion(const std::filesystem::path& path);
void save_motion(const std::filesystem::path& path, const MotionSequence& seq);
Skeleton load_skeleton(const std::filesystem::path& path);

/// Resolves a skeleton id: the bundled "desk_humanoid", or a path to a skeleton file.
Skeleton resolve_skeleton(const std::string& id_or_path);

}  // namespace pmr::motion
