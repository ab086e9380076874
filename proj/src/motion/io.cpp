#include "pmr/motion/io.hpp"

#include <fstream>

#include "pmr/error.hpp"

namespace pmr::motion {

namespace {

Vec3 vec3_from(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(std::string(what) + ": expected 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

Json motion_to_json(const MotionSequence& seq) {
  Json frames = Json::array();
  for (const auto& f : seq.frames) {
    Json r = Json::array();
    for (const auto& q : f.rotations) r.push_back({q[0], q[1], q[2], q[3], q[4], q[5]});
    frames.push_back({{"t", {f.translation.x(), f.translation.y(), f.translation.z()}}, {"r", r}});
  }
  return {{"fps", seq.fps}, {"skeleton", seq.skeleton_id}, {"frames", frames}};
}

MotionSequence motion_from_json(const Json& j) {
  MotionSequence seq;
  try {
    seq.fps = j.at("fps").get<double>();
    seq.skeleton_id = j.value("skeleton", std::string("desk_humanoid"));
    for (const auto& jf : j.at("frames")) {
      MotionFrame f;
      f.translation = vec3_from(jf.at("t"), "frame translation");
      for (const auto& jr : jf.at("r")) {
        if (!jr.is_array() || jr.size() != 6) throw ValidationError("rotation: expected 6 numbers");
        Rot6 r;
        for (int k = 0; k < 6; ++k) r[k] = jr[k].get<double>();
        f.rotations.push_back(r);
      }
      seq.frames.push_back(std::move(f));
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed motion JSON: ") + e.what());
  }
  if (!(seq.fps > 0.0)) throw ValidationError("motion fps must be positive");
  return seq;
}

Json skeleton_to_json(const Skeleton& skel) {
  Json joints = Json::array();
  for (const auto& jt : skel.joints()) {
    joints.push_back({{"name", jt.name},
                      {"parent", jt.parent < 0 ? Json(nullptr) : Json(skel.joint(jt.parent).name)},
                      {"offset", {jt.offset.x(), jt.offset.y(), jt.offset.z()}},
                      {"radius", jt.radius}});
  }
  Json feet = Json::array();
  for (int f : skel.feet()) feet.push_back(skel.joint(f).name);
  return {{"joints", joints}, {"feet", feet}, {"head", skel.joint(skel.head()).name}};
}

Skeleton skeleton_from_json(const Json& j, const std::string& id) {
  try {
    std::vector<Joint> joints;
    auto find = [&](const std::string& name) {
      for (std::size_t i = 0; i < joints.size(); ++i) {
        if (joints[i].name == name) return static_cast<int>(i);
      }
      throw ValidationError("skeleton: unknown joint '" + name + "' (parents must come first)");
    };
    for (const auto& jj : j.at("joints")) {
      Joint jt;
      jt.name = jj.at("name").get<std::string>();
      const auto& p = jj.at("parent");
      jt.parent = p.is_null() ? -1 : (p.is_number() ? p.get<int>() : find(p.get<std::string>()));
      jt.offset = vec3_from(jj.at("offset"), "joint offset");
      jt.radius = jj.at("radius").get<double>();
      joints.push_back(std::move(jt));
    }
    std::vector<int> feet;
    for (const auto& f : j.at("feet")) feet.push_back(find(f.get<std::string>()));
    const int head = find(j.at("head").get<std::string>());
    return Skeleton(id, std::move(joints), std::move(feet), head);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed skeleton JSON: ") + e.what());
  }
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(1) << '\n';
}

MotionSequence load_motion(const std::filesystem::path& path) {
  return motion_from_json(read_json(path));
}

void save_motion(const std::filesystem::path& path, const MotionSequence& seq) {
  write_json(path, motion_to_json(seq));
}

Skeleton load_skeleton(const std::filesystem::path& path) {
  return skeleton_from_json(read_json(path), path.stem().string());
}

Skeleton resolve_skeleton(const std::string& id_or_path) {
  if (id_or_path.empty() || id_or_path == "desk_humanoid") return desk_humanoid();
  return load_skeleton(id_or_path);
}

}  // namespace pmr::motion
