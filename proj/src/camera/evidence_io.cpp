#include "pmr/camera/evidence_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pmr/error.hpp"

namespace pmr::camera {

Json camera_to_json(const CameraModel& cam) {
  Json R = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R.push_back(cam.R(r, c));
  return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}, {"R", R},
          {"t", {cam.t.x(), cam.t.y(), cam.t.z()}}, {"w", cam.width}, {"h", cam.height}};
}

CameraModel camera_from_json(const Json& j) {
  CameraModel cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto& R = j.at("R");
    const auto& t = j.at("t");
    if (R.size() != 9 || t.size() != 3) throw ValidationError("camera R needs 9 values and t 3");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.R(r, c) = R[3 * r + c].get<double>();
    cam.t = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    cam.width = j.at("w").get<int>();
    cam.height = j.at("h").get<int>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed camera JSON: ") + e.what());
  }
  cam.validate();
  return cam;
}

Json keypoints_to_json(const KeypointTrack& track) {
  Json frames = Json::array();
  for (const auto& f : track.frames) {
    Json kps = Json::array();
    for (const auto& k : f.kps) kps.push_back({k.u, k.v, k.visible ? 1 : 0});
    frames.push_back({{"kps", kps}, {"bbox_area", f.bbox_area}});
  }
  return {{"frames", frames}, {"kappa", track.kappa}};
}

KeypointTrack keypoints_from_json(const Json& j) {
  KeypointTrack track;
  try {
    for (const auto& jf : j.at("frames")) {
      KeypointFrame f;
      const auto& kps = jf.at("kps");
      if (kps.size() != kKeypointCount) throw ValidationError("keypoint frame needs 12 keypoints");
      for (std::size_t i = 0; i < kKeypointCount; ++i) {
        f.kps[i] = {kps[i].at(0).get<double>(), kps[i].at(1).get<double>(), kps[i].at(2).get<double>() > 0};
      }
      f.bbox_area = jf.at("bbox_area").get<double>();
      if (!(f.bbox_area > 0.0)) throw ValidationError("keypoint bbox_area must be positive");
      track.frames.push_back(f);
    }
    if (j.contains("kappa")) {
      const auto& k = j.at("kappa");
      if (k.size() != kKeypointCount) throw ValidationError("kappa needs 12 values");
      for (std::size_t i = 0; i < kKeypointCount; ++i) track.kappa[i] = k[i].get<double>();
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed keypoint JSON: ") + e.what());
  }
  return track;
}

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.get();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    if (c == EOF) break;
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

MaskRaster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask '" + path.string() + "'");
  const std::string magic = pgm_token(in);
  if (magic != "P2" && magic != "P5") throw ValidationError("'" + path.string() + "' is not a PGM file");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pgm_token(in));
    h = std::stoi(pgm_token(in));
    maxval = std::stoi(pgm_token(in));
  } catch (const std::exception&) {
    throw ValidationError("bad PGM header in '" + path.string() + "'");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw ValidationError("bad PGM header in '" + path.string() + "'");
  }
  MaskRaster mask(w, h);
  const std::size_t n = std::size_t(w) * h;
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) {
      int v = 0;
      if (!(in >> v)) throw ValidationError("truncated PGM '" + path.string() + "'");
      mask.data[i] = v > 127 ? 1 : 0;
    }
  } else {
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(n * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
      throw ValidationError("truncated PGM '" + path.string() + "'");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int v = bytes == 2 ? (buf[2 * i] << 8) | buf[2 * i + 1] : buf[i];
      mask.data[i] = v > 127 ? 1 : 0;
    }
  }
  return mask;
}

void write_pgm(const std::filesystem::path& path, const MaskRaster& mask) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mask '" + path.string() + "'");
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::vector<unsigned char> buf(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), buf.begin(), [](auto v) { return v ? 255 : 0; });
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::filesystem::path mask_filename(const std::filesystem::path& dir, std::size_t frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "mask_%05zu.pgm", frame);
  return dir / name;
}

void write_mask_dir(const std::filesystem::path& dir, const std::vector<MaskRaster>& masks) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < masks.size(); ++i) write_pgm(mask_filename(dir, i), masks[i]);
}

std::vector<MaskRaster> read_mask_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("mask directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MaskRaster> masks;
  masks.reserve(files.size());
  for (const auto& f : files) masks.push_back(read_pgm(f));
  return masks;
}

}  // namespace pmr::camera
