#include "pmr/bench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pmr/error.hpp"

namespace pmr::bench {

using motion::JointPose;
using motion::MotionSequence;
using motion::Skeleton;

void BenchConfig::validate() const {
  if (samples_per_bone <= 0) throw ValidationError("bench: samples_per_bone must be positive");
  if (!(threshold >= 0.0)) throw ValidationError("bench: threshold must be >= 0");
  if (!(contact_height >= 0.0)) throw ValidationError("bench: contact_height must be >= 0");
}

nlohmann::json BenchConfig::to_json() const {
  return {{"samples_per_bone", samples_per_bone},
          {"threshold_m", threshold},
          {"contact_height_m", contact_height},
          {"ground_height_m", ground_height}};
}

BenchConfig BenchConfig::from_json(const nlohmann::json& j) {
  BenchConfig c;
  c.samples_per_bone = j.value("samples_per_bone", c.samples_per_bone);
  c.threshold = j.value("threshold_m", c.threshold);
  c.contact_height = j.value("contact_height_m", c.contact_height);
  c.ground_height = j.value("ground_height_m", c.ground_height);
  c.validate();
  return c;
}

SequenceGeometry sequence_geometry(const Skeleton& skel, const MotionSequence& seq, int samples_per_bone) {
  SequenceGeometry g;
  g.samples_per_bone = samples_per_bone;
  g.poses.reserve(seq.size());
  g.samples.reserve(seq.size());
  for (const auto& f : seq.frames) {
    g.poses.push_back(motion::forward_kinematics(skel, f));
    g.samples.push_back(camera::body_surface_samples(skel, g.poses.back(), samples_per_bone));
  }
  return g;
}

namespace {

double lowest(const std::vector<Vec3>& pts) {
  double z = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) z = std::min(z, p.z());
  return z;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double mean_defined(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (!x) continue;
    s += *x;
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

// Lowest sample of the bones meeting at joint j.
double foot_height(const Skeleton& skel, const SequenceGeometry& g, std::size_t frame, int j) {
  const auto& pts = g.samples[frame];
  const std::size_t spb = static_cast<std::size_t>(g.samples_per_bone);
  double z = std::numeric_limits<double>::infinity();
  auto scan = [&](int bone) {
    const std::size_t base = static_cast<std::size_t>(bone - 1) * spb;
    for (std::size_t i = 0; i < spb; ++i) z = std::min(z, pts[base + i].z());
  };
  if (j > 0) scan(j);
  for (int c : skel.children(static_cast<std::size_t>(j))) scan(c);
  return z;
}

}  // namespace

std::vector<double> ground_penetration_trace(const SequenceGeometry& g, const BenchConfig& cfg) {
  std::vector<double> out;
  out.reserve(g.samples.size());
  for (const auto& pts : g.samples) {
    const double depth = std::max(0.0, cfg.ground_height - lowest(pts));
    out.push_back(depth < cfg.threshold ? 0.0 : 1000.0 * depth);
  }
  return out;
}

std::vector<double> float_trace(const SequenceGeometry& g, const BenchConfig& cfg) {
  std::vector<double> out;
  out.reserve(g.samples.size());
  for (const auto& pts : g.samples) {
    const double h = lowest(pts) - cfg.ground_height;
    out.push_back(h < 0.0 || h <= cfg.threshold ? 0.0 : 1000.0 * h);
  }
  return out;
}

std::vector<std::optional<double>> foot_skate_trace(const Skeleton& skel, const SequenceGeometry& g,
                                                    const BenchConfig& cfg) {
  std::vector<std::optional<double>> out;
  const std::size_t n = g.samples.size();
  if (n < 2) return out;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    double sum = 0.0;
    int count = 0;
    for (int j : skel.feet()) {
      const bool c0 = foot_height(skel, g, t, j) - cfg.ground_height <= cfg.contact_height;
      const bool c1 = foot_height(skel, g, t + 1, j) - cfg.ground_height <= cfg.contact_height;
      if (!c0 || !c1) continue;
      const Vec3 d = g.poses[t + 1].positions[j] - g.poses[t].positions[j];
      sum += 1000.0 * std::hypot(d.x(), d.y());
      ++count;
    }
    out.push_back(count ? std::optional<double>(sum / count) : std::nullopt);
  }
  return out;
}

bool bones_adjacent(const Skeleton& skel, int a, int b) {
  if (a == b) return true;
  return skel.parent(a) == b || skel.parent(b) == a || skel.parent(a) == skel.parent(b);
}

bool inside_capsule(const Skeleton& skel, const JointPose& pose, int b, const Vec3& p) {
  const Vec3& a = pose.positions[skel.parent(b)];
  const Vec3 d = pose.positions[b] - a;
  const double len2 = d.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  const double r = skel.joint(b).radius;
  return (p - (a + t * d)).squaredNorm() < r * r;
}

std::vector<double> self_penetration_trace(const Skeleton& skel, const SequenceGeometry& g) {
  const int bones = static_cast<int>(skel.joint_count());
  const std::size_t spb = static_cast<std::size_t>(g.samples_per_bone);
  std::vector<double> out;
  out.reserve(g.samples.size());
  for (std::size_t t = 0; t < g.samples.size(); ++t) {
    const auto& pts = g.samples[t];
    std::size_t inside = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const int own = 1 + static_cast<int>(i / spb);
      for (int b = 1; b < bones; ++b) {
        if (bones_adjacent(skel, own, b)) continue;
        if (inside_capsule(skel, g.poses[t], b, pts[i])) {
          ++inside;
          break;
        }
      }
    }
    out.push_back(pts.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(pts.size()));
  }
  return out;
}

double ground_penetration(const Skeleton& skel, const MotionSequence& seq, const BenchConfig& cfg) {
  return mean_of(ground_penetration_trace(sequence_geometry(skel, seq, cfg.samples_per_bone), cfg));
}

double float_metric(const Skeleton& skel, const MotionSequence& seq, const BenchConfig& cfg) {
  return mean_of(float_trace(sequence_geometry(skel, seq, cfg.samples_per_bone), cfg));
}

double foot_skate(const Skeleton& skel, const MotionSequence& seq, const BenchConfig& cfg) {
  return mean_defined(foot_skate_trace(skel, sequence_geometry(skel, seq, cfg.samples_per_bone), cfg));
}

double self_penetration(const Skeleton& skel, const MotionSequence& seq, const BenchConfig& cfg) {
  return mean_of(self_penetration_trace(skel, sequence_geometry(skel, seq, cfg.samples_per_bone)));
}

namespace {

ScoreTrace finish(std::vector<std::optional<double>> values, const char* what) {
  ScoreTrace s;
  s.values = std::move(values);
  for (const auto& v : s.values) s.undefined += v ? 0 : 1;
  if (s.undefined == s.values.size()) throw UndefinedMetric(std::string(what) + ": every frame is undefined");
  s.mean = mean_defined(s.values);
  return s;
}

}  // namespace

ScoreTrace sequence_oks(const Skeleton& skel, const MotionSequence& seq, const camera::KeypointTrack& track,
                        const camera::CameraModel& cam) {
  if (track.frames.size() != seq.size()) {
    throw ShapeError("sequence_oks: " + std::to_string(track.frames.size()) + " keypoint frames for " +
                     std::to_string(seq.size()) + " motion frames");
  }
  std::vector<std::optional<double>> values;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto proj = camera::project_keypoints(cam, skel, motion::forward_kinematics(skel, seq.frames[t]));
    const auto s2 = track.scale_sq(t);
    try {
      values.push_back(camera::oks(proj, track.frames[t].kps, s2));
    } catch (const UndefinedMetric&) {
      values.push_back(std::nullopt);
    }
  }
  return finish(std::move(values), "sequence_oks");
}

ScoreTrace sequence_mps(const Skeleton& skel, const MotionSequence& seq, const std::vector<camera::MaskRaster>& masks,
                        const camera::CameraModel& cam, int samples_per_bone) {
  if (masks.size() != seq.size()) {
    throw ShapeError("sequence_mps: " + std::to_string(masks.size()) + " masks for " + std::to_string(seq.size()) +
                     " motion frames");
  }
  std::vector<std::optional<double>> values;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (masks[t].width != cam.width || masks[t].height != cam.height) {
      throw ShapeError("sequence_mps: mask " + std::to_string(t) + " does not match the camera image size");
    }
    const auto pts = camera::body_surface_samples(skel, seq.frames[t], samples_per_bone);
    try {
      values.push_back(camera::mask_pose_similarity(cam, pts, masks[t]));
    } catch (const UndefinedMetric&) {
      values.push_back(std::nullopt);
    }
  }
  return finish(std::move(values), "sequence_mps");
}

MetricsReport evaluate(const Skeleton& skel, const MotionSequence& seq, const BenchConfig& cfg,
                       const Evidence* evidence) {
  cfg.validate();
  MetricsReport r;
  r.config = cfg;
  r.frames = seq.size();
  const auto g = sequence_geometry(skel, seq, cfg.samples_per_bone);
  r.sp = self_penetration_trace(skel, g);
  r.gp = ground_penetration_trace(g, cfg);
  r.flt = float_trace(g, cfg);
  r.fs = foot_skate_trace(skel, g, cfg);
  r.sp_mean = mean_of(r.sp);
  r.gp_mean = mean_of(r.gp);
  r.float_mean = mean_of(r.flt);
  r.fs_mean = mean_defined(r.fs);
  if (evidence) {
    if (evidence->keypoints) r.oks = sequence_oks(skel, seq, *evidence->keypoints, evidence->camera);
    if (evidence->masks) r.mps = sequence_mps(skel, seq, *evidence->masks, evidence->camera, cfg.samples_per_bone);
  }
  return r;
}

namespace {

nlohmann::json optional_array(const std::vector<std::optional<double>>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return a;
}

nlohmann::json score_json(const ScoreTrace& s) {
  return {{"mean", s.mean}, {"undefined_frames", s.undefined}, {"trace", optional_array(s.values)}};
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["frames"] = frames;
  j["config"] = config.to_json();
  j["units"] = {{"SP", "ratio"}, {"GP", "mm"}, {"Float", "mm"}, {"FS", "mm/frame"}, {"OKS", "ratio"}, {"MPS", "ratio"}};
  j["metrics"]["SP"] = {{"mean", sp_mean}, {"trace", sp}};
  j["metrics"]["GP"] = {{"mean", gp_mean}, {"trace", gp}};
  j["metrics"]["Float"] = {{"mean", float_mean}, {"trace", flt}};
  j["metrics"]["FS"] = {{"mean", fs_mean}, {"trace", optional_array(fs)}};
  if (oks) j["metrics"]["OKS"] = score_json(*oks);
  if (mps) j["metrics"]["MPS"] = score_json(*mps);
  return j;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "frame,sp,gp,float,fs,oks,mps\n";
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (std::size_t t = 0; t < frames; ++t) {
    out << t << ',' << sp[t] << ',' << gp[t] << ',' << flt[t] << ',';
    if (t < fs.size()) opt(fs[t]);
    out << ',';
    if (oks) opt(oks->values[t]);
    out << ',';
    if (mps) opt(mps->values[t]);
    out << '\n';
  }
  return out.str();
}

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t name_w = 8;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "sequence" << std::right;
  for (const char* h : {"SP", "GP(mm)", "Float(mm)", "FS(mm)", "OKS", "MPS"}) out << std::setw(11) << h;
  out << '\n';
  out << std::fixed;
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(name_w)) << name << std::right;
    out << std::setprecision(4) << std::setw(11) << r.sp_mean;
    out << std::setprecision(2) << std::setw(11) << r.gp_mean << std::setw(11) << r.float_mean << std::setw(11)
        << r.fs_mean;
    out << std::setprecision(4);
    if (r.oks) out << std::setw(11) << r.oks->mean;
    else out << std::setw(11) << "-";
    if (r.mps) out << std::setw(11) << r.mps->mean;
    else out << std::setw(11) << "-";
    out << '\n';
  }
  return out.str();
}

}  // namespace pmr::bench
