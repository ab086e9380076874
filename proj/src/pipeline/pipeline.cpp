#include "pmr/pipeline/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>

#include "pmr/camera/evidence_io.hpp"
#include "pmr/error.hpp"
#include "pmr/motion/io.hpp"
#include "pmr/synth/synth.hpp"
#include "pmr/util/hash.hpp"

namespace pmr::pipeline {

// ---------------------------------------------------------------- config

void SynthSpec::validate() const {
  if (count == 0) throw ValidationError("synth: clip count must be positive");
  if (kinds.empty()) throw ValidationError("synth: no motion kinds");
  for (const auto& k : kinds) synth::clip_kind_from_name(k);
  if (!(float_offset >= 0) || !(penetration_offset >= 0) || !(jitter >= 0) || !(keypoint_noise >= 0)) {
    throw ValidationError("synth: offsets and noise levels must be non-negative");
  }
  if (flaw_length < 0) throw ValidationError("synth: flaw length must be non-negative");
  if (samples_per_bone < 1) throw ValidationError("synth: samples_per_bone must be positive");
}

Json SynthSpec::to_json() const {
  return {{"count", count},
          {"kinds", kinds},
          {"float_offset", float_offset},
          {"penetration_offset", penetration_offset},
          {"jitter", jitter},
          {"flaw_length", flaw_length},
          {"keypoint_noise", keypoint_noise},
          {"samples_per_bone", samples_per_bone}};
}

SynthSpec SynthSpec::from_json(const Json& j) {
  SynthSpec s;
  s.count = j.value("count", s.count);
  s.kinds = j.value("kinds", s.kinds);
  s.float_offset = j.value("float_offset", s.float_offset);
  s.penetration_offset = j.value("penetration_offset", s.penetration_offset);
  s.jitter = j.value("jitter", s.jitter);
  s.flaw_length = j.value("flaw_length", s.flaw_length);
  s.keypoint_noise = j.value("keypoint_noise", s.keypoint_noise);
  s.samples_per_bone = j.value("samples_per_bone", s.samples_per_bone);
  s.validate();
  return s;
}

void DetectConfig::validate() const {
  if (!(threshold >= 0 && threshold <= 1)) throw ValidationError("detect: threshold must lie in [0, 1]");
  if (merge_gap < 0 || samples_per_bone < 1) throw ValidationError("detect: merge_gap/samples_per_bone out of range");
}

Json DetectConfig::to_json() const {
  return {{"threshold", threshold}, {"merge_gap", merge_gap}, {"samples_per_bone", samples_per_bone}};
}

DetectConfig DetectConfig::from_json(const Json& j) {
  DetectConfig d;
  d.threshold = j.value("threshold", d.threshold);
  d.merge_gap = j.value("merge_gap", d.merge_gap);
  d.samples_per_bone = j.value("samples_per_bone", d.samples_per_bone);
  d.validate();
  return d;
}

Json Paths::to_json() const {
  return {{"motion", motion},         {"masks", masks},   {"keypoints", keypoints},  {"camera", camera},
          {"skeleton", skeleton},     {"corpus", corpus}, {"detections", detections}, {"mcm", mcm},
          {"controller", controller}};
}

Paths Paths::from_json(const Json& j) {
  Paths p;
  p.motion = j.value("motion", p.motion);
  p.masks = j.value("masks", p.masks);
  p.keypoints = j.value("keypoints", p.keypoints);
  p.camera = j.value("camera", p.camera);
  p.skeleton = j.value("skeleton", p.skeleton);
  p.corpus = j.value("corpus", p.corpus);
  p.detections = j.value("detections", p.detections);
  p.mcm = j.value("mcm", p.mcm);
  p.controller = j.value("controller", p.controller);
  return p;
}

void PipelineConfig::validate() const {
  synth.validate();
  detect.validate();
  mcm.validate();
  controller.validate();
  budget.validate();
  bench.validate();
}

Json PipelineConfig::to_json() const {
  return {{"seed", seed},
          {"paths", paths.to_json()},
          {"synth", synth.to_json()},
          {"detect", detect.to_json()},
          {"mcm", mcm.to_json()},
          {"controller", controller.to_json()},
          {"budget", {{"max_steps", budget.max_steps}}},
          {"bench", bench.to_json()}};
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) c.paths = Paths::from_json(j.at("paths"));
    if (j.contains("synth")) c.synth = SynthSpec::from_json(j.at("synth"));
    if (j.contains("detect")) c.detect = DetectConfig::from_json(j.at("detect"));
    if (j.contains("mcm")) c.mcm = mcm::McmConfig::from_json(j.at("mcm"));
    if (j.contains("controller")) c.controller = ptm::ControllerConfig::from_json(j.at("controller"));
    if (j.contains("budget")) c.budget.max_steps = j.at("budget").value("max_steps", c.budget.max_steps);
    if (j.contains("bench")) c.bench = bench::BenchConfig::from_json(j.at("bench"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.mcm.seed = c.seed;
  c.controller.ppo.seed = c.seed;
  c.validate();
  return c;
}

std::string PipelineConfig::hash() const {
  auto j = to_json();
  j.erase("paths");
  return util::sha256_hex(j.dump());
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      if (!node->is_object() || !node->contains(part)) throw ValidationError("unknown config key '" + key + "'");
      (*node)[part] = value;
      return;
    }
    if (!node->is_object() || !node->contains(part)) throw ValidationError("unknown config key '" + key + "'");
    node = &(*node)[part];
    start = dot + 1;
  }
}

PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                           const std::uint64_t* seed) {
  Json j = PipelineConfig{}.to_json();
  if (!path.empty()) {
    require_file("config", path);
    Json file;
    try {
      file = motion::read_json(path);
    } catch (const IoError& e) {
      throw ValidationError(e.what());
    }
    j.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  return PipelineConfig::from_json(j);
}

// ---------------------------------------------------------------- workspace

std::string hash_path(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += fs::relative(f, p).generic_string() + ":" + util::sha256_file(f) + "\n";
    return util::sha256_hex(acc);
  }
  return util::sha256_file(p);
}

Workspace::Workspace(fs::path out) : out_(std::move(out)) {
  if (out_.empty()) throw ValidationError("an output directory is required");
  fs::create_directories(out_);
}

fs::path Workspace::output(const std::string& name) const {
  if (stage_.empty()) throw Error("workspace: no stage is running");
  const fs::path p = staging_ / name;
  fs::create_directories(p.parent_path());
  return p;
}

void Workspace::begin(const std::string& stage) {
  stage_ = stage;
  staging_ = out_ / (".staging-" + stage);
  fs::remove_all(staging_);
  fs::create_directories(staging_);
  inputs_ = Json::object();
  notes_ = Json::object();
}

void Workspace::input(const std::string& label, const fs::path& p) {
  inputs_[label] = {{"path", p.generic_string()}, {"sha256", hash_path(p)}};
}

void Workspace::note(const std::string& key, Json value) { notes_[key] = std::move(value); }

Json Workspace::manifest() const {
  const fs::path m = out_ / "manifest.json";
  if (!fs::exists(m)) return {{"stages", Json::object()}};
  return motion::read_json(m);
}

void Workspace::commit(const std::string& config_hash) {
  Json outputs = Json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(staging_)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto rel = fs::relative(f, staging_);
    const auto dst = out_ / rel;
    fs::create_directories(dst.parent_path());
    outputs[rel.generic_string()] = util::sha256_file(f);
    fs::rename(f, dst);
  }
  fs::remove_all(staging_);
  Json m = manifest();
  m["stages"][stage_] = {{"config_hash", config_hash}, {"inputs", inputs_}, {"outputs", outputs}, {"notes", notes_}};
  motion::write_json(out_ / "manifest.json", m);
  stage_.clear();
}

void Workspace::quarantine() {
  if (stage_.empty()) return;
  const fs::path dst = out_ / "failed" / stage_;
  fs::remove_all(dst);
  fs::create_directories(dst.parent_path());
  if (fs::exists(staging_)) fs::rename(staging_, dst);
  stage_.clear();
}

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw ValidationError("missing input: no " + what + " path given");
  if (!fs::exists(path)) throw ValidationError("missing input: " + what + " '" + path + "' does not exist");
}

// ---------------------------------------------------------------- helpers

namespace {

std::string or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback.string() : given;
}

Json segments_json(const std::vector<camera::FlawSegment>& segs) {
  Json a = Json::array();
  for (const auto& s : segs) a.push_back({{"start", s.start}, {"end", s.end}, {"mean_score", s.mean_score}});
  return a;
}

std::vector<camera::FlawSegment> segments_from_json(const Json& a) {
  std::vector<camera::FlawSegment> out;
  for (const auto& s : a) out.push_back({s.at("start").get<int>(), s.at("end").get<int>(), s.value("mean_score", 0.0)});
  return out;
}

Json trace_json(const std::vector<std::optional<double>>& v) {
  Json a = Json::array();
  for (const auto& x : v) a.push_back(x ? Json(*x) : Json(nullptr));
  return a;
}

std::vector<std::string> corpus_index(const fs::path& dir) {
  const auto idx = dir / "index.json";
  require_file("corpus index", idx.string());
  return motion::read_json(idx).at("clips").get<std::vector<std::string>>();
}

}  // namespace

// ---------------------------------------------------------------- stages

int run_synth(const PipelineConfig& cfg, Workspace& ws) {
  const auto& spec = cfg.synth;
  const auto skel = motion::resolve_skeleton(cfg.paths.skeleton);
  std::vector<synth::ClipKind> kinds;
  for (const auto& k : spec.kinds) kinds.push_back(synth::clip_kind_from_name(k));
  const auto clips = synth::corpus(spec.count, cfg.seed, kinds);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eedULL);
  Json names = Json::array();
  for (const auto& c : clips) {
    const std::string base = "corpus/" + c.name + "/";
    const auto& clean = c.seq;
    const auto cam = synth::observing_camera(skel, clean);
    const auto masks = synth::render_masks(cam, skel, clean, spec.samples_per_bone);
    const auto kps = synth::render_keypoints(cam, skel, clean, spec.keypoint_noise, rng);

    auto noisy = clean;
    const std::size_t T = noisy.size();
    if (spec.float_offset > 0 && spec.penetration_offset > 0) {
      synth::shift_height(noisy, spec.float_offset, 0, T / 2 - 1);
      synth::shift_height(noisy, -spec.penetration_offset, T / 2, T - 1);
    } else if (spec.float_offset > 0) {
      synth::shift_height(noisy, spec.float_offset, 0, T - 1);
    } else if (spec.penetration_offset > 0) {
      synth::shift_height(noisy, -spec.penetration_offset, 0, T - 1);
    }
    if (spec.jitter > 0) synth::jitter(noisy, spec.jitter, rng);
    Json flaws = Json::array();
    if (spec.flaw_length > 0) {
      const int len = spec.flaw_length;
      if (static_cast<std::size_t>(len) + 2 >= T) throw ValidationError("synth: flaw longer than clip " + c.name);
      const int lo = static_cast<int>(T) / 4, hi = std::max(lo, 3 * static_cast<int>(T) / 4 - len);
      const int start = std::uniform_int_distribution<int>(lo, hi)(rng);
      const auto fl = synth::inject_flaw(noisy, start, len, rng);
      flaws.push_back({{"start", fl.start}, {"end", fl.end}});
    }
    motion::save_motion(ws.output(base + "clean.json"), clean);
    motion::save_motion(ws.output(base + "motion.json"), noisy);
    motion::write_json(ws.output(base + "camera.json"), camera::camera_to_json(cam));
    motion::write_json(ws.output(base + "keypoints.json"), camera::keypoints_to_json(kps));
    camera::write_mask_dir(ws.output(base + "masks/.keep").parent_path(), masks);
    fs::remove(ws.output(base + "masks/.keep"));
    motion::write_json(ws.output(base + "truth.json"), {{"flaws", flaws},
                                                        {"float_offset", spec.float_offset},
                                                        {"penetration_offset", spec.penetration_offset},
                                                        {"jitter", spec.jitter}});
    names.push_back(c.name);
  }
  motion::write_json(ws.output("corpus/index.json"), {{"clips", names}, {"spec", spec.to_json()}});
  ws.note("clips", names);
  return kOk;
}

int run_detect(const PipelineConfig& cfg, Workspace& ws) {
  const auto& p = cfg.paths;
  require_file("motion", p.motion);
  require_file("masks", p.masks);
  require_file("camera", p.camera);
  ws.input("motion", p.motion);
  ws.input("masks", p.masks);
  ws.input("camera", p.camera);
  const auto skel = motion::resolve_skeleton(p.skeleton);
  const auto seq = motion::load_motion(p.motion);
  const auto masks = camera::read_mask_dir(p.masks);
  const auto cam = camera::camera_from_json(motion::read_json(p.camera));
  if (masks.size() != seq.size()) throw ValidationError("detect: one mask per motion frame is required");

  const auto mps = bench::sequence_mps(skel, seq, masks, cam, cfg.detect.samples_per_bone);
  const auto segs = camera::flag_flaws(mps.values, cfg.detect.threshold, cfg.detect.merge_gap);
  Json out = {{"segments", segments_json(segs)}, {"mps", trace_json(mps.values)}, {"mps_mean", mps.mean}};
  if (!p.keypoints.empty()) {
    require_file("keypoints", p.keypoints);
    ws.input("keypoints", p.keypoints);
    const auto oks = bench::sequence_oks(skel, seq, camera::keypoints_from_json(motion::read_json(p.keypoints)), cam);
    out["oks"] = trace_json(oks.values);
    out["oks_mean"] = oks.mean;
  }
  motion::write_json(ws.output("detect.json"), out);
  ws.note("segments", segments_json(segs));
  return kOk;
}

int run_correct(const PipelineConfig& cfg, Workspace& ws) {
  const auto& p = cfg.paths;
  const std::string det = or_default(p.detections, ws.root() / "detect.json");
  require_file("motion", p.motion);
  require_file("detections", det);
  ws.input("motion", p.motion);
  ws.input("detections", det);
  const auto seq = motion::load_motion(p.motion);
  const auto segs = segments_from_json(motion::read_json(det).at("segments"));
  if (segs.empty()) {
    motion::save_motion(ws.output("corrected.json"), seq);
    ws.note("skipped", true);
    ws.note("replaced_frames", Json::array());
    return kOk;
  }
  const std::string ckpt = or_default(p.mcm, ws.root() / "mcm.ckpt");
  require_file("masks", p.masks);
  require_file("MCM checkpoint", ckpt);
  ws.input("masks", p.masks);
  ws.input("mcm", ckpt);
  const auto masks = camera::read_mask_dir(p.masks);
  const auto model = mcm::Denoiser::load(ckpt);
  nn::Rng rng(cfg.seed);
  const auto res = mcm::correct(seq, segs, masks, model, rng);
  motion::save_motion(ws.output("corrected.json"), res.sequence);
  Json replaced = Json::array();
  for (const auto& s : segs)
    for (int t = s.start; t <= s.end; ++t) replaced.push_back(t);
  Json reports = Json::array();
  for (const auto& r : res.segments) reports.push_back({{"start", r.start}, {"end", r.end}, {"one_sided", r.one_sided}});
  ws.note("skipped", false);
  ws.note("segments", segments_json(segs));
  ws.note("replaced_frames", replaced);
  ws.note("windows", reports);
  return kOk;
}

namespace {

struct LoadedCorpus {
  std::vector<std::string> names;
  std::vector<motion::MotionSequence> clean;
  std::vector<std::vector<camera::MaskRaster>> masks;
};

LoadedCorpus load_corpus(const PipelineConfig& cfg, Workspace& ws, bool with_masks) {
  const fs::path dir = or_default(cfg.paths.corpus, ws.root() / "corpus");
  require_file("corpus", dir.string());
  LoadedCorpus c;
  c.names = corpus_index(dir);
  if (c.names.empty()) throw ValidationError("corpus '" + dir.string() + "' is empty");
  ws.input("corpus", dir);
  for (const auto& n : c.names) {
    const auto clip = dir / n;
    require_file("clip", (clip / "clean.json").string());
    c.clean.push_back(motion::load_motion(clip / "clean.json"));
    if (with_masks) c.masks.push_back(camera::read_mask_dir(clip / "masks"));
  }
  return c;
}

}  // namespace

int run_train_mcm(const PipelineConfig& cfg, Workspace& ws) {
  const auto corpus = load_corpus(cfg, ws, true);
  const auto skel = motion::resolve_skeleton(cfg.paths.skeleton);
  std::vector<mcm::TrainingSequence> train;
  for (std::size_t i = 0; i < corpus.clean.size(); ++i) {
    train.push_back(mcm::motion_training_sequence(corpus.clean[i], &corpus.masks[i]));
  }
  mcm::TrainReport rep;
  const auto model = mcm::train_mcm(train, cfg.mcm, &skel, &rep);
  model.save(ws.output("mcm.ckpt"));
  motion::write_json(ws.output("mcm_train.json"), {{"losses", rep.losses},
                                                   {"initial", rep.initial},
                                                   {"final_mean", rep.final_mean},
                                                   {"null_draws", rep.null_draws},
                                                   {"draws", rep.draws}});
  ws.note("loss_initial", rep.initial);
  ws.note("loss_final_mean", rep.final_mean);
  return kOk;
}

int run_pretrain(const PipelineConfig& cfg, Workspace& ws) {
  const auto corpus = load_corpus(cfg, ws, false);
  ptm::PretrainReport rep;
  const auto ctrl = ptm::pretrain(corpus.clean, cfg.controller, &rep);
  ctrl.save(ws.output("controller.ckpt"));
  Json parts = Json::array();
  for (const auto& p : rep.mean_parts) parts.push_back({{"goal", p.goal}, {"style", p.style}, {"energy", p.energy}});
  Json stats = Json::array();
  for (const auto& s : rep.stats) {
    stats.push_back({{"approx_kl", s.approx_kl},
                     {"ratio_min", s.ratio_min},
                     {"ratio_max", s.ratio_max},
                     {"epochs_run", s.epochs_run},
                     {"step_fraction", s.step_fraction}});
  }
  motion::write_json(ws.output("pretrain.json"), {{"mean_reward", rep.mean_reward},
                                                  {"mean_episode_length", rep.mean_episode_length},
                                                  {"mean_parts", parts},
                                                  {"ppo", stats},
                                                  {"reward_hash", cfg.controller.reward_hash()}});
  ws.note("reward_hash", cfg.controller.reward_hash());
  return kOk;
}

int run_restore(const PipelineConfig& cfg, Workspace& ws) {
  const fs::path corrected = ws.root() / "corrected.json";
  const std::string motion_path = fs::exists(corrected) ? corrected.string() : cfg.paths.motion;
  const std::string ckpt = or_default(cfg.paths.controller, ws.root() / "controller.ckpt");
  require_file("motion", motion_path);
  require_file("controller checkpoint", ckpt);
  ws.input("motion", motion_path);
  ws.input("controller", ckpt);
  const auto ref = motion::load_motion(motion_path);
  const auto ctrl = ptm::Controller::load(ckpt);
  const auto res = ptm::tta_adapt(ctrl, ref, cfg.budget);
  const auto skel = motion::resolve_skeleton(ref.skeleton_id);
  motion::save_motion(ws.output("restored.json"), res.restored);
  motion::write_json(ws.output("trajectory.json"), sim::trajectory_to_json(skel, ref.fps, res.rollout.trajectory));
  auto report = res.report.to_json();
  report["reference"] = motion_path;
  motion::write_json(ws.output("adapt_report.json"), report);
  ws.note("success", res.report.success);
  ws.note("steps_used", res.report.steps_used);
  return res.report.success ? kOk : kBudgetExhausted;
}

int run_bench(const PipelineConfig& cfg, Workspace& ws) {
  std::vector<std::pair<std::string, std::string>> inputs;
  if (!cfg.paths.motion.empty()) inputs.emplace_back("input", cfg.paths.motion);
  for (const char* name : {"corrected", "restored"}) {
    const auto p = ws.root() / (std::string(name) + ".json");
    if (fs::exists(p)) inputs.emplace_back(name, p.string());
  }
  if (inputs.empty()) throw ValidationError("missing input: bench needs paths.motion or a restored.json in the output directory");
  const auto skel = motion::resolve_skeleton(cfg.paths.skeleton);
  std::optional<bench::Evidence> ev;
  if (!cfg.paths.camera.empty()) {
    require_file("camera", cfg.paths.camera);
    ws.input("camera", cfg.paths.camera);
    bench::Evidence e;
    e.camera = camera::camera_from_json(motion::read_json(cfg.paths.camera));
    if (!cfg.paths.masks.empty()) {
      require_file("masks", cfg.paths.masks);
      ws.input("masks", cfg.paths.masks);
      e.masks = camera::read_mask_dir(cfg.paths.masks);
    }
    if (!cfg.paths.keypoints.empty()) {
      require_file("keypoints", cfg.paths.keypoints);
      ws.input("keypoints", cfg.paths.keypoints);
      e.keypoints = camera::keypoints_from_json(motion::read_json(cfg.paths.keypoints));
    }
    ev = std::move(e);
  }
  std::vector<std::pair<std::string, bench::MetricsReport>> rows;
  Json all = Json::object();
  for (const auto& [name, path] : inputs) {
    require_file(name + " motion", path);
    ws.input(name, path);
    const auto seq = motion::load_motion(path);
    // Evidence is per frame of the captured clip; skip it on length mismatch.
    const bool use_ev = ev && (!ev->masks || ev->masks->size() == seq.size()) &&
                        (!ev->keypoints || ev->keypoints->frames.size() == seq.size());
    auto rep = bench::evaluate(skel, seq, cfg.bench, use_ev ? &*ev : nullptr);
    all[name] = rep.to_json();
    std::ofstream(ws.output("metrics_" + name + ".csv")) << rep.to_csv();
    rows.emplace_back(name, std::move(rep));
  }
  motion::write_json(ws.output("metrics.json"), all);
  const auto table = bench::render_table(rows);
  std::ofstream(ws.output("metrics.txt")) << table;
  std::cout << table;
  return kOk;
}

// ---------------------------------------------------------------- driver

std::vector<std::string> stage_names() {
  return {"synth", "detect", "correct", "train-mcm", "pretrain", "restore", "bench"};
}

namespace {

int dispatch(const std::string& stage, const PipelineConfig& cfg, Workspace& ws) {
  if (stage == "synth") return run_synth(cfg, ws);
  if (stage == "detect") return run_detect(cfg, ws);
  if (stage == "correct") return run_correct(cfg, ws);
  if (stage == "train-mcm") return run_train_mcm(cfg, ws);
  if (stage == "pretrain") return run_pretrain(cfg, ws);
  if (stage == "restore") return run_restore(cfg, ws);
  if (stage == "bench") return run_bench(cfg, ws);
  throw ValidationError("unknown stage '" + stage + "'");
}

void write_error(const fs::path& out, const std::string& stage, const std::string& what) {
  const auto dir = out / "failed" / stage;
  fs::create_directories(dir);
  std::ofstream(dir / "error.txt") << what << '\n';
}

}  // namespace

int run_stage(const std::string& stage, const PipelineConfig& cfg, const fs::path& out) {
  Workspace ws(out);
  ws.begin(stage);
  try {
    cfg.validate();
    const int code = dispatch(stage, cfg, ws);
    ws.commit(cfg.hash());
    return code;
  } catch (const ValidationError& e) {
    ws.quarantine();
    write_error(out, stage, e.what());
    std::cerr << "pmr " << stage << ": " << e.what() << '\n';
    return kValidation;
  } catch (const IoError& e) {
    ws.quarantine();
    write_error(out, stage, e.what());
    std::cerr << "pmr " << stage << ": " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    ws.quarantine();
    write_error(out, stage, e.what());
    std::cerr << "pmr " << stage << ": stage failed: " << e.what() << '\n';
    return kStageFailure;
  }
}

int run_demo(const PipelineConfig& given, const fs::path& out) {
  PipelineConfig cfg = given;
  cfg.synth.count = std::min<std::size_t>(cfg.synth.count, 8);
  if (cfg.synth.flaw_length == 0) cfg.synth.flaw_length = 5;
  cfg.mcm.hidden = {256, 256};
  cfg.mcm.train_steps = std::min(cfg.mcm.train_steps, 300);
  cfg.controller.pretrain_updates = std::min(cfg.controller.pretrain_updates, 10);
  cfg.controller.pretrain_steps_per_update = std::min(cfg.controller.pretrain_steps_per_update, 1024);
  cfg.budget.max_steps = std::min(cfg.budget.max_steps, 50);
  cfg.validate();

  for (const char* stage : {"synth", "train-mcm", "pretrain"}) {
    if (const int code = run_stage(stage, cfg, out); code != kOk) return code;
  }
  const fs::path corpus = out / "corpus";
  const auto names = corpus_index(corpus);
  const fs::path clip = corpus / names.front();
  cfg.paths.corpus = corpus.string();
  cfg.paths.motion = (clip / "motion.json").string();
  cfg.paths.masks = (clip / "masks").string();
  cfg.paths.camera = (clip / "camera.json").string();
  cfg.paths.keypoints = (clip / "keypoints.json").string();
  for (const char* stage : {"detect", "correct", "restore", "bench"}) {
    const int code = run_stage(stage, cfg, out);
    if (code != kOk && !(code == kBudgetExhausted && std::string(stage) == "restore")) return code;
  }
  const auto m = Workspace(out).manifest();
  return m.at("stages").at("restore").at("notes").at("success").get<bool>() ? kOk : kBudgetExhausted;
}

}  // namespace pmr::pipeline
