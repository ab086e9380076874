#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "pmr/bench/metrics.hpp"
#include "pmr/error.hpp"
#include "pmr/motion/io.hpp"
#include "pmr/pipeline/pipeline.hpp"
#include "pmr/util/hash.hpp"

using namespace pmr;
using namespace pmr::pipeline;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pmr_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig small(std::size_t count, std::vector<std::string> kinds) {
  PipelineConfig cfg;
  cfg.seed = 11;
  cfg.synth.count = count;
  cfg.synth.kinds = std::move(kinds);
  cfg.validate();
  return cfg;
}

// Points the evidence paths at one synthesized clip.
void use_clip(PipelineConfig& cfg, const fs::path& out, const std::string& clip, const std::string& motion_file) {
  const auto dir = out / "corpus" / clip;
  cfg.paths.motion = (dir / motion_file).string();
  cfg.paths.masks = (dir / "masks").string();
  cfg.paths.camera = (dir / "camera.json").string();
  cfg.paths.keypoints = (dir / "keypoints.json").string();
}

Json stage(const fs::path& out, const std::string& name) {
  return motion::read_json(out / "manifest.json").at("stages").at(name);
}

}  // namespace

TEST_CASE("synth output is byte-identical for a seed and validates its spec") {
  const auto cfg = small(2, {"walk", "jump"});
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(run_stage("synth", cfg, a) == kOk);
  REQUIRE(run_stage("synth", cfg, b) == kOk);
  CHECK(hash_path(a / "corpus") == hash_path(b / "corpus"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  auto bad = cfg;
  bad.synth.count = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(run_stage("synth", bad, scratch("synth_c")) == kValidation);
}

TEST_CASE("synthetic pairs carry the injected offset") {
  auto cfg = small(1, {"walk"});
  cfg.synth.float_offset = 0.03;
  const auto out = scratch("float");
  REQUIRE(run_stage("synth", cfg, out) == kOk);
  const auto& skel = motion::resolve_skeleton("desk_humanoid");
  const auto clean = motion::load_motion(out / "corpus/walk_0/clean.json");
  const auto noisy = motion::load_motion(out / "corpus/walk_0/motion.json");
  const auto rc = bench::evaluate(skel, clean, {});
  const auto rn = bench::evaluate(skel, noisy, {});
  CHECK(rc.float_mean < 5.0);
  CHECK(rc.gp_mean < 5.0);
  CHECK(std::abs(rn.float_mean - 30.0) <= 1.0);
}

TEST_CASE("clean clip skips correction and restores at step 0") {
  auto cfg = small(1, {"walk"});
  const auto out = scratch("clean");
  REQUIRE(run_stage("synth", cfg, out) == kOk);
  use_clip(cfg, out, "walk_0", "clean.json");

  REQUIRE(run_stage("detect", cfg, out) == kOk);
  CHECK(motion::read_json(out / "detect.json").at("segments").empty());
  const auto manifest_before = slurp(out / "manifest.json");
  REQUIRE(run_stage("detect", cfg, out) == kOk);
  CHECK(slurp(out / "manifest.json") == manifest_before);

  REQUIRE(run_stage("correct", cfg, out) == kOk);
  const auto corr = stage(out, "correct");
  CHECK(corr.at("notes").at("skipped").get<bool>());
  CHECK(util::sha256_file(out / "corrected.json") == util::sha256_file(cfg.paths.motion));
  CHECK(corr.at("inputs").at("motion").at("sha256") == util::sha256_file(cfg.paths.motion));

  // The untrained tracking prior already completes the clean clip.
  const auto ref = motion::load_motion(cfg.paths.motion);
  const auto ctrl = ptm::make_controller(motion::resolve_skeleton(ref.skeleton_id), cfg.controller, {ref});
  ctrl.save(out / "controller.ckpt");
  REQUIRE(run_stage("restore", cfg, out) == kOk);
  const auto rep = motion::read_json(out / "adapt_report.json");
  CHECK(rep.at("success").get<bool>());
  CHECK(rep.at("steps_used").get<int>() == 0);
  CHECK(fs::exists(out / "trajectory.json"));
  CHECK(motion::load_motion(out / "restored.json").size() == ref.size());

  REQUIRE(run_stage("bench", cfg, out) == kOk);
  const auto metrics = motion::read_json(out / "metrics.json");
  CHECK(metrics.contains("input"));
  CHECK(metrics.contains("restored"));
}

TEST_CASE("flawed clip records detected segments and replaced frames") {
  auto cfg = small(2, {"walk"});
  cfg.synth.flaw_length = 6;
  cfg.mcm.hidden = {32, 32};
  cfg.mcm.train_steps = 20;
  cfg.mcm.batch = 4;
  const auto out = scratch("flaw");
  REQUIRE(run_stage("synth", cfg, out) == kOk);
  REQUIRE(run_stage("train-mcm", cfg, out) == kOk);
  use_clip(cfg, out, "walk_0", "motion.json");
  REQUIRE(run_stage("detect", cfg, out) == kOk);
  REQUIRE(run_stage("correct", cfg, out) == kOk);

  const auto truth = motion::read_json(out / "corpus/walk_0/truth.json").at("flaws").at(0);
  const auto notes = stage(out, "correct").at("notes");
  CHECK_FALSE(notes.at("skipped").get<bool>());
  REQUIRE(!notes.at("segments").empty());
  std::vector<int> expected;
  for (const auto& s : notes.at("segments"))
    for (int t = s.at("start").get<int>(); t <= s.at("end").get<int>(); ++t) expected.push_back(t);
  CHECK(notes.at("replaced_frames").get<std::vector<int>>() == expected);
  // The injected run is inside a detected segment.
  bool covered = false;
  for (const auto& s : notes.at("segments")) {
    covered |= s.at("start").get<int>() <= truth.at("start").get<int>() && truth.at("end").get<int>() <= s.at("end").get<int>();
  }
  CHECK(covered);

  // Frames outside the segments are copied verbatim.
  const auto in = motion::load_motion(cfg.paths.motion);
  const auto fixed = motion::load_motion(out / "corrected.json");
  REQUIRE(fixed.size() == in.size());
  for (std::size_t t = 0; t < in.size(); ++t) {
    if (std::find(expected.begin(), expected.end(), static_cast<int>(t)) != expected.end()) continue;
    CHECK(fixed.frames[t].translation == in.frames[t].translation);
  }
}

TEST_CASE("missing inputs and failed stages") {
  auto cfg = small(1, {"walk"});
  const auto out = scratch("missing");
  cfg.paths.motion = (out / "nope.json").string();
  cfg.paths.masks = (out / "masks").string();
  cfg.paths.camera = (out / "camera.json").string();
  CHECK(run_stage("detect", cfg, out) == kValidation);
  const auto err = slurp(out / "failed/detect/error.txt");
  CHECK(err.find("nope.json") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "manifest.json"));
  CHECK(run_stage("no-such-stage", cfg, out) == kValidation);
}

TEST_CASE("restore reports an exhausted budget with outputs written") {
  auto cfg = small(1, {"walk"});
  const auto out = scratch("exhausted");
  REQUIRE(run_stage("synth", cfg, out) == kOk);
  auto ref = motion::load_motion(out / "corpus/walk_0/clean.json");
  for (std::size_t t = 20; t < ref.size(); ++t) ref.frames[t].translation.z() += 1.5;
  motion::save_motion(out / "teleport.json", ref);
  cfg.paths.motion = (out / "teleport.json").string();
  cfg.budget.max_steps = 1;
  const auto ctrl = ptm::make_controller(motion::resolve_skeleton(ref.skeleton_id), cfg.controller, {ref});
  ctrl.save(out / "controller.ckpt");
  CHECK(run_stage("restore", cfg, out) == kBudgetExhausted);
  const auto rep = motion::read_json(out / "adapt_report.json");
  CHECK_FALSE(rep.at("success").get<bool>());
  CHECK(rep.at("steps_used").get<int>() == 1);
  CHECK(fs::exists(out / "restored.json"));
  CHECK_FALSE(stage(out, "restore").at("notes").at("success").get<bool>());
}

TEST_CASE("config loading and overrides") {
  Json j = PipelineConfig{}.to_json();
  apply_override(j, "synth.float_offset=0.02");
  apply_override(j, "paths.motion=clip.json");
  CHECK(j["synth"]["float_offset"].get<double>() == 0.02);
  CHECK(j["paths"]["motion"].get<std::string>() == "clip.json");
  CHECK_THROWS_AS(apply_override(j, "synth.nope=1"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "novalue"), ValidationError);

  const std::uint64_t seed = 77;
  const auto cfg = load_config("", {"detect.threshold=0.4"}, &seed);
  CHECK(cfg.seed == 77);
  CHECK(cfg.mcm.seed == 77);
  CHECK(cfg.controller.ppo.seed == 77);
  CHECK(cfg.detect.threshold == 0.4);
  CHECK_THROWS_AS(load_config("", {"detect.threshold=2"}, nullptr), ValidationError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json", {}, nullptr), ValidationError);

  auto other = cfg;
  other.paths.motion = "elsewhere.json";
  CHECK(other.hash() == cfg.hash());
  other.detect.merge_gap = 4;
  CHECK(other.hash() != cfg.hash());
}
