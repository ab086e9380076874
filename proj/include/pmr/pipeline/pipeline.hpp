#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmr/bench/metrics.hpp"
#include "pmr/mcm/mcm.hpp"
#include "pmr/ptm/ptm.hpp"

namespace pmr::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Synthetic corpus recipe. Offsets are applied to the noisy copy only; with
/// both a float and a penetration offset the first half floats and the second
/// half sinks.
struct SynthSpec {
  std::size_t count = 8;
  std::vector<std::string> kinds = {"walk", "jump", "squat", "kick"};
  double float_offset = 0.0;        // m
  double penetration_offset = 0.0;  // m
  double jitter = 0.0;              // rad, per-joint std
  int flaw_length = 0;              // frames of capture garbage, 0 for none
  double keypoint_noise = 1.0;      // px
  int samples_per_bone = 16;

  void validate() const;
  Json to_json() const;
  static SynthSpec from_json(const Json& j);
};

struct DetectConfig {
  double threshold = 0.5;  // MPS below this flags a frame
  int merge_gap = 3;
  int samples_per_bone = 16;

  void validate() const;
  Json to_json() const;
  static DetectConfig from_json(const Json& j);
};

struct Paths {
  std::string motion, masks, keypoints, camera;
  std::string skeleton = "desk_humanoid";
  std::string corpus;       // directory written by synth
  std::string detections;   // detect.json
  std::string mcm;          // denoiser checkpoint
  std::string controller;   // controller checkpoint

  Json to_json() const;
  static Paths from_json(const Json& j);
};

struct PipelineConfig {
  std::uint64_t seed = 1;  // copied into every stochastic stage
  Paths paths;
  SynthSpec synth;
  DetectConfig detect;
  mcm::McmConfig mcm;
  ptm::ControllerConfig controller;
  ptm::AdaptationBudget budget;
  bench::BenchConfig bench;

  void validate() const;
  Json to_json() const;
  static PipelineConfig from_json(const Json& j);
  std::string hash() const;
};

/// Defaults, then the file (JSON merge patch), then `key.sub=value`
/// overrides; values parse as JSON and fall back to strings.
PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                           const std::uint64_t* seed);
void apply_override(Json& j, const std::string& assignment);

enum ExitCode : int { kOk = 0, kValidation = 2, kStageFailure = 3, kBudgetExhausted = 4 };

/// Content hash of a file, or of a directory's files in name order.
std::string hash_path(const fs::path& p);

/// Output directory with a manifest. Stage outputs are written to a staging
/// directory and moved into place on success, or under failed/<stage> when
/// the stage throws.
class Workspace {
 public:
  explicit Workspace(fs::path out);

  const fs::path& root() const { return out_; }
  /// Staging path of an output file (relative name) for the running stage.
  fs::path output(const std::string& name) const;

  void begin(const std::string& stage);
  void input(const std::string& label, const fs::path& p);
  void note(const std::string& key, Json value);
  void commit(const std::string& config_hash);
  void quarantine();

  Json manifest() const;

 private:
  fs::path out_, staging_;
  std::string stage_;
  Json inputs_, notes_;
};

/// Throws ValidationError naming the missing file.
void require_file(const std::string& what, const std::string& path);

/// Each stage returns an exit code; errors propagate as exceptions.
int run_synth(const PipelineConfig& cfg, Workspace& ws);
int run_detect(const PipelineConfig& cfg, Workspace& ws);
int run_correct(const PipelineConfig& cfg, Workspace& ws);
int run_train_mcm(const PipelineConfig& cfg, Workspace& ws);
int run_pretrain(const PipelineConfig& cfg, Workspace& ws);
int run_restore(const PipelineConfig& cfg, Workspace& ws);
int run_bench(const PipelineConfig& cfg, Workspace& ws);
/// synth -> train-mcm -> pretrain -> detect -> correct -> restore -> bench on
/// one clip, with small budgets unless the config says otherwise.
int run_demo(const PipelineConfig& cfg, const fs::path& out);

/// Runs one stage inside a workspace, mapping exceptions onto exit codes
/// and quarantining partial outputs.
int run_stage(const std::string& stage, const PipelineConfig& cfg, const fs::path& out);

std::vector<std::string> stage_names();

}  // namespace pmr::pipeline
