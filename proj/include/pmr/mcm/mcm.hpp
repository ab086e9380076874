#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "pmr/camera/camera.hpp"
#include "pmr/motion/motion.hpp"
#include "pmr/nn/network.hpp"

namespace pmr::mcm {

// ---------------------------------------------------------------- schedule

/// Variance schedule; index n runs 1..N (entry 0 is padding with
/// alpha_bar = 1).
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> beta, alpha, alpha_bar;

  static DiffusionSchedule cosine(int steps, double offset = 0.008);
  static DiffusionSchedule linear(int steps, double beta_start, double beta_end);
  void validate() const;

  // Posterior q(x_{n-1} | x_n, x0) = N(c0 x0 + cn x_n, var).
  double posterior_x0_coef(int n) const;
  double posterior_xn_coef(int n) const;
  double posterior_variance(int n) const;
};

/// x_n = sqrt(alpha_bar_n) x0 + sqrt(1 - alpha_bar_n) noise.
std::vector<double> q_sample(std::span<const double> x0, int n, std::span<const double> noise,
                             const DiffusionSchedule& sched);

inline constexpr std::size_t kTimeEmbeddingDim = 8;
std::vector<double> timestep_embedding(int n, int steps);

// ---------------------------------------------------------------- masks

inline constexpr std::size_t kDescriptorDim = 70;

/// 8x8 occupancy fractions (row-major), centroid in [0,1]^2, second central
/// moments normalized by the image size (xx, yy, xy) and the principal-axis
/// angle divided by pi. Empty mask gives zeros.
std::vector<double> mask_descriptor(const camera::MaskRaster& mask);

// ---------------------------------------------------------------- normalization

struct Normalizer {
  std::vector<double> mean, scale;

  /// Per-dimension mean and standard deviation; dimensions with deviation
  /// below `floor` use `floor`.
  static Normalizer fit(const std::vector<std::vector<double>>& rows, double floor = 1e-3);
  std::size_t dim() const { return mean.size(); }
  void apply(std::span<double> row) const;
  void invert(std::span<double> row) const;
};

// ---------------------------------------------------------------- windows

/// Expresses a run of 135-d frames relative to frame `ref`: its root moved to
/// the horizontal origin and its heading turned to +x. Returns the heading
/// and origin so the transform can be undone.
struct Canonical {
  double heading = 0.0;
  Vec3 origin = Vec3::Zero();
};
Canonical canonicalize(std::vector<std::vector<double>>& frames, std::size_t ref);
void uncanonicalize(std::vector<double>& frame, const Canonical& c);

struct McmConfig {
  int window = 31;
  int steps = 100;
  std::size_t frame_dim = motion::kFrameDim;
  std::size_t descriptor_dim = kDescriptorDim;
  std::vector<std::size_t> hidden = {512, 512};
  double lambda_joint = 1.0, lambda_vel = 0.1, lambda_acc = 0.1, lambda_root = 1.0;
  double condition_dropout = 0.1;
  int batch = 32;
  int train_steps = 1500;
  double lr = 1e-3;
  int min_gap = 2, max_gap = 12;  // length of the generated run in training windows
  bool stochastic = false;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t frame_input() const { return frame_dim + 1 + descriptor_dim; }
  std::size_t input_size() const { return window * frame_input() + kTimeEmbeddingDim; }
  std::size_t output_size() const { return window * frame_dim; }
  nlohmann::json to_json() const;
  static McmConfig from_json(const nlohmann::json& j);
};

/// One conditioning window in normalized coordinates.
struct CorrectionWindow {
  std::vector<double> x0;          // window x frame_dim (targets; known values where keyframe = 1)
  std::vector<std::uint8_t> keyframe;  // 1 = known
  std::vector<double> descriptors;  // window x descriptor_dim
  bool null_condition = false;

  void validate(const McmConfig& cfg, bool require_context) const;
};

// ---------------------------------------------------------------- loss

struct LossTerms {
  double recon = 0, joint = 0, vel = 0, acc = 0, root = 0, total = 0;
};

/// Composite loss of a predicted clean window against its target (both
/// normalized). Writes d total / d pred into `grad` when non-empty. FK terms
/// apply when frame_dim is the motion codec width and a skeleton is given.
LossTerms mcm_loss(std::span<const double> pred, std::span<const double> target, const McmConfig& cfg,
                   const Normalizer& norm, const motion::Skeleton* skel, std::span<double> grad = {});

/// Gradient of FK joint positions: accumulates into `grad_frame` (135-d,
/// raw units) the gradient of sum_j <g_j, p_j>.
void fk_backward(const motion::Skeleton& skel, std::span<const double> frame, std::span<const Vec3> grad_positions,
                 std::span<double> grad_frame);

// ---------------------------------------------------------------- model

class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(McmConfig cfg, Normalizer norm, nn::Rng& rng);

  const McmConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  const Normalizer& normalizer() const { return norm_; }
  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }

  /// Network input for one noisy window.
  std::vector<double> build_input(std::span<const double> x_n, const CorrectionWindow& w, int n) const;
  std::vector<double> predict_x0(std::span<const double> x_n, const CorrectionWindow& w, int n) const;

  /// One reverse step; noise is added only when `rng` is given and n > 1.
  std::vector<double> denoise_step(std::span<const double> x_n, const CorrectionWindow& w, int n,
                                   nn::Rng* rng) const;

  /// Full reverse chain from x_N = noise; known frames are overwritten with
  /// their given values after every step.
  std::vector<double> sample(const CorrectionWindow& w, nn::Rng& rng) const;

  void save(const std::filesystem::path& path) const;
  static Denoiser load(const std::filesystem::path& path);

 private:
  McmConfig cfg_;
  Normalizer norm_;
  DiffusionSchedule sched_;
  nn::Network net_;
};

/// x0 for the reverse chain with an exact predictor: returns the sample after
/// running the deterministic posterior-mean chain with x0_hat = truth.
std::vector<double> oracle_chain(const DiffusionSchedule& sched, std::span<const double> truth,
                                 std::span<const double> start_noise);

// ---------------------------------------------------------------- training

/// A sequence of raw frames with optional per-frame mask descriptors.
struct TrainingSequence {
  std::vector<std::vector<double>> frames;
  std::vector<std::vector<double>> descriptors;  // empty or one per frame
};

struct TrainReport {
  std::vector<double> losses;  // per step, batch mean
  double initial = 0.0;
  double final_mean = 0.0;  // mean of the last 50 steps
  std::size_t null_draws = 0, draws = 0;
};

/// Draws one training window (keyframe pattern, condition dropout,
/// canonicalization for motion frames).
CorrectionWindow draw_window(const std::vector<TrainingSequence>& corpus, const McmConfig& cfg, const Normalizer& norm,
                             nn::Rng& rng);

Normalizer fit_normalizer(const std::vector<TrainingSequence>& corpus, const McmConfig& cfg);

Denoiser train_mcm(const std::vector<TrainingSequence>& corpus, const McmConfig& cfg,
                   const motion::Skeleton* skel, TrainReport* report = nullptr);

/// Motion clip plus mask descriptors, ready for training.
TrainingSequence motion_training_sequence(const motion::MotionSequence& seq,
                                          const std::vector<camera::MaskRaster>* masks);

// ---------------------------------------------------------------- correction

struct SegmentReport {
  int start = 0, end = 0;
  bool one_sided = false;
};

struct CorrectionResult {
  motion::MotionSequence sequence;
  std::vector<SegmentReport> segments;
};

/// Regenerates the frames of every flaw segment; all other frames are copied
/// unchanged. Masks (one per frame) condition the whole window.
CorrectionResult correct(const motion::MotionSequence& seq, const std::vector<camera::FlawSegment>& flaws,
                         const std::vector<camera::MaskRaster>& masks, const Denoiser& model, nn::Rng& rng);

}  // namespace pmr::mcm
