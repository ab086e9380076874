#include <doctest.h>

#include <cmath>
#include <random>

#include "pmr/error.hpp"
#include "pmr/mcm/mcm.hpp"
#include "pmr/synth/synth.hpp"

using namespace pmr;
using namespace pmr::mcm;
using camera::MaskRaster;

namespace {

std::vector<TrainingSequence> toy_corpus(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> w(0.1, 0.4), phase(0.0, 6.283), amp(0.5, 1.5);
  std::vector<TrainingSequence> out;
  for (std::size_t c = 0; c < count; ++c) {
    TrainingSequence s;
    const double om = w(rng), ph = phase(rng), a = amp(rng);
    for (int t = 0; t < 120; ++t) s.frames.push_back({a * std::sin(om * t + ph)});
    out.push_back(std::move(s));
  }
  return out;
}

McmConfig toy_config() {
  McmConfig c;
  c.frame_dim = 1;
  c.descriptor_dim = 0;
  c.hidden = {64, 64};
  c.batch = 32;
  c.train_steps = 1500;
  c.seed = 11;
  return c;
}

// Encoded synthetic walk frames and a normalizer fitted on them.
struct MotionFixture {
  McmConfig cfg;
  Normalizer norm;
  std::vector<TrainingSequence> corpus;

  MotionFixture() {
    cfg.hidden = {16};
    synth::WalkParams p;
    p.duration = 2.0;
    corpus.push_back(motion_training_sequence(synth::walk(p), nullptr));
    p.heading = 1.0;
    p.speed = 0.9;
    corpus.push_back(motion_training_sequence(synth::walk(p), nullptr));
    norm = fit_normalizer(corpus, cfg);
  }
};

double brute_cell(const MaskRaster& m, int cx, int cy) {
  double fg = 0, n = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (x * 8 / m.width == cx && y * 8 / m.height == cy) {
        fg += m.at(x, y);
        n += 1;
      }
    }
  }
  return fg / n;
}

}  // namespace

TEST_CASE("mask descriptor") {
  const MaskRaster empty(32, 24);
  for (double v : mask_descriptor(empty)) CHECK(v == 0.0);

  const auto full = mask_descriptor(MaskRaster(32, 24, 1));
  REQUIRE(full.size() == kDescriptorDim);
  for (int i = 0; i < 64; ++i) CHECK(full[i] == doctest::Approx(1.0));
  CHECK(full[64] == doctest::Approx(0.5));
  CHECK(full[65] == doctest::Approx(0.5));

  MaskRaster q(32, 24);
  for (int y = 0; y < 12; ++y) {
    for (int x = 16; x < 32; ++x) q.set(x, y, 1);
  }
  const auto d = mask_descriptor(q);
  int ones = 0;
  for (int cy = 0; cy < 8; ++cy) {
    for (int cx = 0; cx < 8; ++cx) {
      CHECK(d[cy * 8 + cx] == doctest::Approx(brute_cell(q, cx, cy)));
      ones += d[cy * 8 + cx] == 1.0;
    }
  }
  CHECK(ones == 16);
  CHECK(d[64] == doctest::Approx(0.75));
  CHECK(d[65] == doctest::Approx(0.25));
  // uniform square of side 1/2 has variance (1/2)^2/12 less the pixel term
  CHECK(d[66] == doctest::Approx((16.0 * 16.0 - 1.0) / 12.0 / (32.0 * 32.0)));
  CHECK(d[68] == doctest::Approx(0.0));
}

TEST_CASE("schedule invariants") {
  const auto s = DiffusionSchedule::cosine(100);
  CHECK(s.steps == 100);
  CHECK(s.beta[1] > 0.0);
  for (int n = 2; n <= 100; ++n) {
    CHECK(s.beta[n] >= s.beta[n - 1]);
    CHECK(s.alpha_bar[n] < s.alpha_bar[n - 1]);
  }
  CHECK(s.beta[100] < 1.0);
  CHECK(s.posterior_x0_coef(1) == doctest::Approx(1.0));
  CHECK(s.posterior_xn_coef(1) == 0.0);
  CHECK(s.posterior_variance(1) == 0.0);
  CHECK_THROWS_AS(DiffusionSchedule::linear(4, 0.3, 0.1), ValidationError);
}

TEST_CASE("q_sample closed form") {
  const auto s = DiffusionSchedule::linear(1, 0.75, 0.75);
  REQUIRE(s.alpha_bar[1] == doctest::Approx(0.25));
  const double x0 = 2.0, noise = 1.0;
  const auto x = q_sample(std::span(&x0, 1), 1, std::span(&noise, 1), s);
  CHECK(x[0] == doctest::Approx(0.5 * 2.0 + std::sqrt(0.75)).epsilon(1e-12));
  CHECK(x[0] == doctest::Approx(1.8660).epsilon(1e-4));
  CHECK_THROWS_AS(q_sample(std::span(&x0, 1), 0, std::span(&noise, 1), s), ValidationError);
  CHECK_THROWS_AS(q_sample(std::span(&x0, 1), 2, std::span(&noise, 1), s), ValidationError);

  const auto tiny = DiffusionSchedule::linear(1, 1e-10, 1e-10);
  const auto near = q_sample(std::span(&x0, 1), 1, std::span(&noise, 1), tiny);
  CHECK(near[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("q_sample Monte-Carlo variance") {
  const auto s = DiffusionSchedule::cosine(100);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int n : {10, 50, 90}) {
    const std::size_t N = 100000;
    std::vector<double> x0(N), noise(N);
    for (std::size_t i = 0; i < N; ++i) {
      x0[i] = 2.0 * g(rng) + 1.0;
      noise[i] = g(rng);
    }
    const auto xn = q_sample(x0, n, noise, s);
    double m = 0, v = 0;
    for (double x : xn) m += x / N;
    for (double x : xn) v += (x - m) * (x - m) / (N - 1);
    const double expected = s.alpha_bar[n] * 4.0 + (1.0 - s.alpha_bar[n]);
    CHECK(std::abs(v - expected) / expected < 0.02);
  }
}

TEST_CASE("oracle reverse chain reconstructs x0") {
  const auto s = DiffusionSchedule::cosine(100);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> truth(64), start(64);
  for (auto& v : truth) v = g(rng);
  for (auto& v : start) v = g(rng);
  const auto x = oracle_chain(s, truth, start);
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK(x[i] == doctest::Approx(truth[i]).epsilon(1e-12));
}

TEST_CASE("denoise step and sampling") {
  McmConfig cfg;
  cfg.window = 7;
  cfg.steps = 20;
  cfg.frame_dim = 2;
  cfg.descriptor_dim = 3;
  cfg.hidden = {8};
  cfg.max_gap = 4;
  Normalizer norm{{0.0, 0.0}, {1.0, 1.0}};
  nn::Rng rng(1);
  const Denoiser model(cfg, norm, rng);

  CorrectionWindow w;
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 14; ++i) w.x0.push_back(g(rng));
  w.keyframe = {1, 1, 0, 0, 0, 1, 1};
  w.descriptors.assign(21, 0.3);
  w.validate(cfg, true);

  std::vector<double> xn(14);
  for (auto& v : xn) v = g(rng);
  nn::Rng r1(7), r2(99);
  CHECK(model.denoise_step(xn, w, 1, &r1) == model.denoise_step(xn, w, 1, &r2));
  CHECK(model.denoise_step(xn, w, 5, &r1) != model.denoise_step(xn, w, 5, &r2));
  CHECK(model.denoise_step(xn, w, 5, nullptr) == model.denoise_step(xn, w, 5, nullptr));

  for (bool stochastic : {false, true}) {
    Denoiser m = model;
    nn::Rng r(4);
    const auto out = m.sample(w, r);
    for (int i : {0, 1, 5, 6}) {
      CHECK(out[2 * i] == w.x0[2 * i]);
      CHECK(out[2 * i + 1] == w.x0[2 * i + 1]);
    }
    (void)stochastic;
  }
  CHECK_THROWS_AS(model.denoise_step(std::vector<double>(13), w, 3, nullptr), ShapeError);

  CorrectionWindow bad = w;
  bad.keyframe = {0, 1, 1, 1, 1, 1, 1};
  CHECK_THROWS_AS(bad.validate(cfg, true), ValidationError);
}

TEST_CASE("normalization round trip") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<std::vector<double>> rows(50, std::vector<double>(6));
  for (auto& r : rows) {
    for (auto& v : r) v = g(rng) + 10.0;
  }
  const auto n = Normalizer::fit(rows);
  for (auto r : rows) {
    const auto orig = r;
    n.apply(r);
    n.invert(r);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - orig[i]) <= 1e-12 * std::max(1.0, std::abs(orig[i])));
  }
}

TEST_CASE("canonical window round trip") {
  synth::WalkParams p;
  p.heading = 2.1;
  p.duration = 1.0;
  const auto seq = synth::walk(p);
  std::vector<std::vector<double>> frames;
  for (const auto& f : seq.frames) frames.push_back(motion::encode_frame(f));
  const auto orig = frames;
  const auto c = canonicalize(frames, 3);
  CHECK(frames[3][0] == doctest::Approx(0.0));
  CHECK(frames[3][1] == doctest::Approx(0.0));
  CHECK(frames[3][4] == doctest::Approx(0.0));  // forward axis has no y component
  for (std::size_t t = 0; t < frames.size(); ++t) {
    uncanonicalize(frames[t], c);
    for (std::size_t i = 0; i < frames[t].size(); ++i) CHECK(frames[t][i] == doctest::Approx(orig[t][i]).epsilon(1e-12));
  }
}

TEST_CASE("loss terms") {
  MotionFixture fx;
  nn::Rng rng(1);
  const auto w = draw_window(fx.corpus, fx.cfg, fx.norm, rng);
  const auto& skel = motion::desk_humanoid();

  const auto zero = mcm_loss(w.x0, w.x0, fx.cfg, fx.norm, &skel);
  CHECK(zero.total == 0.0);
  CHECK(zero.joint == 0.0);
  CHECK(zero.root == 0.0);

  // A root translation offset moves every joint by delta.
  const Vec3 delta(0.03, -0.02, 0.05);
  auto shifted = w.x0;
  for (int f = 0; f < fx.cfg.window; ++f) {
    for (int k = 0; k < 3; ++k) shifted[f * motion::kFrameDim + k] += delta[k] / fx.norm.scale[k];
  }
  const auto L = mcm_loss(shifted, w.x0, fx.cfg, fx.norm, &skel);
  CHECK(L.joint == doctest::Approx(delta.squaredNorm()).epsilon(1e-9));
  CHECK(L.vel == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(L.acc == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(L.root == doctest::Approx(delta.squaredNorm()).epsilon(1e-9));

  CHECK_THROWS_AS(mcm_loss({}, {}, fx.cfg, fx.norm, &skel), ValidationError);
}

TEST_CASE("fk backward matches finite differences") {
  const auto& skel = motion::desk_humanoid();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  auto frame = motion::encode_frame(motion::MotionFrame::identity(skel.joint_count()));
  for (auto& v : frame) v += 0.3 * g(rng);
  std::vector<Vec3> gp(skel.joint_count());
  for (auto& v : gp) v = Vec3(g(rng), g(rng), g(rng));
  auto f = [&](const std::vector<double>& x) {
    const auto pose = motion::forward_kinematics(skel, motion::decode_frame(x));
    double s = 0;
    for (std::size_t j = 0; j < skel.joint_count(); ++j) s += gp[j].dot(pose.positions[j]);
    return s;
  };
  std::vector<double> grad(frame.size(), 0.0);
  fk_backward(skel, frame, gp, grad);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    auto a = frame, b = frame;
    a[i] += 1e-6;
    b[i] -= 1e-6;
    const double fd = (f(a) - f(b)) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("composite loss gradient matches finite differences") {
  MotionFixture fx;
  const auto& skel = motion::desk_humanoid();
  nn::Rng rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  int bad = 0;
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const auto w = draw_window(fx.corpus, fx.cfg, fx.norm, rng);
    auto pred = w.x0;
    for (auto& v : pred) v += 0.2 * g(rng);
    std::vector<double> grad(pred.size());
    mcm_loss(pred, w.x0, fx.cfg, fx.norm, &skel, grad);
    std::vector<double> dir(pred.size());
    for (auto& v : dir) v = g(rng);
    double analytic = 0;
    for (std::size_t i = 0; i < dir.size(); ++i) analytic += grad[i] * dir[i];
    const double h = 1e-5;
    auto a = pred, b = pred;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      a[i] += h * dir[i];
      b[i] -= h * dir[i];
    }
    const double fd = (mcm_loss(a, w.x0, fx.cfg, fx.norm, &skel).total - mcm_loss(b, w.x0, fx.cfg, fx.norm, &skel).total) /
                      (2 * h);
    const double rel = std::abs(analytic - fd) / std::max(std::abs(fd), 1e-8);
    worst = std::max(worst, rel);
    bad += rel > 1e-4;
  }
  INFO("worst relative error " << worst);
  CHECK(bad == 0);
}

TEST_CASE("condition dropout frequency") {
  MotionFixture fx;
  nn::Rng rng(13);
  std::size_t nulls = 0;
  const std::size_t N = 10000;
  for (std::size_t i = 0; i < N; ++i) nulls += draw_window(fx.corpus, fx.cfg, fx.norm, rng).null_condition;
  const double f = double(nulls) / N;
  CHECK(f >= 0.09);
  CHECK(f <= 0.11);
}

TEST_CASE("toy corpus training") {
  const auto corpus = toy_corpus(64, 4);
  auto cfg = toy_config();
  TrainReport rep;
  const auto model = train_mcm(corpus, cfg, nullptr, &rep);
  MESSAGE("toy loss " << rep.initial << " -> " << rep.final_mean);
  CHECK(rep.final_mean * 10.0 <= rep.initial);

  cfg.train_steps = 20;
  const auto a = train_mcm(corpus, cfg, nullptr);
  const auto b = train_mcm(corpus, cfg, nullptr);
  const auto pa = a.network().parameters(), pb = b.network().parameters();
  CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));

  auto small = cfg;
  small.batch = 1000;
  CHECK_THROWS_AS(train_mcm(toy_corpus(2, 1), small, nullptr), ValidationError);
}

TEST_CASE("correct leaves unflagged frames untouched") {
  MotionFixture fx;
  nn::Rng rng(2);
  auto cfg = fx.cfg;
  cfg.steps = 10;
  const Denoiser model(cfg, fx.norm, rng);
  synth::WalkParams p;
  p.duration = 2.0;
  const auto seq = synth::walk(p);

  const auto same = correct(seq, {}, {}, model, rng);
  REQUIRE(same.sequence.size() == seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    CHECK(same.sequence.frames[t].translation == seq.frames[t].translation);
    CHECK(same.sequence.frames[t].rotations == seq.frames[t].rotations);
  }

  const std::vector<camera::FlawSegment> flaws{{20, 24, 0.1}, {0, 2, 0.2}};
  const auto res = correct(seq, flaws, {}, model, rng);
  REQUIRE(res.segments.size() == 2);
  CHECK(res.segments[0].start == 0);
  CHECK(res.segments[0].one_sided);
  CHECK_FALSE(res.segments[1].one_sided);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const bool flagged = t <= 2 || (t >= 20 && t <= 24);
    const bool equal = res.sequence.frames[t].translation == seq.frames[t].translation &&
                       res.sequence.frames[t].rotations == seq.frames[t].rotations;
    CHECK(equal != flagged);
  }
}

TEST_CASE("checkpoint round trip") {
  MotionFixture fx;
  nn::Rng rng(2);
  const Denoiser model(fx.cfg, fx.norm, rng);
  const auto path = std::filesystem::temp_directory_path() / "pmr_test_mcm.ckpt";
  model.save(path);
  const auto back = Denoiser::load(path);
  CHECK(back.config().to_json() == model.config().to_json());
  CHECK(back.normalizer().mean == model.normalizer().mean);
  const auto pa = model.network().parameters(), pb = back.network().parameters();
  CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  std::filesystem::remove(path);
}

TEST_CASE("trained model repairs a garbage span in a walk") {
  const auto& skel = motion::desk_humanoid();
  const auto clips = synth::corpus(32, 7, {synth::ClipKind::Walk, synth::ClipKind::Jump, synth::ClipKind::Squat,
                                           synth::ClipKind::Kick});
  std::vector<TrainingSequence> corpus;
  for (const auto& c : clips) {
    const auto masks = synth::render_masks(synth::observing_camera(skel, c.seq), skel, c.seq, 16);
    corpus.push_back(motion_training_sequence(c.seq, &masks));
  }
  McmConfig cfg;
  cfg.hidden = {256, 256};
  cfg.train_steps = 300;
  cfg.seed = 3;
  const auto model = train_mcm(corpus, cfg, &skel);

  std::mt19937_64 rng(99);
  double raw = 0, fixed = 0;
  for (int k = 0; k < 3; ++k) {
    synth::WalkParams p;
    p.heading = 0.7 * k;
    p.speed = 0.65 + 0.05 * k;
    p.duration = 3.0;
    const auto truth = synth::walk(p);
    const auto masks = synth::render_masks(synth::observing_camera(skel, truth), skel, truth, 16);
    auto bad = truth;
    const auto fl = synth::inject_flaw(bad, 40, 5, rng);
    nn::Rng r(1);
    const auto res = correct(bad, {{fl.start, fl.end, 0.0}}, masks, model, r);
    for (int t = fl.start; t <= fl.end; ++t) {
      const auto a = motion::forward_kinematics(skel, truth.frames[t]);
      const auto b = motion::forward_kinematics(skel, bad.frames[t]);
      const auto c = motion::forward_kinematics(skel, res.sequence.frames[t]);
      for (std::size_t j = 0; j < skel.joint_count(); ++j) {
        raw += (a.positions[j] - b.positions[j]).norm();
        fixed += (a.positions[j] - c.positions[j]).norm();
      }
    }
    for (std::size_t t = 0; t < bad.size(); ++t) {
      if (int(t) >= fl.start && int(t) <= fl.end) continue;
      CHECK(res.sequence.frames[t].rotations == bad.frames[t].rotations);
    }
  }
  MESSAGE("span error uncorrected " << raw << " corrected " << fixed);
  CHECK(fixed * 5.0 <= raw);
}
