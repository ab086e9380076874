#include "pmr/mcm/mcm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pmr/error.hpp"
#include "pmr/nn/adam.hpp"
#include "pmr/nn/checkpoint.hpp"

namespace pmr::mcm {

using motion::kFrameDim;

// ---------------------------------------------------------------- schedule

namespace {

DiffusionSchedule from_betas(std::vector<double> beta) {
  DiffusionSchedule s;
  s.steps = static_cast<int>(beta.size()) - 1;
  s.beta = std::move(beta);
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  s.alpha[0] = 1.0;
  s.alpha_bar[0] = 1.0;
  for (std::size_t n = 1; n < s.beta.size(); ++n) {
    s.alpha[n] = 1.0 - s.beta[n];
    s.alpha_bar[n] = s.alpha_bar[n - 1] * s.alpha[n];
  }
  s.validate();
  return s;
}

void check_step(const DiffusionSchedule& s, int n) {
  if (n < 1 || n > s.steps) {
    throw ValidationError("diffusion step " + std::to_string(n) + " outside [1, " + std::to_string(s.steps) + "]");
  }
}

}  // namespace

DiffusionSchedule DiffusionSchedule::cosine(int steps, double offset) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  auto f = [&](double n) {
    const double c = std::cos((n / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> beta(steps + 1, 0.0);
  const double f0 = f(0.0);
  for (int n = 1; n <= steps; ++n) {
    const double b = 1.0 - (f(n) / f0) / (f(n - 1) / f0);
    beta[n] = std::clamp(b, 1e-8, 0.999);
  }
  return from_betas(std::move(beta));
}

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  std::vector<double> beta(steps + 1, 0.0);
  for (int n = 1; n <= steps; ++n) {
    const double u = steps == 1 ? 0.0 : double(n - 1) / (steps - 1);
    beta[n] = beta_start + u * (beta_end - beta_start);
  }
  return from_betas(std::move(beta));
}

void DiffusionSchedule::validate() const {
  const std::size_t size = static_cast<std::size_t>(steps) + 1;
  if (steps < 1 || beta.size() != size || alpha.size() != size || alpha_bar.size() != size) {
    throw ValidationError("schedule arrays do not match the step count");
  }
  for (int n = 1; n <= steps; ++n) {
    if (!(beta[n] > 0.0 && beta[n] < 1.0)) throw ValidationError("beta must lie in (0, 1)");
    if (n > 1 && beta[n] < beta[n - 1]) throw ValidationError("beta must be non-decreasing");
    if (!(alpha_bar[n] < alpha_bar[n - 1])) throw ValidationError("alpha_bar must strictly decrease");
  }
}

double DiffusionSchedule::posterior_x0_coef(int n) const {
  check_step(*this, n);
  return std::sqrt(alpha_bar[n - 1]) * beta[n] / (1.0 - alpha_bar[n]);
}

double DiffusionSchedule::posterior_xn_coef(int n) const {
  check_step(*this, n);
  return std::sqrt(alpha[n]) * (1.0 - alpha_bar[n - 1]) / (1.0 - alpha_bar[n]);
}

double DiffusionSchedule::posterior_variance(int n) const {
  check_step(*this, n);
  return beta[n] * (1.0 - alpha_bar[n - 1]) / (1.0 - alpha_bar[n]);
}

std::vector<double> q_sample(std::span<const double> x0, int n, std::span<const double> noise,
                             const DiffusionSchedule& sched) {
  check_step(sched, n);
  if (noise.size() != x0.size()) throw ShapeError("q_sample: noise and x0 differ in size");
  const double a = std::sqrt(sched.alpha_bar[n]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[n]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

std::vector<double> timestep_embedding(int n, int steps) {
  std::vector<double> e(kTimeEmbeddingDim);
  const double t = double(n) / steps;
  for (std::size_t k = 0; k < kTimeEmbeddingDim / 2; ++k) {
    const double freq = std::pow(2.0, double(k)) * std::numbers::pi;
    e[2 * k] = std::sin(freq * t);
    e[2 * k + 1] = std::cos(freq * t);
  }
  return e;
}

// ---------------------------------------------------------------- masks

std::vector<double> mask_descriptor(const camera::MaskRaster& mask) {
  std::vector<double> d(kDescriptorDim, 0.0);
  if (mask.width <= 0 || mask.height <= 0 || mask.data.size() != std::size_t(mask.width) * mask.height) {
    throw ShapeError("mask_descriptor: raster size does not match its data");
  }
  const double W = mask.width, H = mask.height;
  double count = 0, su = 0, sv = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      count += 1;
      su += (x + 0.5) / W;
      sv += (y + 0.5) / H;
    }
  }
  if (count == 0) return d;

  for (int cy = 0; cy < 8; ++cy) {
    const int y0 = cy * mask.height / 8, y1 = (cy + 1) * mask.height / 8;
    for (int cx = 0; cx < 8; ++cx) {
      const int x0 = cx * mask.width / 8, x1 = (cx + 1) * mask.width / 8;
      double fg = 0;
      const double cells = double(x1 - x0) * (y1 - y0);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) fg += mask.at(x, y);
      }
      d[cy * 8 + cx] = cells > 0 ? fg / cells : 0.0;
    }
  }

  const double mu = su / count, mv = sv / count;
  double m20 = 0, m02 = 0, m11 = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      const double du = (x + 0.5) / W - mu, dv = (y + 0.5) / H - mv;
      m20 += du * du;
      m02 += dv * dv;
      m11 += du * dv;
    }
  }
  m20 /= count;
  m02 /= count;
  m11 /= count;
  d[64] = mu;
  d[65] = mv;
  d[66] = m20;
  d[67] = m02;
  d[68] = m11;
  d[69] = 0.5 * std::atan2(2.0 * m11, m20 - m02) / std::numbers::pi;
  return d;
}

// ---------------------------------------------------------------- normalization

Normalizer Normalizer::fit(const std::vector<std::vector<double>>& rows, double floor) {
  if (rows.empty()) throw ValidationError("normalizer needs at least one row");
  const std::size_t D = rows.front().size();
  Normalizer n;
  n.mean.assign(D, 0.0);
  n.scale.assign(D, 0.0);
  for (const auto& r : rows) {
    if (r.size() != D) throw ShapeError("normalizer rows differ in size");
    for (std::size_t i = 0; i < D; ++i) n.mean[i] += r[i];
  }
  for (double& m : n.mean) m /= double(rows.size());
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < D; ++i) n.scale[i] += (r[i] - n.mean[i]) * (r[i] - n.mean[i]);
  }
  for (double& s : n.scale) s = std::max(std::sqrt(s / double(rows.size())), floor);
  return n;
}

void Normalizer::apply(std::span<double> row) const {
  if (row.size() % dim() != 0) throw ShapeError("normalizer: row size is not a multiple of the dimension");
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean[i % dim()]) / scale[i % dim()];
}

void Normalizer::invert(std::span<double> row) const {
  if (row.size() % dim() != 0) throw ShapeError("normalizer: row size is not a multiple of the dimension");
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = row[i] * scale[i % dim()] + mean[i % dim()];
}

// ---------------------------------------------------------------- windows

namespace {

Mat3 yaw(double h) { return Eigen::AngleAxisd(h, Vec3::UnitZ()).toRotationMatrix(); }

void rotate_root(std::vector<double>& f, const Mat3& R) {
  for (int half = 0; half < 2; ++half) {
    Vec3 v(f[3 + 3 * half], f[4 + 3 * half], f[5 + 3 * half]);
    v = R * v;
    for (int k = 0; k < 3; ++k) f[3 + 3 * half + k] = v[k];
  }
}

}  // namespace

Canonical canonicalize(std::vector<std::vector<double>>& frames, std::size_t ref) {
  if (ref >= frames.size()) throw ShapeError("canonicalize: reference frame out of range");
  for (const auto& f : frames) {
    if (f.size() != kFrameDim) throw ShapeError("canonicalize expects 135-d frames");
  }
  const auto& r = frames[ref];
  // Heading of the root's forward (x) axis; the first 6D vector is that axis.
  Canonical c;
  c.heading = std::atan2(r[4], r[3]);
  c.origin = Vec3(r[0], r[1], 0.0);
  const Mat3 R = yaw(-c.heading);
  for (auto& f : frames) {
    const Vec3 t = R * (Vec3(f[0], f[1], f[2]) - c.origin);
    f[0] = t.x();
    f[1] = t.y();
    f[2] = t.z();
    rotate_root(f, R);
  }
  return c;
}

void uncanonicalize(std::vector<double>& f, const Canonical& c) {
  if (f.size() != kFrameDim) throw ShapeError("uncanonicalize expects a 135-d frame");
  const Mat3 R = yaw(c.heading);
  const Vec3 t = R * Vec3(f[0], f[1], f[2]) + c.origin;
  f[0] = t.x();
  f[1] = t.y();
  f[2] = t.z();
  rotate_root(f, R);
}

void McmConfig::validate() const {
  if (window < 3) throw ValidationError("window must hold at least 3 frames");
  if (steps < 1) throw ValidationError("diffusion steps must be positive");
  if (frame_dim == 0) throw ValidationError("frame_dim must be positive");
  if (!(condition_dropout >= 0.0 && condition_dropout <= 1.0)) throw ValidationError("dropout must be in [0, 1]");
  if (batch < 1) throw ValidationError("batch must be positive");
  if (train_steps < 0) throw ValidationError("train_steps must be non-negative");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (min_gap < 1 || max_gap < min_gap || max_gap > window - 2) {
    throw ValidationError("gap lengths must satisfy 1 <= min_gap <= max_gap <= window - 2");
  }
  for (double l : {lambda_joint, lambda_vel, lambda_acc, lambda_root}) {
    if (!(l >= 0.0)) throw ValidationError("loss weights must be non-negative");
  }
  for (auto h : hidden) {
    if (h == 0) throw ValidationError("hidden layers must be non-empty");
  }
}

nlohmann::json McmConfig::to_json() const {
  return {{"window", window},
          {"steps", steps},
          {"frame_dim", frame_dim},
          {"descriptor_dim", descriptor_dim},
          {"hidden", hidden},
          {"lambda_joint", lambda_joint},
          {"lambda_vel", lambda_vel},
          {"lambda_acc", lambda_acc},
          {"lambda_root", lambda_root},
          {"condition_dropout", condition_dropout},
          {"batch", batch},
          {"train_steps", train_steps},
          {"lr", lr},
          {"min_gap", min_gap},
          {"max_gap", max_gap},
          {"stochastic", stochastic},
          {"seed", seed}};
}

McmConfig McmConfig::from_json(const nlohmann::json& j) {
  McmConfig c;
  try {
    c.window = j.value("window", c.window);
    c.steps = j.value("steps", c.steps);
    c.frame_dim = j.value("frame_dim", c.frame_dim);
    c.descriptor_dim = j.value("descriptor_dim", c.descriptor_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.lambda_joint = j.value("lambda_joint", c.lambda_joint);
    c.lambda_vel = j.value("lambda_vel", c.lambda_vel);
    c.lambda_acc = j.value("lambda_acc", c.lambda_acc);
    c.lambda_root = j.value("lambda_root", c.lambda_root);
    c.condition_dropout = j.value("condition_dropout", c.condition_dropout);
    c.batch = j.value("batch", c.batch);
    c.train_steps = j.value("train_steps", c.train_steps);
    c.lr = j.value("lr", c.lr);
    c.min_gap = j.value("min_gap", c.min_gap);
    c.max_gap = j.value("max_gap", c.max_gap);
    c.stochastic = j.value("stochastic", c.stochastic);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("mcm config: ") + e.what());
  }
  c.validate();
  return c;
}

void CorrectionWindow::validate(const McmConfig& cfg, bool require_context) const {
  const std::size_t W = cfg.window;
  if (x0.size() != W * cfg.frame_dim) throw ShapeError("window values do not match window x frame_dim");
  if (keyframe.size() != W) throw ShapeError("keyframe signal does not match the window");
  if (descriptors.size() != W * cfg.descriptor_dim) throw ShapeError("descriptors do not match the window");
  if (!require_context || null_condition) return;
  // every to-generate run needs a known frame on both sides
  std::size_t i = 0;
  while (i < W) {
    if (keyframe[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < W && !keyframe[j]) ++j;
    if (i == 0 || j == W) throw ValidationError("to-generate run without context on both sides");
    i = j;
  }
}

// ---------------------------------------------------------------- loss

void fk_backward(const motion::Skeleton& skel, std::span<const double> frame, std::span<const Vec3> grad_positions,
                 std::span<double> grad_frame) {
  const std::size_t J = skel.joint_count();
  if (frame.size() != 3 + 6 * J || grad_frame.size() != frame.size() || grad_positions.size() != J) {
    throw ShapeError("fk_backward: sizes do not match the skeleton");
  }
  std::vector<Rot6> r6(J);
  std::vector<Mat3> R(J), Wd(J);
  for (std::size_t j = 0; j < J; ++j) {
    for (int k = 0; k < 6; ++k) r6[j][k] = frame[3 + 6 * j + k];
    R[j] = motion::rot6d_to_matrix(r6[j]);
    Wd[j] = j == 0 ? R[0] : Wd[skel.parent(j)] * R[j];
  }
  std::vector<Vec3> gp(grad_positions.begin(), grad_positions.end());
  std::vector<Mat3> gW(J, Mat3::Zero());
  std::vector<Mat3> gR(J);
  for (std::size_t j = J - 1; j >= 1; --j) {
    const int p = skel.parent(j);
    gp[p] += gp[j];
    gW[p] += gp[j] * skel.joint(j).offset.transpose();
    gW[p] += gW[j] * R[j].transpose();
    gR[j] = Wd[p].transpose() * gW[j];
  }
  gR[0] = gW[0];
  for (int k = 0; k < 3; ++k) grad_frame[k] += gp[0][k];
  for (std::size_t j = 0; j < J; ++j) {
    const Rot6 g = motion::rot6d_to_matrix_backward(r6[j], gR[j]);
    for (int k = 0; k < 6; ++k) grad_frame[3 + 6 * j + k] += g[k];
  }
}

namespace {

// Mean-squared value, first and second difference mismatch between two
// sequences of vectors; adds weighted gradients w.r.t. `a`.
template <class V>
struct DiffTerms {
  double value = 0, vel = 0, acc = 0;
};

template <class V, class Norm2>
DiffTerms<V> diff_terms(const std::vector<V>& a, const std::vector<V>& b, std::size_t W, std::size_t per,
                        double wv, double wd, double wa, std::vector<V>* grad, Norm2 norm2) {
  DiffTerms<V> t;
  const double nv = double(W * per);
  for (std::size_t i = 0; i < W * per; ++i) {
    const V e = a[i] - b[i];
    t.value += norm2(e) / nv;
    if (grad) (*grad)[i] += e * (2.0 * wv / nv);
  }
  if (W >= 2) {
    const double n = double((W - 1) * per);
    for (std::size_t w = 0; w + 1 < W; ++w) {
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t i0 = w * per + k, i1 = (w + 1) * per + k;
        const V e = (a[i1] - a[i0]) - (b[i1] - b[i0]);
        t.vel += norm2(e) / n;
        if (grad) {
          (*grad)[i1] += e * (2.0 * wd / n);
          (*grad)[i0] -= e * (2.0 * wd / n);
        }
      }
    }
  }
  if (W >= 3) {
    const double n = double((W - 2) * per);
    for (std::size_t w = 0; w + 2 < W; ++w) {
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t i0 = w * per + k, i1 = (w + 1) * per + k, i2 = (w + 2) * per + k;
        const V e = (a[i2] - 2.0 * a[i1] + a[i0]) - (b[i2] - 2.0 * b[i1] + b[i0]);
        t.acc += norm2(e) / n;
        if (grad) {
          (*grad)[i2] += e * (2.0 * wa / n);
          (*grad)[i1] -= e * (4.0 * wa / n);
          (*grad)[i0] += e * (2.0 * wa / n);
        }
      }
    }
  }
  return t;
}

}  // namespace

LossTerms mcm_loss(std::span<const double> pred, std::span<const double> target, const McmConfig& cfg,
                   const Normalizer& norm, const motion::Skeleton* skel, std::span<double> grad) {
  const std::size_t W = cfg.window, D = cfg.frame_dim;
  if (pred.empty()) throw ValidationError("mcm_loss: empty batch");
  if (pred.size() != W * D || target.size() != W * D) throw ShapeError("mcm_loss: window size mismatch");
  if (!grad.empty() && grad.size() != W * D) throw ShapeError("mcm_loss: gradient size mismatch");
  if (norm.dim() != D) throw ShapeError("mcm_loss: normalizer dimension mismatch");
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  LossTerms L;
  for (std::size_t i = 0; i < W * D; ++i) {
    const double e = pred[i] - target[i];
    L.recon += e * e / double(W * D);
    if (want_grad) grad[i] += 2.0 * e / double(W * D);
  }
  L.total = L.recon;

  const bool fk = skel && D == kFrameDim && skel->joint_count() * 6 + 3 == D;
  if (!fk) return L;

  std::vector<double> rp(pred.begin(), pred.end()), rt(target.begin(), target.end());
  norm.invert(rp);
  norm.invert(rt);
  const std::size_t J = skel->joint_count();
  std::vector<Vec3> pp(W * J), pt(W * J);
  try {
    for (std::size_t w = 0; w < W; ++w) {
      const auto fp = motion::forward_kinematics(*skel, motion::decode_frame({rp.data() + w * D, D}));
      const auto ft = motion::forward_kinematics(*skel, motion::decode_frame({rt.data() + w * D, D}));
      for (std::size_t j = 0; j < J; ++j) {
        pp[w * J + j] = fp.positions[j];
        pt[w * J + j] = ft.positions[j];
      }
    }
  } catch (const DegenerateRotation&) {
    // a collapsed 6D prediction has no pose; only the value term applies
    return L;
  }

  auto sq = [](const auto& e) { return e.squaredNorm(); };
  std::vector<Vec3> gpos(W * J, Vec3::Zero());
  const auto pos = diff_terms(pp, pt, W, J, cfg.lambda_joint, cfg.lambda_vel, cfg.lambda_acc,
                              want_grad ? &gpos : nullptr, sq);
  L.joint = pos.value;
  L.vel = pos.vel;
  L.acc = pos.acc;

  using Root = Eigen::Matrix<double, 9, 1>;
  std::vector<Root> ap(W), at(W), groot(W, Root::Zero());
  for (std::size_t w = 0; w < W; ++w) {
    for (int k = 0; k < 9; ++k) {
      ap[w][k] = rp[w * D + k];
      at[w][k] = rt[w * D + k];
    }
  }
  const auto root = diff_terms(ap, at, W, 1, cfg.lambda_root, cfg.lambda_root, cfg.lambda_root,
                               want_grad ? &groot : nullptr, sq);
  L.root = root.value + root.vel + root.acc;
  L.total += cfg.lambda_joint * L.joint + cfg.lambda_vel * L.vel + cfg.lambda_acc * L.acc + cfg.lambda_root * L.root;

  if (want_grad) {
    std::vector<double> graw(D);
    for (std::size_t w = 0; w < W; ++w) {
      std::fill(graw.begin(), graw.end(), 0.0);
      fk_backward(*skel, {rp.data() + w * D, D}, {gpos.data() + w * J, J}, graw);
      for (int k = 0; k < 9; ++k) graw[k] += groot[w][k];
      for (std::size_t i = 0; i < D; ++i) grad[w * D + i] += graw[i] * norm.scale[i];
    }
  }
  return L;
}

// ---------------------------------------------------------------- model

namespace {

void overwrite_known(std::span<double> x, const CorrectionWindow& w, std::size_t W, std::size_t D) {
  if (w.null_condition) return;
  for (std::size_t i = 0; i < W; ++i) {
    if (!w.keyframe[i]) continue;
    std::copy_n(w.x0.begin() + i * D, D, x.begin() + i * D);
  }
}

}  // namespace

Denoiser::Denoiser(McmConfig cfg, Normalizer norm, nn::Rng& rng)
    : cfg_(std::move(cfg)), norm_(std::move(norm)), sched_(DiffusionSchedule::cosine(cfg_.steps)) {
  cfg_.validate();
  if (norm_.dim() != cfg_.frame_dim) throw ShapeError("normalizer dimension does not match frame_dim");
  std::vector<std::size_t> sizes{cfg_.input_size()};
  sizes.insert(sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  sizes.push_back(cfg_.output_size());
  net_ = nn::Network::mlp(sizes, nn::Activation::Relu, nn::Activation::Identity, rng);
  net_.scale_output_layer(0.1);
}

std::vector<double> Denoiser::build_input(std::span<const double> x_n, const CorrectionWindow& w, int n) const {
  const std::size_t W = cfg_.window, D = cfg_.frame_dim, Dd = cfg_.descriptor_dim;
  if (x_n.size() != W * D) throw ShapeError("sample does not match the window");
  w.validate(cfg_, false);
  check_step(sched_, n);
  std::vector<double> in(cfg_.input_size());
  const std::size_t F = cfg_.frame_input();
  for (std::size_t i = 0; i < W; ++i) {
    double* row = in.data() + i * F;
    const bool known = !w.null_condition && w.keyframe[i];
    const double* src = known ? w.x0.data() + i * D : x_n.data() + i * D;
    std::copy_n(src, D, row);
    row[D] = known ? 1.0 : 0.0;
    for (std::size_t k = 0; k < Dd; ++k) row[D + 1 + k] = w.null_condition ? 0.0 : w.descriptors[i * Dd + k];
  }
  const auto e = timestep_embedding(n, cfg_.steps);
  std::copy(e.begin(), e.end(), in.begin() + W * F);
  return in;
}

std::vector<double> Denoiser::predict_x0(std::span<const double> x_n, const CorrectionWindow& w, int n) const {
  return net_.forward(build_input(x_n, w, n));
}

std::vector<double> Denoiser::denoise_step(std::span<const double> x_n, const CorrectionWindow& w, int n,
                                           nn::Rng* rng) const {
  const auto x0_hat = predict_x0(x_n, w, n);
  const double c0 = sched_.posterior_x0_coef(n), cn = sched_.posterior_xn_coef(n);
  std::vector<double> out(x_n.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + cn * x_n[i];
  if (rng && n > 1) {
    std::normal_distribution<double> g(0.0, 1.0);
    const double s = std::sqrt(sched_.posterior_variance(n));
    for (double& v : out) v += s * g(*rng);
  }
  overwrite_known(out, w, cfg_.window, cfg_.frame_dim);
  return out;
}

std::vector<double> Denoiser::sample(const CorrectionWindow& w, nn::Rng& rng) const {
  w.validate(cfg_, false);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(cfg_.output_size());
  for (double& v : x) v = g(rng);
  overwrite_known(x, w, cfg_.window, cfg_.frame_dim);
  for (int n = cfg_.steps; n >= 1; --n) x = denoise_step(x, w, n, cfg_.stochastic ? &rng : nullptr);
  return x;
}

void Denoiser::save(const std::filesystem::path& path) const {
  nn::Archive a;
  a.meta = {{"kind", "mcm-denoiser"}, {"config", cfg_.to_json()}};
  a.arrays["norm_mean"] = norm_.mean;
  a.arrays["norm_scale"] = norm_.scale;
  a.put_network("denoiser", net_);
  a.save(path);
}

Denoiser Denoiser::load(const std::filesystem::path& path) {
  const auto a = nn::Archive::load(path);
  if (a.meta.value("kind", std::string()) != "mcm-denoiser") throw IoError(path.string() + ": not an MCM checkpoint");
  Denoiser d;
  d.cfg_ = McmConfig::from_json(a.meta.at("config"));
  d.norm_.mean = a.array("norm_mean");
  d.norm_.scale = a.array("norm_scale");
  d.sched_ = DiffusionSchedule::cosine(d.cfg_.steps);
  d.net_ = a.get_network("denoiser");
  if (d.net_.input_size() != d.cfg_.input_size() || d.net_.output_size() != d.cfg_.output_size() ||
      d.norm_.dim() != d.cfg_.frame_dim) {
    throw IoError(path.string() + ": checkpoint shapes do not match its config");
  }
  return d;
}

std::vector<double> oracle_chain(const DiffusionSchedule& sched, std::span<const double> truth,
                                 std::span<const double> start_noise) {
  if (truth.size() != start_noise.size()) throw ShapeError("oracle_chain: size mismatch");
  std::vector<double> x(start_noise.begin(), start_noise.end());
  for (int n = sched.steps; n >= 1; --n) {
    const double c0 = sched.posterior_x0_coef(n), cn = sched.posterior_xn_coef(n);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = c0 * truth[i] + cn * x[i];
  }
  return x;
}

// ---------------------------------------------------------------- training

namespace {

bool is_motion(const McmConfig& cfg) { return cfg.frame_dim == kFrameDim; }

// Raw window frames starting at `start`, edges repeated past the ends.
std::vector<std::vector<double>> window_frames(const TrainingSequence& s, int start, int W) {
  std::vector<std::vector<double>> out;
  const int T = int(s.frames.size());
  for (int i = 0; i < W; ++i) out.push_back(s.frames[std::clamp(start + i, 0, T - 1)]);
  return out;
}

}  // namespace

Normalizer fit_normalizer(const std::vector<TrainingSequence>& corpus, const McmConfig& cfg) {
  std::vector<std::vector<double>> rows;
  const int W = cfg.window;
  for (const auto& s : corpus) {
    if (s.frames.empty()) continue;
    const int T = int(s.frames.size());
    for (int start = 0; start == 0 || start + W <= T; start += std::max(1, W / 2)) {
      auto f = window_frames(s, start, W);
      if (is_motion(cfg)) canonicalize(f, 0);
      rows.insert(rows.end(), f.begin(), f.end());
    }
  }
  return Normalizer::fit(rows);
}

CorrectionWindow draw_window(const std::vector<TrainingSequence>& corpus, const McmConfig& cfg, const Normalizer& norm,
                             nn::Rng& rng) {
  const int W = cfg.window;
  const std::size_t D = cfg.frame_dim, Dd = cfg.descriptor_dim;
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  const auto& s = corpus[pick(rng)];
  const int T = int(s.frames.size());
  std::uniform_int_distribution<int> start_d(0, std::max(0, T - W));
  const int start = start_d(rng);

  CorrectionWindow w;
  w.keyframe.assign(W, 1);
  std::uniform_int_distribution<int> gap_d(cfg.min_gap, cfg.max_gap);
  const int gap = gap_d(rng);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int g0;
  const double r = u01(rng);
  if (r < 0.05) {
    g0 = 0;  // one-sided: context only after
  } else if (r < 0.10) {
    g0 = W - gap;  // one-sided: context only before
  } else {
    std::uniform_int_distribution<int> pos(1, W - 1 - gap);
    g0 = pos(rng);
  }
  for (int i = g0; i < g0 + gap; ++i) w.keyframe[i] = 0;
  w.null_condition = u01(rng) < cfg.condition_dropout;

  auto frames = window_frames(s, start, W);
  if (is_motion(cfg)) {
    std::size_t ref = 0;
    while (!w.keyframe[ref]) ++ref;
    canonicalize(frames, ref);
  }
  w.x0.reserve(W * D);
  for (auto& f : frames) {
    if (f.size() != D) throw ShapeError("training frame does not match frame_dim");
    norm.apply(f);
    w.x0.insert(w.x0.end(), f.begin(), f.end());
  }
  w.descriptors.assign(W * Dd, 0.0);
  if (!s.descriptors.empty()) {
    for (int i = 0; i < W; ++i) {
      const auto& d = s.descriptors[std::clamp(start + i, 0, T - 1)];
      if (d.size() != Dd) throw ShapeError("descriptor does not match descriptor_dim");
      std::copy(d.begin(), d.end(), w.descriptors.begin() + i * Dd);
    }
  }
  return w;
}

TrainingSequence motion_training_sequence(const motion::MotionSequence& seq,
                                          const std::vector<camera::MaskRaster>* masks) {
  TrainingSequence t;
  for (const auto& f : seq.frames) t.frames.push_back(motion::encode_frame(f));
  if (masks) {
    if (masks->size() != seq.size()) throw ShapeError("one mask per frame required");
    for (const auto& m : *masks) t.descriptors.push_back(mask_descriptor(m));
  }
  return t;
}

Denoiser train_mcm(const std::vector<TrainingSequence>& corpus, const McmConfig& cfg, const motion::Skeleton* skel,
                   TrainReport* report) {
  cfg.validate();
  std::size_t windows = 0;
  for (const auto& s : corpus) {
    if (s.frames.empty()) throw ValidationError("training sequence without frames");
    if (!s.descriptors.empty() && s.descriptors.size() != s.frames.size()) {
      throw ShapeError("training sequence needs one descriptor per frame");
    }
    windows += std::max<std::size_t>(1, s.frames.size() >= std::size_t(cfg.window)
                                            ? s.frames.size() - cfg.window + 1
                                            : 1);
  }
  if (windows < std::size_t(cfg.batch)) throw ValidationError("corpus holds fewer windows than one batch");

  nn::Rng rng(cfg.seed);
  const Normalizer norm = fit_normalizer(corpus, cfg);
  Denoiser model(cfg, norm, rng);
  nn::Network& net = model.network();
  nn::Adam opt(net.parameter_count(), nn::AdamConfig{cfg.lr});

  const std::size_t B = cfg.batch, in = cfg.input_size(), out = cfg.output_size();
  std::vector<double> inputs(B * in), out_grad(B * out), param_grad(net.parameter_count());
  std::vector<CorrectionWindow> batch(B);
  std::uniform_int_distribution<int> step_d(1, cfg.steps);
  std::normal_distribution<double> g(0.0, 1.0);
  nn::ForwardCache cache;
  TrainReport rep;

  for (int it = 0; it < cfg.train_steps; ++it) {
    for (std::size_t b = 0; b < B; ++b) {
      batch[b] = draw_window(corpus, cfg, norm, rng);
      ++rep.draws;
      rep.null_draws += batch[b].null_condition;
      const int n = step_d(rng);
      std::vector<double> noise(out);
      for (double& v : noise) v = g(rng);
      const auto xn = q_sample(batch[b].x0, n, noise, model.schedule());
      const auto x = model.build_input(xn, batch[b], n);
      std::copy(x.begin(), x.end(), inputs.begin() + b * in);
    }
    net.forward(inputs, B, cache);
    const auto pred_all = cache.output();
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto L = mcm_loss(pred_all.subspan(b * out, out), batch[b].x0, cfg, norm, skel, {out_grad.data() + b * out, out});
      loss += L.total / double(B);
    }
    for (double& v : out_grad) v /= double(B);
    std::fill(param_grad.begin(), param_grad.end(), 0.0);
    net.backward(cache, out_grad, param_grad);
    opt.step(net.parameters(), param_grad);
    rep.losses.push_back(loss);
  }
  if (!rep.losses.empty()) {
    rep.initial = rep.losses.front();
    const std::size_t k = std::min<std::size_t>(50, rep.losses.size());
    for (std::size_t i = rep.losses.size() - k; i < rep.losses.size(); ++i) rep.final_mean += rep.losses[i] / double(k);
  }
  if (!net.all_finite()) throw Error("denoiser parameters became non-finite");
  if (report) *report = std::move(rep);
  return model;
}

// ---------------------------------------------------------------- correction

CorrectionResult correct(const motion::MotionSequence& seq, const std::vector<camera::FlawSegment>& flaws,
                         const std::vector<camera::MaskRaster>& masks, const Denoiser& model, nn::Rng& rng) {
  CorrectionResult res;
  res.sequence = seq;
  if (flaws.empty()) return res;
  const auto& cfg = model.config();
  if (cfg.frame_dim != kFrameDim) throw ShapeError("correct needs a motion denoiser");
  const int T = int(seq.size());
  const int W = cfg.window;
  if (T == 0) throw InsufficientFrames("correct: empty sequence");
  if (!masks.empty() && int(masks.size()) != T) throw ShapeError("correct: one mask per frame required");

  std::vector<std::vector<double>> raw;
  for (const auto& f : seq.frames) raw.push_back(motion::encode_frame(f));
  std::vector<std::vector<double>> desc(T, std::vector<double>(cfg.descriptor_dim, 0.0));
  if (!masks.empty() && cfg.descriptor_dim == kDescriptorDim) {
    for (int t = 0; t < T; ++t) desc[t] = mask_descriptor(masks[t]);
  }

  std::vector<char> flawed(T, 0);
  std::vector<camera::FlawSegment> segs = flaws;
  std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (auto& s : segs) {
    if (s.start > s.end || s.end < 0 || s.start >= T) throw ValidationError("flaw segment outside the sequence");
    s.start = std::max(0, s.start);
    s.end = std::min(T - 1, s.end);
    for (int t = s.start; t <= s.end; ++t) flawed[t] = 1;
  }

  const int max_chunk = W - 2;
  for (const auto& s : segs) {
    SegmentReport report{s.start, s.end, s.start == 0 || s.end == T - 1};
    for (int a = s.start; a <= s.end; a += max_chunk) {
      const int b = std::min(s.end, a + max_chunk - 1);
      if (!flawed[a] && !flawed[b]) continue;  // already covered by an overlapping segment
      const int L = b - a + 1;
      const int start = a - (W - L) / 2;

      CorrectionWindow w;
      w.keyframe.assign(W, 1);
      std::vector<std::vector<double>> frames;
      std::vector<int> src(W);
      for (int i = 0; i < W; ++i) {
        src[i] = std::clamp(start + i, 0, T - 1);
        frames.push_back(raw[src[i]]);
        if (flawed[src[i]]) w.keyframe[i] = 0;
      }
      bool before = false, after = false;
      for (int i = 0; i < W; ++i) {
        if (!w.keyframe[i]) continue;
        before |= start + i < a;
        after |= start + i > b;
      }
      report.one_sided |= !(before && after);
      w.null_condition = !(before || after);

      std::size_t ref = 0;
      while (ref < std::size_t(W) && !w.keyframe[ref]) ++ref;
      if (ref == std::size_t(W)) ref = 0;
      const Canonical canon = canonicalize(frames, ref);
      for (auto& f : frames) {
        model.normalizer().apply(f);
        w.x0.insert(w.x0.end(), f.begin(), f.end());
      }
      for (int i = 0; i < W; ++i) w.descriptors.insert(w.descriptors.end(), desc[src[i]].begin(), desc[src[i]].end());

      const auto x = model.sample(w, rng);
      for (int i = 0; i < W; ++i) {
        const int t = start + i;
        if (t < a || t > b) continue;
        std::vector<double> f(x.begin() + i * kFrameDim, x.begin() + (i + 1) * kFrameDim);
        model.normalizer().invert(f);
        uncanonicalize(f, canon);
        raw[t] = f;
        res.sequence.frames[t] = motion::decode_frame(f);
        flawed[t] = 0;
      }
    }
    res.segments.push_back(report);
  }
  return res;
}

}  // namespace pmr::mcm
