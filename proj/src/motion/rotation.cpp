#include "pmr/motion/rotation.hpp"

#include <algorithm>
#include <cmath>

#include "pmr/error.hpp"

namespace pmr::motion {

namespace {

constexpr double kDegenerateEps = 1e-12;

struct GramSchmidt {
  Vec3 a1, a2;
  double n1 = 0.0;
  double proj = 0.0;  // b1 . a2
  Vec3 u2;
  double n2 = 0.0;
  Vec3 b1, b2, b3;
};

GramSchmidt orthonormalize(const Rot6& r) {
  GramSchmidt gs;
  gs.a1 = r.head<3>();
  gs.a2 = r.tail<3>();
  gs.n1 = gs.a1.norm();
  if (!std::isfinite(gs.n1) || gs.n1 < kDegenerateEps) {
    throw DegenerateRotation("6D rotation has a zero first vector");
  }
  gs.b1 = gs.a1 / gs.n1;
  gs.proj = gs.b1.dot(gs.a2);
  gs.u2 = gs.a2 - gs.proj * gs.b1;
  gs.n2 = gs.u2.norm();
  const double scale = std::max(1.0, gs.a2.norm());
  if (!std::isfinite(gs.n2) || gs.n2 < kDegenerateEps * scale) {
    throw DegenerateRotation("6D rotation vectors are parallel or zero");
  }
  gs.b2 = gs.u2 / gs.n2;
  gs.b3 = gs.b1.cross(gs.b2);
  return gs;
}

// d(u/|u|) applied to an upstream gradient g.
Vec3 normalize_backward(const Vec3& unit, double norm, const Vec3& g) {
  return (g - unit * unit.dot(g)) / norm;
}

}  // namespace

Mat3 rot6d_to_matrix(const Rot6& r) {
  const GramSchmidt gs = orthonormalize(r);
  Mat3 R;
  R.col(0) = gs.b1;
  R.col(1) = gs.b2;
  R.col(2) = gs.b3;
  return R;
}

Rot6 rot6d_to_matrix_backward(const Rot6& r, const Mat3& grad_matrix) {
  const GramSchmidt gs = orthonormalize(r);
  Vec3 g_b1 = grad_matrix.col(0);
  Vec3 g_b2 = grad_matrix.col(1);
  const Vec3 g_b3 = grad_matrix.col(2);
  // b3 = b1 x b2
  g_b1 += gs.b2.cross(g_b3);
  g_b2 += g_b3.cross(gs.b1);
  // b2 = u2 / |u2|
  const Vec3 g_u2 = normalize_backward(gs.b2, gs.n2, g_b2);
  // u2 = a2 - (b1 . a2) b1
  Vec3 g_a2 = g_u2 - gs.b1 * gs.b1.dot(g_u2);
  g_b1 += -gs.proj * g_u2 - gs.a2 * gs.b1.dot(g_u2);
  // b1 = a1 / |a1|
  const Vec3 g_a1 = normalize_backward(gs.b1, gs.n1, g_b1);
  Rot6 out;
  out.head<3>() = g_a1;
  out.tail<3>() = g_a2;
  return out;
}

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Rot6 matrix_to_rot6d(const Mat3& R) {
  if (!is_rotation(R, 1e-6)) {
    throw ValidationError("matrix_to_rot6d: input is not a proper rotation");
  }
  Rot6 r;
  r.head<3>() = R.col(0);
  r.tail<3>() = R.col(1);
  return r;
}

Rot6 identity_rot6d() {
  Rot6 r;
  r << 1, 0, 0, 0, 1, 0;
  return r;
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    return Mat3::Identity() + skew(w);
  }
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Vec3 log_so3(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  // atan2 on (|skew part|, trace part) stays accurate near 0 and pi.
  const Vec3 s(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const double sin_part = 0.5 * s.norm();
  const double cos_part = 0.5 * (rel.trace() - 1.0);
  return std::atan2(sin_part, cos_part);
}

double rotation_difference(const Rot6& a, const Rot6& b) {
  return geodesic_angle(rot6d_to_matrix(a), rot6d_to_matrix(b));
}

}  // namespace pmr::motion
